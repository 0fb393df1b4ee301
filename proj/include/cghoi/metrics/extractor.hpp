#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cghoi/diffkit/ops.hpp"
#include "cghoi/diffkit/params.hpp"
#include "cghoi/repr/normalizer.hpp"
#include "cghoi/repr/sequence.hpp"

namespace cghoi::metrics {

using diffkit::ParamStore;
using diffkit::Shape;
using diffkit::Tape;
using diffkit::Tensor;
using diffkit::Var;

inline constexpr std::size_t kFeatureDim = 64;
inline constexpr double kTemperature = 0.07;

// Symmetric contrastive loss over a square similarity matrix whose diagonal
// holds the matched pairs: mean of row-wise and column-wise cross-entropy.
inline Var symmetric_info_nce(Var logits) {
  const Tensor& x = logits.value();
  diffkit::detail::require_rank2("symmetric_info_nce", x.shape());
  const std::size_t n = x.rows();
  if (x.cols() != n || n == 0) throw ShapeError("symmetric_info_nce needs a square, nonempty matrix");
  Tensor prow(x.shape()), pcol(x.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(x.at(i, j)));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x.at(i, j) - mx);
    for (std::size_t j = 0; j < n; ++j) prow[i * n + j] = static_cast<float>(std::exp(x.at(i, j) - mx) / z);
    loss += -(x.at(i, i) - mx - std::log(z));
  }
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -1e300;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(x.at(i, j)));
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(x.at(i, j) - mx);
    for (std::size_t i = 0; i < n; ++i) pcol[i * n + j] = static_cast<float>(std::exp(x.at(i, j) - mx) / z);
    loss += -(x.at(j, j) - mx - std::log(z));
  }
  loss /= 2.0 * static_cast<double>(n);
  return logits.tape->record(Tensor::scalar(static_cast<float>(loss)), {logits},
                             [logits, n, prow = std::move(prow), pcol = std::move(pcol)](Tape& t, const Tensor& g) {
                               Tensor& gx = t.grad_buffer(logits);
                               const float s = g[0] / (2.0f * static_cast<float>(n));
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < n; ++j) {
                                   const float eye = i == j ? 2.0f : 0.0f;
                                   gx[i * n + j] += s * (prow[i * n + j] + pcol[i * n + j] - eye);
                                 }
                               }
                             });
}

// One motion encoder (over the full 216 channels or the 79 body channels)
// and one text encoder, both ending in unit-norm 64-d features.
class Extractor {
 public:
  static constexpr std::size_t kHidden = 64;

  Extractor(std::size_t channels, std::size_t vocab, std::uint64_t seed) : channels_(channels), vocab_(vocab) {
    if (channels != repr::kFrameWidth && channels != body::kParamDims) {
      throw ValidationError("extractor input must be 216 or 79 channels");
    }
    if (vocab == 0) throw ValidationError("extractor vocabulary is empty");
    Rng rng(seed);
    auto w = [&](const std::string& name, std::size_t in, std::size_t out) {
      params_.add(name, Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
    };
    w("motion/conv1_w", 3 * channels, kHidden);
    params_.add("motion/conv1_b", Tensor({kHidden}));
    w("motion/conv2_w", 3 * kHidden, kHidden);
    params_.add("motion/conv2_b", Tensor({kHidden}));
    w("motion/proj_w", kHidden, kFeatureDim);
    params_.add("motion/proj_b", Tensor({kFeatureDim}));
    params_.add("text/embed", Tensor::randn({vocab, kHidden}, rng, 1.0));
    w("text/proj_w", kHidden, kFeatureDim);
    params_.add("text/proj_b", Tensor({kFeatureDim}));
  }

  std::size_t channels() const { return channels_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  repr::Normalizer& normalizer() { return norm_; }

  // frames: raw [F,216]; only the first `channels` are read.
  Var encode_motion(Tape& t, const Tensor& frames) const {
    using namespace diffkit;
    if (frames.rank() != 2 || frames.cols() != repr::kFrameWidth || frames.rows() == 0) {
      throw ShapeError("extractor expects [F,216] frames, got " + shape_str(frames.shape()));
    }
    Tensor x({frames.rows(), channels_});
    for (std::size_t f = 0; f < frames.rows(); ++f) {
      for (std::size_t c = 0; c < channels_; ++c) {
        x[f * channels_ + c] =
            static_cast<float>((frames[f * repr::kFrameWidth + c] - norm_.mean[c]) / norm_.stddev[c]);
      }
    }
    Var h = silu(conv1d(t.constant(std::move(x)), p(t, "motion/conv1_w"), p(t, "motion/conv1_b")));
    h = silu(conv1d(h, p(t, "motion/conv2_w"), p(t, "motion/conv2_b")));
    return l2_normalize_rows(linear(mean_rows(h), p(t, "motion/proj_w"), p(t, "motion/proj_b")));
  }

  Var encode_text(Tape& t, std::vector<std::uint32_t> tokens) const {
    using namespace diffkit;
    for (std::uint32_t id : tokens) {
      if (id >= vocab_) throw ValidationError("token id outside the extractor vocabulary");
    }
    std::sort(tokens.begin(), tokens.end());
    Var e = mean_rows(embedding(p(t, "text/embed"), tokens));
    return l2_normalize_rows(linear(e, p(t, "text/proj_w"), p(t, "text/proj_b")));
  }

  Tensor motion_features(const std::vector<const Tensor*>& frames) const {
    Tensor out({frames.size(), kFeatureDim});
    for (std::size_t i = 0; i < frames.size(); ++i) {
      Tape t(false);
      const Tensor f = encode_motion(t, *frames[i]).value();
      std::copy(f.data(), f.data() + kFeatureDim, out.data() + i * kFeatureDim);
    }
    return out;
  }

  Tensor text_features(const std::vector<std::vector<std::uint32_t>>& texts) const {
    Tensor out({texts.size(), kFeatureDim});
    for (std::size_t i = 0; i < texts.size(); ++i) {
      Tape t(false);
      const Tensor f = encode_text(t, texts[i]).value();
      std::copy(f.data(), f.data() + kFeatureDim, out.data() + i * kFeatureDim);
    }
    return out;
  }

 private:
  Var p(Tape& t, const std::string& name) const { return t.param(params_.get(name)); }

  std::size_t channels_;
  std::size_t vocab_;
  ParamStore params_;
  repr::Normalizer norm_;
};

struct ExtractorConfig {
  std::size_t steps = 300;
  std::size_t batch = 16;  // capped by the number of distinct texts
  float learning_rate = 2e-3f;
  std::uint64_t seed = 0;
};

// Both extractors of the evaluation protocol.
struct ExtractorPair {
  Extractor full;   // 216 channels
  Extractor human;  // 79 body channels
};

// Contrastive training over in-batch negatives. Each batch holds sequences
// with distinct texts so that no negative shares the positive's caption.
inline void train_extractor(Extractor& ex, const std::vector<const repr::Sequence*>& seqs, const ExtractorConfig& cfg) {
  std::map<std::string, std::vector<std::size_t>> by_text;
  for (std::size_t i = 0; i < seqs.size(); ++i) by_text[seqs[i]->text].push_back(i);
  const std::size_t batch = std::min(cfg.batch, by_text.size());
  if (seqs.size() < cfg.batch || batch < 2) {
    throw ValidationError("extractor training needs at least " + std::to_string(std::max<std::size_t>(cfg.batch, 2)) +
                          " sequences with 2 or more distinct texts");
  }
  std::vector<const Tensor*> all;
  for (const auto* s : seqs) all.push_back(&s->frames);
  ex.normalizer() = repr::fit_normalizer(all);

  std::vector<std::vector<std::size_t>> groups;
  for (auto& [text, idx] : by_text) groups.push_back(idx);
  Rng rng(mix_seed(cfg.seed, 0xe7));
  diffkit::Adam adam(ex.params(), {cfg.learning_rate, 0.9f, 0.999f, 1e-8f});
  const float inv_temp = static_cast<float>(1.0 / kTemperature);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    // distinct text groups, one sequence from each
    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    Tape t;
    std::vector<Var> motion, text;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& g = groups[order[b]];
      const repr::Sequence* s = seqs[g[rng.index(g.size())]];
      motion.push_back(ex.encode_motion(t, s->frames));
      text.push_back(ex.encode_text(t, s->cond.tokens));
    }
    Var logits = diffkit::scale(diffkit::matmul_nt(diffkit::concat(motion, 0), diffkit::concat(text, 0)), inv_temp);
    Var loss = symmetric_info_nce(logits);
    t.backward(loss);
    diffkit::Gradients grads = diffkit::zero_gradients(ex.params());
    diffkit::accumulate_gradients(t, ex.params(), grads);
    adam.step(ex.params(), grads);
  }
}

inline ExtractorPair train_extractors(const std::vector<const repr::Sequence*>& seqs, std::size_t vocab,
                                      const ExtractorConfig& cfg) {
  ExtractorPair pair{Extractor(repr::kFrameWidth, vocab, mix_seed(cfg.seed, 1)),
                     Extractor(body::kParamDims, vocab, mix_seed(cfg.seed, 2))};
  train_extractor(pair.full, seqs, cfg);
  train_extractor(pair.human, seqs, cfg);
  return pair;
}

}  // namespace cghoi::metrics
