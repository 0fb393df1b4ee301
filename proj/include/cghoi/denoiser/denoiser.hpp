#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cghoi/body/body.hpp"
#include "cghoi/diffkit/ops.hpp"
#include "cghoi/diffkit/params.hpp"
#include "cghoi/repr/frame.hpp"
#include "cghoi/repr/normalizer.hpp"
#include "cghoi/repr/objects.hpp"
#include "cghoi/repr/text.hpp"
#include "cghoi/rng.hpp"

namespace cghoi::denoiser {

using diffkit::ParamStore;
using diffkit::Shape;
using diffkit::Tape;
using diffkit::Tensor;
using diffkit::Var;

inline constexpr std::size_t kMarkers = body::kMarkerCount;
inline constexpr std::size_t kBodyDims = body::kParamDims;
inline constexpr std::size_t kObjectDims = repr::kObjectDims;
inline constexpr std::size_t kHypothesisWidth = kMarkers * kObjectDims;

struct DenoiserConfig {
  std::size_t latent = 256;
  std::size_t heads = 4;
  std::size_t time_dim = 128;
  std::size_t vocab = 1;
  std::size_t groups = 8;
  std::size_t steps = 100;  // diffusion steps; bounds the accepted t
  bool contact_weighting = true;

  void validate() const {
    if (latent == 0 || heads == 0 || latent % heads != 0) throw ValidationError("latent must be divisible by heads");
    if (groups == 0 || latent % groups != 0) throw ValidationError("latent must be divisible by the group count");
    if (time_dim == 0 || time_dim % 2 != 0) throw ValidationError("time embedding size must be even");
    if (vocab == 0 || vocab > repr::Vocabulary::kMaxSize) throw ValidationError("vocabulary size out of range");
    if (steps < 2) throw ValidationError("diffusion needs at least 2 steps");
  }
};

// Text tokens plus the canonical object cloud, or the masked (null)
// condition used for classifier-free guidance.
struct Condition {
  std::vector<std::uint32_t> tokens;
  Tensor cloud;  // [256, 3]
  bool masked = false;

  static Condition null() {
    Condition c;
    c.masked = true;
    return c;
  }
};

inline Tensor cloud_tensor(const geom::PointCloud& cloud) {
  Tensor t({cloud.size(), 3});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) t[i * 3 + static_cast<std::size_t>(k)] = static_cast<float>(cloud.points[i][k]);
  }
  return t;
}

struct DenoiserOutput {
  Var body;        // [F, 79]
  Var contact;     // [F, 128]
  Var hypotheses;  // [F, 128*9]; unset when contact weighting is off
  Var object;      // [F, 9]
  bool has_hypotheses = false;

  // Flattened x0 prediction in frame layout, [F, 216].
  Var flat() const { return diffkit::concat({body, contact, object}, 1); }
};

// ---------------------------------------------------------------------------
// Contact-weighted hypothesis aggregation

namespace detail {

inline float sign_of(float x) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); }

}  // namespace detail

// hyps [F, M*9] (marker-major), contact [F, M]. Per frame, marker j gets
// weight max_k|c_k| - |c_j| with c = contact * scale + shift (denormalized
// distances); the output is the weight-normalized sum of hypotheses, or
// their plain mean when every weight vanishes.
inline Var aggregate_hypotheses(Var hyps, Var contact, const std::vector<double>& scale = {},
                                const std::vector<double>& shift = {}) {
  const Tensor& hv = hyps.value();
  const Tensor& cv = contact.value();
  diffkit::detail::require_rank2("aggregate_hypotheses", hv.shape());
  diffkit::detail::require_rank2("aggregate_hypotheses", cv.shape());
  const std::size_t frames = cv.rows(), m = cv.cols();
  diffkit::detail::require(hv.rows() == frames && hv.cols() == m * kObjectDims, "aggregate_hypotheses", hv.shape(),
                           cv.shape());
  if ((!scale.empty() && scale.size() != m) || (!shift.empty() && shift.size() != m)) {
    throw ShapeError("aggregate_hypotheses: denormalization size must equal the marker count");
  }
  auto denorm = [&](std::size_t j, float c) {
    return static_cast<float>(c * (scale.empty() ? 1.0 : scale[j]) + (shift.empty() ? 0.0 : shift[j]));
  };

  Tensor out({frames, kObjectDims});
  std::vector<float> weights(frames * m);
  std::vector<float> totals(frames);
  std::vector<std::size_t> argmax(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    float mx = -1.0f;
    for (std::size_t j = 0; j < m; ++j) {
      const float a = std::abs(denorm(j, cv[f * m + j]));
      if (a > mx) {
        mx = a;
        argmax[f] = j;
      }
    }
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const float w = mx - std::abs(denorm(j, cv[f * m + j]));
      weights[f * m + j] = w;
      total += w;
    }
    totals[f] = static_cast<float>(total);
    const bool fallback = total < 1e-8;
    for (std::size_t k = 0; k < kObjectDims; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        acc += (fallback ? 1.0 : weights[f * m + j]) * hv[f * m * kObjectDims + j * kObjectDims + k];
      }
      out[f * kObjectDims + k] = static_cast<float>(acc / (fallback ? static_cast<double>(m) : total));
    }
  }

  Tensor saved_out = out;
  return hyps.tape->record(
      std::move(out), {hyps, contact},
      [hyps, contact, frames, m, scale, shift, weights = std::move(weights), totals = std::move(totals),
       argmax = std::move(argmax), saved_out = std::move(saved_out)](Tape& t, const Tensor& g) {
        const Tensor& hv = t.value(hyps.id);
        const Tensor& cv = t.value(contact.id);
        Tensor* gh = t.requires_grad(hyps) ? &t.grad_buffer(hyps) : nullptr;
        Tensor* gc = t.requires_grad(contact) ? &t.grad_buffer(contact) : nullptr;
        for (std::size_t f = 0; f < frames; ++f) {
          const bool fallback = totals[f] < 1e-8f;
          const float* gout = g.data() + f * kObjectDims;
          if (fallback) {
            if (gh) {
              for (std::size_t j = 0; j < m; ++j)
                for (std::size_t k = 0; k < kObjectDims; ++k)
                  (*gh)[f * m * kObjectDims + j * kObjectDims + k] += gout[k] / static_cast<float>(m);
            }
            continue;
          }
          const float inv = 1.0f / totals[f];
          double sum_gw = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            const float w = weights[f * m + j];
            double gw = 0.0;
            for (std::size_t k = 0; k < kObjectDims; ++k) {
              const std::size_t idx = f * m * kObjectDims + j * kObjectDims + k;
              if (gh) (*gh)[idx] += gout[k] * w * inv;
              gw += gout[k] * (hv[idx] - saved_out[f * kObjectDims + k]);
            }
            gw *= inv;
            sum_gw += gw;
            if (gc) {
              const double sc = scale.empty() ? 1.0 : scale[j];
              const double cd = cv[f * m + j] * sc + (shift.empty() ? 0.0 : shift[j]);
              (*gc)[f * m + j] -= static_cast<float>(gw * detail::sign_of(static_cast<float>(cd)) * sc);
            }
          }
          if (gc) {
            const std::size_t a = argmax[f];
            const double sc = scale.empty() ? 1.0 : scale[a];
            const double cd = cv[f * m + a] * sc + (shift.empty() ? 0.0 : shift[a]);
            (*gc)[f * m + a] += static_cast<float>(sum_gw * detail::sign_of(static_cast<float>(cd)) * sc);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionWeights {
  Var wq, wk, wv, wo;
};

// Multi-head scaled dot-product attention, output projection, residual.
// `probs`, when given, receives each head's softmax matrix.
inline Var multi_head_attention(Var query_feat, Var kv_feat, const AttentionWeights& w, std::size_t heads,
                                std::vector<Tensor>* probs = nullptr) {
  using namespace diffkit;
  diffkit::detail::require_rank2("attention", query_feat.shape());
  diffkit::detail::require_rank2("attention", kv_feat.shape());
  const std::size_t d = query_feat.shape()[1];
  if (kv_feat.shape()[1] != d) throw ShapeError("attention: query and key features differ in width");
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  Var q = matmul(query_feat, w.wq);
  Var k = matmul(kv_feat, w.wk);
  Var v = matmul(kv_feat, w.wv);
  const float inv = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
    Var kh = heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
    Var vh = heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
    Var a = softmax(scale(matmul_nt(qh, kh), inv), 1);
    if (probs) probs->push_back(a.value());
    outs.push_back(matmul(a, vh));
  }
  Var merged = heads == 1 ? outs[0] : concat(outs, 1);
  return add(query_feat, matmul(merged, w.wo));
}

// Features ordered (human, contact, object). Each modality queries the
// row-concatenation of the other two; all three read pre-update features.
inline std::array<Var, 3> cross_attention_block(const std::array<Var, 3>& x, const std::array<AttentionWeights, 3>& w,
                                                std::size_t heads) {
  for (std::size_t s = 1; s < 3; ++s) {
    if (x[s].shape() != x[0].shape()) {
      throw ShapeError("cross_attention_block: feature shapes differ: " + diffkit::shape_str(x[0].shape()) + " vs " +
                       diffkit::shape_str(x[s].shape()));
    }
  }
  std::array<Var, 3> out;
  for (std::size_t s = 0; s < 3; ++s) {
    out[s] = multi_head_attention(x[s], diffkit::concat({x[(s + 1) % 3], x[(s + 2) % 3]}, 0), w[s], heads);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network

class Denoiser {
 public:
  static constexpr std::size_t kPointHidden1 = 64;
  static constexpr std::size_t kPointHidden2 = 128;
  static constexpr std::size_t kBlocks = 5;  // down 0, down 1, bottleneck, up 1, up 0

  Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    init(seed);
  }

  // Adopts stored weights; every expected tensor must be present with the
  // expected shape.
  Denoiser(DenoiserConfig cfg, const ParamStore& stored) : cfg_(cfg) {
    cfg_.validate();
    init(0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::string& name = params_.name(i);
      if (!stored.contains(name)) throw ValidationError("checkpoint lacks parameter " + name);
      const Tensor& t = stored.get(name);
      if (t.shape() != params_.at(i).shape()) {
        throw ValidationError("checkpoint parameter " + name + " has shape " + diffkit::shape_str(t.shape()) +
                              ", expected " + diffkit::shape_str(params_.at(i).shape()));
      }
      if (!t.all_finite()) throw ValidationError("checkpoint parameter " + name + " is not finite");
      params_.at(i) = t;
    }
  }

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Contact denormalization used inside the aggregation.
  void set_contact_normalization(const repr::Normalizer& n) {
    contact_scale_.assign(n.stddev.begin() + repr::kContactOffset, n.stddev.begin() + repr::kObjectOffset);
    contact_shift_.assign(n.mean.begin() + repr::kContactOffset, n.mean.begin() + repr::kObjectOffset);
  }

  Var p(Tape& t, const std::string& name) const { return t.param(params_.get(name)); }

  // embedding -> mean over tokens -> linear; empty input pools to zeros.
  Var encode_text(Tape& t, const std::vector<std::uint32_t>& tokens) const {
    for (std::uint32_t id : tokens) {
      if (id >= cfg_.vocab) throw ValidationError("token id " + std::to_string(id) + " outside the vocabulary");
    }
    // pooled in sorted order so the result is exactly order-invariant
    std::vector<std::uint32_t> sorted = tokens;
    std::sort(sorted.begin(), sorted.end());
    Var e = diffkit::embedding(p(t, "text/embed"), sorted);
    return diffkit::linear(diffkit::mean_rows(e), p(t, "text/proj_w"), p(t, "text/proj_b"));
  }

  // Shared per-point MLP -> max over points -> linear.
  Var encode_geometry(Tape& t, const Tensor& cloud) const {
    if (cloud.shape() != Shape{repr::kCloudSize, 3}) {
      throw ValidationError("object cloud must be [256,3], got " + diffkit::shape_str(cloud.shape()));
    }
    using namespace diffkit;
    Var x = t.constant(cloud);
    Var h = relu(linear(x, p(t, "geom/w1"), p(t, "geom/b1")));
    h = relu(linear(h, p(t, "geom/w2"), p(t, "geom/b2")));
    h = linear(h, p(t, "geom/w3"), p(t, "geom/b3"));
    return linear(max_rows(h), p(t, "geom/proj_w"), p(t, "geom/proj_b"));
  }

  // Condition vector added to the time embedding, [1, d].
  Var condition_embedding(Tape& t, const Condition& c) const {
    using namespace diffkit;
    Var text = c.masked ? reshape(p(t, "null/text"), {1, cfg_.latent}) : encode_text(t, c.tokens);
    Var geom = c.masked ? reshape(p(t, "null/geom"), {1, cfg_.latent}) : encode_geometry(t, c.cloud);
    return linear(concat({text, geom}, 1), p(t, "cond/w"), p(t, "cond/b"));
  }

  Tensor sinusoid(std::size_t step) const {
    const std::size_t half = cfg_.time_dim / 2;
    Tensor s({1, cfg_.time_dim});
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      s[k] = static_cast<float>(std::sin(static_cast<double>(step) * freq));
      s[half + k] = static_cast<float>(std::cos(static_cast<double>(step) * freq));
    }
    return s;
  }

  // z [F, 216] normalized; cond_emb [1, d] from condition_embedding.
  DenoiserOutput denoise(Tape& t, Var z, std::size_t step, Var cond_emb) const {
    using namespace diffkit;
    const Tensor& zv = z.value();
    if (zv.rank() != 2 || zv.cols() != repr::kFrameWidth) {
      throw ShapeError("denoise expects [F,216], got " + shape_str(zv.shape()));
    }
    const std::size_t frames = zv.rows();
    if (frames == 0 || frames % 4 != 0) throw ValidationError("frame count must be a positive multiple of 4");
    if (step >= cfg_.steps) throw ValidationError("diffusion step " + std::to_string(step) + " out of range");
    if (!zv.all_finite()) throw ValidationError("denoise input is not finite");
    if (cond_emb.shape() != Shape{1, cfg_.latent}) throw ShapeError("condition embedding must be [1,latent]");

    Var temb = linear(t.constant(sinusoid(step)), p(t, "time/w1"), p(t, "time/b1"));
    temb = linear(silu(temb), p(t, "time/w2"), p(t, "time/b2"));
    Var emb = silu(add(temb, cond_emb));

    std::array<Var, 3> x = {
        conv1d(slice(z, 1, repr::kBodyOffset, repr::kContactOffset), p(t, "h/in_w"), p(t, "h/in_b")),
        conv1d(slice(z, 1, repr::kContactOffset, repr::kObjectOffset), p(t, "c/in_w"), p(t, "c/in_b")),
        conv1d(slice(z, 1, repr::kObjectOffset, repr::kFrameWidth), p(t, "o/in_w"), p(t, "o/in_b"))};

    std::array<Var, 3> skip0, skip1;
    auto level = [&](std::size_t b) {
      for (std::size_t s = 0; s < 3; ++s) x[s] = res_block(t, stream_name(s), b, x[s], emb);
      x = cross_attention(t, b, x);
    };
    level(0);
    skip0 = x;
    for (auto& v : x) v = avg_pool2(v);
    level(1);
    skip1 = x;
    for (auto& v : x) v = avg_pool2(v);
    level(2);
    for (std::size_t s = 0; s < 3; ++s) x[s] = concat({upsample2(x[s]), skip1[s]}, 1);
    level(3);
    for (std::size_t s = 0; s < 3; ++s) x[s] = concat({upsample2(x[s]), skip0[s]}, 1);
    level(4);

    DenoiserOutput out;
    out.body = linear(silu(x[0]), p(t, "head/body_w"), p(t, "head/body_b"));
    out.contact = linear(silu(x[1]), p(t, "head/contact_w"), p(t, "head/contact_b"));
    if (cfg_.contact_weighting) {
      out.hypotheses = linear(silu(x[2]), p(t, "head/hyp_w"), p(t, "head/hyp_b"));
      out.has_hypotheses = true;
      out.object = aggregate_hypotheses(out.hypotheses, out.contact, contact_scale_, contact_shift_);
    } else {
      out.object = linear(silu(x[2]), p(t, "head/obj_w"), p(t, "head/obj_b"));
    }
    return out;
  }

  DenoiserOutput denoise(Tape& t, Var z, std::size_t step, const Condition& c) const {
    return denoise(t, z, step, condition_embedding(t, c));
  }

  std::array<Var, 3> cross_attention(Tape& t, std::size_t block, const std::array<Var, 3>& x) const {
    std::array<AttentionWeights, 3> w;
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string pre = "attn" + std::to_string(block) + "/" + stream_name(s);
      w[s] = {p(t, pre + "/wq"), p(t, pre + "/wk"), p(t, pre + "/wv"), p(t, pre + "/wo")};
    }
    return cross_attention_block(x, w, cfg_.heads);
  }

  static std::string stream_name(std::size_t s) { return s == 0 ? "h" : s == 1 ? "c" : "o"; }

 private:
  Var res_block(Tape& t, const std::string& stream, std::size_t b, Var x, Var emb) const {
    using namespace diffkit;
    const std::string pre = stream + "/b" + std::to_string(b);
    Var h = silu(group_norm(x, cfg_.groups, p(t, pre + "/gn1_g"), p(t, pre + "/gn1_b")));
    h = conv1d(h, p(t, pre + "/conv1_w"), p(t, pre + "/conv1_b"));
    h = add_row(h, linear(emb, p(t, pre + "/emb_w"), p(t, pre + "/emb_b")));
    h = silu(group_norm(h, cfg_.groups, p(t, pre + "/gn2_g"), p(t, pre + "/gn2_b")));
    h = conv1d(h, p(t, pre + "/conv2_w"), p(t, pre + "/conv2_b"));
    Var shortcut = x.shape()[1] == cfg_.latent ? x : matmul(x, p(t, pre + "/skip_w"));
    return add(shortcut, h);
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t d = cfg_.latent;
    auto w = [&](const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
      params_.add(name, Tensor::randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
    };
    auto b = [&](const std::string& name, std::size_t n, float v = 0.0f) { params_.add(name, Tensor({n}, v)); };

    params_.add("text/embed", Tensor::randn({cfg_.vocab, d}, rng, 1.0));
    w("text/proj_w", d, d);
    b("text/proj_b", d);
    w("geom/w1", 3, kPointHidden1);
    b("geom/b1", kPointHidden1);
    w("geom/w2", kPointHidden1, kPointHidden2);
    b("geom/b2", kPointHidden2);
    w("geom/w3", kPointHidden2, d);
    b("geom/b3", d);
    w("geom/proj_w", d, d);
    b("geom/proj_b", d);
    params_.add("null/text", Tensor::randn({d}, rng, 1.0));
    params_.add("null/geom", Tensor::randn({d}, rng, 1.0));
    w("cond/w", 2 * d, d);
    b("cond/b", d);
    w("time/w1", cfg_.time_dim, d);
    b("time/b1", d);
    w("time/w2", d, d);
    b("time/b2", d);

    const std::array<std::size_t, 3> in_dims = {kBodyDims, kMarkers, kObjectDims};
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string sn = stream_name(s);
      w(sn + "/in_w", 3 * in_dims[s], d);
      b(sn + "/in_b", d);
      for (std::size_t blk = 0; blk < kBlocks; ++blk) {
        const std::string pre = sn + "/b" + std::to_string(blk);
        const std::size_t cin = blk >= 3 ? 2 * d : d;
        b(pre + "/gn1_g", cin, 1.0f);
        b(pre + "/gn1_b", cin);
        w(pre + "/conv1_w", 3 * cin, d);
        b(pre + "/conv1_b", d);
        w(pre + "/emb_w", d, d);
        b(pre + "/emb_b", d);
        b(pre + "/gn2_g", d, 1.0f);
        b(pre + "/gn2_b", d);
        w(pre + "/conv2_w", 3 * d, d, 0.5);
        b(pre + "/conv2_b", d);
        if (cin != d) w(pre + "/skip_w", cin, d);
      }
    }
    for (std::size_t blk = 0; blk < kBlocks; ++blk) {
      for (std::size_t s = 0; s < 3; ++s) {
        const std::string pre = "attn" + std::to_string(blk) + "/" + stream_name(s);
        w(pre + "/wq", d, d);
        w(pre + "/wk", d, d);
        w(pre + "/wv", d, d);
        w(pre + "/wo", d, d, 0.5);
      }
    }
    w("head/body_w", d, kBodyDims, 0.5);
    b("head/body_b", kBodyDims);
    w("head/contact_w", d, kMarkers, 0.5);
    b("head/contact_b", kMarkers);
    if (cfg_.contact_weighting) {
      w("head/hyp_w", d, kHypothesisWidth, 0.5);
      b("head/hyp_b", kHypothesisWidth);
    } else {
      w("head/obj_w", d, kObjectDims, 0.5);
      b("head/obj_b", kObjectDims);
    }
  }

  DenoiserConfig cfg_;
  ParamStore params_;
  std::vector<double> contact_scale_, contact_shift_;
};

}  // namespace cghoi::denoiser
