#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>

#include "cghoi/diffkit/params.hpp"
#include "cghoi/diffusion/schedule.hpp"
#include "cghoi/repr/sequence.hpp"
#include "cghoi/train/model.hpp"

namespace cghoi::train {

using diffkit::Tape;
using diffkit::Var;

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t steps = 5000;
  float learning_rate = 1e-4f;
  double lambda_h = 1.0;
  double lambda_o = 0.9;
  double lambda_c = 0.9;
  double cond_dropout = 0.1;
  std::uint64_t seed = 0;
  std::size_t validation_every = 0;  // 0 disables validation
  std::size_t log_every = 1;

  void validate() const {
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (steps == 0) throw ValidationError("steps must be positive");
    if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be > 0");
    if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) throw ValidationError("cond_dropout must lie in [0,1]");
    for (double l : {lambda_h, lambda_o, lambda_c}) {
      if (!std::isfinite(l) || l < 0.0) throw ValidationError("loss weights must be finite and >= 0");
    }
    if (log_every == 0) throw ValidationError("log_every must be positive");
  }
};

struct LossTerms {
  Var total;
  double body = 0.0;
  double object = 0.0;
  double contact = 0.0;
};

// lambda_h L1(body) + lambda_o L1(aggregated object) + lambda_c MSE(contact),
// each mean-reduced over its channels; `gt` is a normalized [F,216] frame
// block on the same tape.
inline LossTerms joint_loss(const denoiser::DenoiserOutput& pred, Var gt, double lambda_h = 1.0,
                            double lambda_o = 0.9, double lambda_c = 0.9) {
  using namespace diffkit;
  const Shape& gs = gt.shape();
  if (gs.size() != 2 || gs[1] != repr::kFrameWidth || pred.body.shape() != Shape{gs[0], body::kParamDims} ||
      pred.contact.shape() != Shape{gs[0], body::kMarkerCount} ||
      pred.object.shape() != Shape{gs[0], repr::kObjectDims}) {
    throw ShapeError("joint_loss: prediction does not match ground truth " + shape_str(gs));
  }
  Var lh = mean(abs(sub(pred.body, slice(gt, 1, repr::kBodyOffset, repr::kContactOffset))));
  Var lo = mean(abs(sub(pred.object, slice(gt, 1, repr::kObjectOffset, repr::kFrameWidth))));
  Var lc = mean(square(sub(pred.contact, slice(gt, 1, repr::kContactOffset, repr::kObjectOffset))));
  LossTerms out;
  out.body = lh.value().item();
  out.object = lo.value().item();
  out.contact = lc.value().item();
  out.total = add(add(scale(lh, static_cast<float>(lambda_h)), scale(lo, static_cast<float>(lambda_o))),
                  scale(lc, static_cast<float>(lambda_c)));
  return out;
}

// One training pair: normalized frames and their condition.
struct Example {
  Tensor z0;
  denoiser::Condition cond;
};

inline std::vector<Example> make_examples(const Model& m, const std::vector<const repr::Sequence*>& seqs) {
  std::vector<Example> out;
  for (const repr::Sequence* s : seqs) {
    if (s->frame_count() != m.frames) {
      throw ValidationError("sequence " + s->id + " has " + std::to_string(s->frame_count()) +
                            " frames, model expects " + std::to_string(m.frames));
    }
    Example e;
    e.z0 = m.norm.normalize(s->frames);
    e.cond.tokens = s->cond.tokens;
    e.cond.cloud = denoiser::cloud_tensor(s->cond.cloud);
    out.push_back(std::move(e));
  }
  return out;
}

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double loss_h = 0.0;
  double loss_o = 0.0;
  double loss_c = 0.0;
  std::size_t masked = 0;  // examples trained with the null condition
};

// Owns the optimizer state and the data order; one call = one update.
class Trainer {
 public:
  Trainer(Model& model, std::vector<Example> data, TrainConfig cfg)
      : model_(model),
        data_(std::move(data)),
        cfg_(cfg),
        sched_(model.schedule()),
        adam_(model.net.params(), diffkit::AdamConfig{cfg.learning_rate, 0.9f, 0.999f, 1e-8f}),
        rng_(mix_seed(cfg.seed, 0x7a1)) {
    cfg_.validate();
    if (data_.empty()) throw ValidationError("training set is empty");
  }

  const diffusion::NoiseSchedule& schedule() const { return sched_; }
  std::size_t steps_done() const { return step_; }

  // Batch draw, per-example t ~ U[1,T), noise, condition dropout, one tape
  // per example, gradients merged in batch order, then an Adam update.
  StepRecord step() {
    auto& store = model_.net.params();
    diffkit::Gradients grads = diffkit::zero_gradients(store);
    StepRecord rec;
    rec.step = step_;
    const float inv_batch = 1.0f / static_cast<float>(cfg_.batch_size);
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
      const Example& ex = data_[next_index()];
      const std::size_t t = 1 + rng_.index(sched_.steps - 1);
      Tensor eps = Tensor::randn(ex.z0.shape(), rng_, 1.0);
      const bool masked = rng_.bernoulli(cfg_.cond_dropout);
      rec.masked += masked ? 1 : 0;
      Tape tape;
      Var zt = tape.constant(diffusion::forward_sample(sched_, ex.z0, t, eps));
      auto out = model_.net.denoise(tape, zt, t, masked ? denoiser::Condition::null() : ex.cond);
      LossTerms l = joint_loss(out, tape.constant(ex.z0), cfg_.lambda_h, cfg_.lambda_o, cfg_.lambda_c);
      const double total = l.total.value().item();
      if (!std::isfinite(total)) {
        throw RuntimeFailure("non-finite loss at step " + std::to_string(step_));
      }
      rec.loss += total * inv_batch;
      rec.loss_h += l.body * inv_batch;
      rec.loss_o += l.object * inv_batch;
      rec.loss_c += l.contact * inv_batch;
      tape.backward(diffkit::scale(l.total, inv_batch));
      diffkit::accumulate_gradients(tape, store, grads);
    }
    for (const Tensor& g : grads) {
      if (!g.all_finite()) throw RuntimeFailure("non-finite gradient at step " + std::to_string(step_));
    }
    adam_.step(store, grads);
    ++step_;
    return rec;
  }

  // Loss of the current weights on fixed (t, noise) draws, without dropout
  // and without touching the training stream.
  double evaluate(std::size_t draws_per_example, std::uint64_t seed) const {
    Rng rng(seed);
    double total = 0.0;
    std::size_t n = 0;
    for (const Example& ex : data_) {
      for (std::size_t k = 0; k < draws_per_example; ++k) {
        const std::size_t t = 1 + rng.index(sched_.steps - 1);
        Tensor eps = Tensor::randn(ex.z0.shape(), rng, 1.0);
        Tape tape(false);
        auto out = model_.net.denoise(tape, tape.constant(diffusion::forward_sample(sched_, ex.z0, t, eps)), t, ex.cond);
        total += joint_loss(out, tape.constant(ex.z0), cfg_.lambda_h, cfg_.lambda_o, cfg_.lambda_c).total.value().item();
        ++n;
      }
    }
    return total / static_cast<double>(n);
  }

 private:
  // Reshuffled epochs, so every example is seen once per pass.
  std::size_t next_index() {
    if (cursor_ == order_.size()) {
      order_.resize(data_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.index(i)]);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  Model& model_;
  std::vector<Example> data_;
  TrainConfig cfg_;
  diffusion::NoiseSchedule sched_;
  diffkit::Adam adam_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Run directory: config.txt, loss.csv, best.ckpt, last.ckpt, validation.csv

struct FitResult {
  std::vector<StepRecord> history;
  std::vector<std::pair<std::size_t, double>> validation;  // (step, fid)
  std::optional<std::size_t> best_step;
  double best_fid = std::numeric_limits<double>::infinity();
};

// Scores the current weights; lower is better.
using Validator = std::function<double(const Model&)>;

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Trains for cfg.steps, validating every cfg.validation_every steps (and
// after the last step) when a validator is given; best.ckpt holds the
// arg-min weights. A non-finite loss stops training, leaves the weights of
// the last good step in last.ckpt, and rethrows.
inline FitResult fit(Model& model, std::vector<Example> data, const TrainConfig& cfg, const std::filesystem::path& run_dir,
                     const std::string& config_snapshot, const Validator& validate = {}) {
  cfg.validate();
  std::filesystem::create_directories(run_dir);
  diffkit::detail::write_file((run_dir / "config.txt").string(), config_snapshot);
  std::ofstream csv(run_dir / "loss.csv", std::ios::trunc);
  if (!csv) throw RuntimeFailure("cannot write " + (run_dir / "loss.csv").string());
  csv << "step,loss,loss_h,loss_o,loss_c\n";
  std::ofstream vcsv;
  if (validate) {
    vcsv.open(run_dir / "validation.csv", std::ios::trunc);
    vcsv << "step,fid\n";
  }

  Trainer trainer(model, std::move(data), cfg);
  FitResult result;
  auto run_validation = [&](std::size_t step) {
    const double score = validate(model);
    result.validation.emplace_back(step, score);
    vcsv << step << ',' << format_double(score) << '\n' << std::flush;
    if (score < result.best_fid) {
      result.best_fid = score;
      result.best_step = step;
      save_model(model, (run_dir / "best.ckpt").string());
    }
  };
  if (validate && cfg.validation_every > 0) run_validation(0);

  for (std::size_t s = 0; s < cfg.steps; ++s) {
    StepRecord rec;
    try {
      rec = trainer.step();
    } catch (const RuntimeFailure&) {
      // step() checks loss and gradients before updating, so the weights
      // are still those of the last good step
      save_model(model, (run_dir / "last.ckpt").string());
      throw;
    }
    result.history.push_back(rec);
    if (s % cfg.log_every == 0 || s + 1 == cfg.steps) {
      csv << rec.step << ',' << format_double(rec.loss) << ',' << format_double(rec.loss_h) << ','
          << format_double(rec.loss_o) << ',' << format_double(rec.loss_c) << '\n';
    }
    const std::size_t done = s + 1;
    if (validate && cfg.validation_every > 0 && (done % cfg.validation_every == 0 || done == cfg.steps)) {
      if (result.validation.empty() || result.validation.back().first != done) run_validation(done);
    }
  }
  csv.flush();
  save_model(model, (run_dir / "last.ckpt").string());
  if (!result.best_step) save_model(model, (run_dir / "best.ckpt").string());
  return result;
}

}  // namespace cghoi::train
