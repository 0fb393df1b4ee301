#pragma once

#include <functional>
#include <optional>

#include "cghoi/denoiser/denoiser.hpp"
#include "cghoi/diffusion/guidance.hpp"
#include "cghoi/diffusion/schedule.hpp"
#include "cghoi/repr/contact.hpp"
#include "cghoi/repr/normalizer.hpp"
#include "cghoi/rng.hpp"

namespace cghoi::diffusion {

// Everything a reverse pass reads. All members are borrowed and read-only.
struct Sampler {
  const denoiser::Denoiser& net;
  const repr::Normalizer& norm;
  const NoiseSchedule& sched;
  const body::BodyTemplate& tmpl;
};

struct SampleRequest {
  denoiser::Condition cond;  // tokens and the canonical cloud as a tensor
  geom::PointCloud cloud;    // same cloud, for the guidance cost
  std::size_t frames = 32;
  std::uint64_t seed = 0;
  GuidanceConfig guidance;
};

struct SampleResult {
  Tensor frames;              // denormalized [F,216]; contact channels clamped at 0
  Tensor predicted_contact;   // raw denormalized prediction [F,128]
  Tensor recomputed_contact;  // marker-to-cloud distances of the sampled poses [F,128]
};

// Normalized x0 prediction for a noisy state at step t.
using X0Predictor = std::function<Tensor(const Tensor& z, std::size_t t)>;
// Gradient of the guidance cost with respect to a normalized x0 prediction.
using GuidanceGrad = std::function<Tensor(const Tensor& x0)>;

// One ancestral step: mean sqrt(ab_{t-1}) x0, shifted by -s * grad when
// guidance is given, plus fresh noise scaled by sqrt(1 - ab_{t-1}); the
// noise is skipped at t = 1.
inline Tensor reverse_step(const NoiseSchedule& sched, const Tensor& z_t, std::size_t t, const X0Predictor& predict,
                           double contact_scale, const GuidanceGrad* guide, Rng& rng) {
  sched.check_step(t);
  if (t == 0) throw ValidationError("reverse_step needs t >= 1");
  const Tensor x0 = predict(z_t, t);
  if (x0.shape() != z_t.shape()) throw ShapeError("x0 prediction shape differs from the state");
  if (!x0.all_finite()) throw RuntimeFailure("non-finite x0 prediction at step " + std::to_string(t));
  const double a = sched.signal(t - 1), b = sched.noise(t - 1);
  Tensor shift;
  if (guide && contact_scale != 0.0) {
    shift = (*guide)(x0);
    if (!shift.all_finite()) throw RuntimeFailure("non-finite guidance gradient at step " + std::to_string(t));
  }
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double mu = a * x0[i];
    if (shift.size()) mu -= contact_scale * shift[i];
    if (t > 1) mu += b * rng.normal();
    out[i] = static_cast<float>(mu);
  }
  return out;
}

namespace detail {

inline Tensor embed_condition(const denoiser::Denoiser& net, const denoiser::Condition& c) {
  diffkit::Tape tape(false);
  return net.condition_embedding(tape, c).value();
}

inline Tensor predict_flat(const denoiser::Denoiser& net, const Tensor& z, std::size_t t, const Tensor& emb) {
  diffkit::Tape tape(false);
  return net.denoise(tape, tape.constant(z), t, tape.constant(emb)).flat().value();
}

}  // namespace detail

// Classifier-free guided x0 predictor. A scale of exactly 0 or 1 skips the
// branch that cannot contribute; cfg_combine returns the other unchanged.
inline X0Predictor cfg_predictor(const denoiser::Denoiser& net, const denoiser::Condition& cond, double cfg_scale) {
  auto cond_emb = std::make_shared<Tensor>(detail::embed_condition(net, cond));
  auto null_emb = std::make_shared<Tensor>(detail::embed_condition(net, denoiser::Condition::null()));
  return [&net, cond_emb, null_emb, cfg_scale](const Tensor& z, std::size_t t) {
    if (cfg_scale == 1.0) return detail::predict_flat(net, z, t, *cond_emb);
    if (cfg_scale == 0.0) return detail::predict_flat(net, z, t, *null_emb);
    return cfg_combine(detail::predict_flat(net, z, t, *cond_emb), detail::predict_flat(net, z, t, *null_emb),
                       cfg_scale);
  };
}

// Guidance gradient on the denormalized prediction, mapped back through
// the normalization.
inline GuidanceGrad guidance_gradient(const body::BodyTemplate& tmpl, const repr::Normalizer& norm,
                                      const geom::PointCloud& cloud) {
  return [&tmpl, &norm, &cloud](const Tensor& x0) {
    Tensor g = guidance_cost(tmpl, norm.denormalize(x0), cloud, true).grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(g[i] * norm.stddev[i % repr::kFrameWidth]);
    return g;
  };
}

namespace detail {

inline Tensor normalize_track(const repr::Normalizer& norm, const Tensor& track) {
  Tensor out(track.shape());
  for (std::size_t i = 0; i < track.size(); ++i) {
    const std::size_t c = repr::kObjectOffset + i % repr::kObjectDims;
    out[i] = static_cast<float>((track[i] - norm.mean[c]) / norm.stddev[c]);
  }
  return out;
}

inline void check_request(const Sampler& s, const SampleRequest& req) {
  req.guidance.validate();
  if (req.frames == 0 || req.frames % 4 != 0) throw ValidationError("frame count must be a positive multiple of 4");
  if (req.cloud.size() != repr::kCloudSize) throw ValidationError("object cloud must hold 256 points");
  if (s.sched.steps != s.net.config().steps) throw ValidationError("schedule length differs from the model's");
}

inline SampleResult finish(const Sampler& s, const SampleRequest& req, const Tensor& z, const Tensor* track) {
  SampleResult r;
  r.frames = s.norm.denormalize(z);
  const std::size_t nf = req.frames;
  if (track) {
    for (std::size_t f = 0; f < nf; ++f)
      for (std::size_t k = 0; k < repr::kObjectDims; ++k)
        r.frames[f * repr::kFrameWidth + repr::kObjectOffset + k] = (*track)[f * repr::kObjectDims + k];
  }
  r.predicted_contact = Tensor({nf, body::kMarkerCount});
  r.recomputed_contact = Tensor({nf, body::kMarkerCount});
  for (std::size_t f = 0; f < nf; ++f) {
    float* row = r.frames.data() + f * repr::kFrameWidth;
    for (std::size_t j = 0; j < body::kMarkerCount; ++j) {
      float& c = row[repr::kContactOffset + j];
      r.predicted_contact[f * body::kMarkerCount + j] = c;
      c = std::max(c, 0.0f);
    }
    try {
      repr::validate_frame(row, f);
      const auto labels = repr::compute_contact_labels(s.tmpl, repr::body_at(r.frames, f), repr::object_at(r.frames, f),
                                                       req.cloud);
      for (std::size_t j = 0; j < body::kMarkerCount; ++j)
        r.recomputed_contact[f * body::kMarkerCount + j] = static_cast<float>(labels[j]);
    } catch (const ValidationError& e) {
      throw RuntimeFailure(std::string("sampled sequence is invalid: ") + e.what());
    }
  }
  return r;
}

inline SampleResult run(const Sampler& s, const SampleRequest& req, const Tensor* track) {
  check_request(s, req);
  Rng rng(req.seed);
  Tensor z = Tensor::randn({req.frames, repr::kFrameWidth}, rng, 1.0);
  const X0Predictor predict = cfg_predictor(s.net, req.cond, req.guidance.cfg_scale);
  const GuidanceGrad grad = guidance_gradient(s.tmpl, s.norm, req.cloud);
  const GuidanceGrad* guide = req.guidance.contact_guidance ? &grad : nullptr;
  Tensor track_norm;
  if (track) track_norm = normalize_track(s.norm, *track);
  for (std::size_t t = s.sched.steps - 1; t >= 1; --t) {
    z = reverse_step(s.sched, z, t, predict, req.guidance.contact_scale, guide, rng);
    if (track) {
      // replace the object channels with the track noised to level t-1
      Tensor eps = Tensor::randn(track_norm.shape(), rng, 1.0);
      Tensor noised = forward_sample(s.sched, track_norm, t - 1, eps);
      for (std::size_t f = 0; f < req.frames; ++f)
        for (std::size_t k = 0; k < repr::kObjectDims; ++k)
          z[f * repr::kFrameWidth + repr::kObjectOffset + k] = noised[f * repr::kObjectDims + k];
    }
  }
  return finish(s, req, z, track);
}

}  // namespace detail

inline SampleResult sample(const Sampler& s, const SampleRequest& req) { return detail::run(s, req, nullptr); }

// Replacement conditioning on a given object track [F,9] (denormalized).
// The output's object channels are the track itself.
inline SampleResult sample_with_trajectory(const Sampler& s, const SampleRequest& req, const Tensor& track) {
  if (track.rank() != 2 || track.cols() != repr::kObjectDims || track.rows() != req.frames) {
    throw ValidationError("object track must be [" + std::to_string(req.frames) + ",9], got " +
                          diffkit::shape_str(track.shape()));
  }
  if (!track.all_finite()) throw ValidationError("object track is not finite");
  return detail::run(s, req, &track);
}

}  // namespace cghoi::diffusion
