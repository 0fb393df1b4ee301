#pragma once

#include <cstdio>
#include <limits>
#include <memory>

#include "cghoi/diffusion/sampler.hpp"
#include "cghoi/metrics/report.hpp"
#include "cghoi/train/train.hpp"

namespace cghoi::train {

// Samples the model for the condition (text tokens and object cloud) of `src`.
inline diffusion::SampleResult sample_like(const Model& m, const body::BodyTemplate& tmpl, const repr::Sequence& src,
                                           std::uint64_t seed, const diffusion::GuidanceConfig& guidance) {
  const auto sched = m.schedule();
  diffusion::Sampler s{m.net, m.norm, sched, tmpl};
  diffusion::SampleRequest req;
  req.cond.tokens = src.cond.tokens;
  req.cond.cloud = denoiser::cloud_tensor(src.cond.cloud);
  req.cloud = src.cond.cloud;
  req.frames = m.frames;
  req.seed = seed;
  req.guidance = guidance;
  return diffusion::sample(s, req);
}

// `per_condition` samples for every source sequence, as sequences carrying
// the source's text and object. Seeds derive from (seed, source id, k).
inline std::vector<repr::Sequence> generate_set(const Model& m, const std::vector<const repr::Sequence*>& sources,
                                                std::size_t per_condition, std::uint64_t seed,
                                                const diffusion::GuidanceConfig& guidance) {
  const auto tmpl = body::build_template(m.template_seed);
  std::vector<repr::Sequence> out;
  for (const auto* src : sources) {
    for (std::size_t k = 0; k < per_condition; ++k) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "-g%02zu", k);
      repr::Sequence s;
      s.id = src->id + suffix;
      s.split = "generated";
      s.text = src->text;
      s.cond = src->cond;
      s.frames = sample_like(m, tmpl, *src, mix_seed(mix_seed(seed, hash_name(src->id)), k), guidance).frames;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// FID between extractor features of the validation sequences and one sample
// per validation condition. A sampling failure scores +inf.
inline Validator fid_validator(std::vector<const repr::Sequence*> val, std::shared_ptr<const metrics::Extractor> ex,
                               std::uint64_t seed, diffusion::GuidanceConfig guidance) {
  if (val.size() < 2) throw ValidationError("validation FID needs at least 2 validation sequences");
  std::vector<const Tensor*> frames;
  for (const auto* s : val) frames.push_back(&s->frames);
  auto real = std::make_shared<const Tensor>(ex->motion_features(frames));
  return [val = std::move(val), ex, real, seed, guidance](const Model& m) {
    std::vector<repr::Sequence> gen;
    try {
      gen = generate_set(m, val, 1, seed, guidance);
    } catch (const RuntimeFailure&) {
      return std::numeric_limits<double>::infinity();
    }
    std::vector<const Tensor*> g;
    for (const auto& s : gen) g.push_back(&s.frames);
    return metrics::fid(*real, ex->motion_features(g));
  };
}

}  // namespace cghoi::train
