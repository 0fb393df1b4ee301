#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cghoi/diffkit/tensor.hpp"
#include "cghoi/error.hpp"

namespace cghoi::diffusion {

using diffkit::Tensor;

// Linear beta schedule scaled by 1000/T, with beta[0] = 0 so that
// alpha_bar[0] = 1 and step 0 is the clean sample.
struct NoiseSchedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  static NoiseSchedule linear(std::size_t steps = 100) {
    if (steps < 2) throw ValidationError("noise schedule needs at least 2 steps");
    NoiseSchedule s;
    s.steps = steps;
    const double k = 1000.0 / static_cast<double>(steps);
    const double lo = 1e-4 * k, hi = 0.02 * k;
    if (hi >= 1.0) throw ValidationError("noise schedule too short: beta would reach 1");
    s.beta.resize(steps);
    s.alpha_bar.resize(steps);
    double prod = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
      s.beta[t] = t == 0 ? 0.0 : lo + (hi - lo) * static_cast<double>(t) / static_cast<double>(steps - 1);
      prod *= 1.0 - s.beta[t];
      s.alpha_bar[t] = prod;
    }
    return s;
  }

  void check_step(std::size_t t) const {
    if (t >= steps) {
      throw ValidationError("diffusion step " + std::to_string(t) + " outside [0," + std::to_string(steps) + ")");
    }
  }

  double signal(std::size_t t) const { return std::sqrt(alpha_bar[t]); }
  double noise(std::size_t t) const { return std::sqrt(1.0 - alpha_bar[t]); }
};

// sqrt(ab_t) z0 + sqrt(1 - ab_t) eps, evaluated in double per element.
inline Tensor forward_sample(const NoiseSchedule& s, const Tensor& z0, std::size_t t, const Tensor& eps) {
  s.check_step(t);
  if (z0.shape() != eps.shape()) {
    throw ShapeError("forward_sample: z0 " + diffkit::shape_str(z0.shape()) + " vs eps " +
                     diffkit::shape_str(eps.shape()));
  }
  const double a = s.signal(t), b = s.noise(t);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = static_cast<float>(a * z0[i] + b * eps[i]);
  return out;
}

struct GuidanceConfig {
  double cfg_scale = 2.5;
  double contact_scale = 100.0;
  bool contact_guidance = true;

  void validate() const {
    if (!std::isfinite(cfg_scale) || cfg_scale < 0.0) throw ValidationError("cfg scale must be finite and >= 0");
    if (!std::isfinite(contact_scale) || contact_scale < 0.0) {
      throw ValidationError("contact guidance scale must be finite and >= 0");
    }
  }
};

// uncond + scale (cond - uncond), written as (1 - scale) uncond + scale cond
// in double so that scales 0 and 1 return their input bit for bit.
inline Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double scale) {
  if (cond.shape() != uncond.shape()) {
    throw ShapeError("cfg_combine: " + diffkit::shape_str(cond.shape()) + " vs " + diffkit::shape_str(uncond.shape()));
  }
  Tensor out(cond.shape());
  for (std::size_t i = 0; i < cond.size(); ++i) {
    out[i] = static_cast<float>((1.0 - scale) * uncond[i] + scale * cond[i]);
  }
  return out;
}

}  // namespace cghoi::diffusion
