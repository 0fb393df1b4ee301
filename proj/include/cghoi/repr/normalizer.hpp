#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "cghoi/diffkit/params.hpp"
#include "cghoi/repr/frame.hpp"

namespace cghoi::repr {

// Per-channel z-scores over the 216 frame channels.
struct Normalizer {
  static constexpr double kMinStd = 1e-6;

  std::array<double, kFrameWidth> mean{};
  std::array<double, kFrameWidth> stddev{};

  Normalizer() { stddev.fill(1.0); }

  diffkit::Tensor normalize(const diffkit::Tensor& frames) const {
    check(frames);
    diffkit::Tensor out(frames.shape());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const std::size_t c = i % kFrameWidth;
      out[i] = static_cast<float>((frames[i] - mean[c]) / stddev[c]);
    }
    return out;
  }

  diffkit::Tensor denormalize(const diffkit::Tensor& frames) const {
    check(frames);
    diffkit::Tensor out(frames.shape());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const std::size_t c = i % kFrameWidth;
      out[i] = static_cast<float>(frames[i] * stddev[c] + mean[c]);
    }
    return out;
  }

  // Stored as a [4,216] array of float pairs (hi, lo) so the doubles
  // survive a float checkpoint: rows mean_hi, mean_lo, std_hi, std_lo.
  diffkit::Tensor to_tensor() const {
    diffkit::Tensor t({4, kFrameWidth});
    for (std::size_t c = 0; c < kFrameWidth; ++c) {
      const auto mh = static_cast<float>(mean[c]);
      const auto sh = static_cast<float>(stddev[c]);
      t[c] = mh;
      t[kFrameWidth + c] = static_cast<float>(mean[c] - mh);
      t[2 * kFrameWidth + c] = sh;
      t[3 * kFrameWidth + c] = static_cast<float>(stddev[c] - sh);
    }
    return t;
  }

  static Normalizer from_tensor(const diffkit::Tensor& t) {
    if (t.shape() != diffkit::Shape{4, kFrameWidth}) throw ValidationError("normalizer tensor must be [4,216]");
    Normalizer n;
    for (std::size_t c = 0; c < kFrameWidth; ++c) {
      n.mean[c] = static_cast<double>(t[c]) + t[kFrameWidth + c];
      n.stddev[c] = static_cast<double>(t[2 * kFrameWidth + c]) + t[3 * kFrameWidth + c];
      if (!(n.stddev[c] > 0.0)) throw ValidationError("normalizer std must be positive");
    }
    return n;
  }

 private:
  static void check(const diffkit::Tensor& frames) {
    if (frames.size() % kFrameWidth != 0 || frames.cols() != kFrameWidth) {
      throw ValidationError("normalizer expects [F,216] frames, got " + diffkit::shape_str(frames.shape()));
    }
  }
};

// Channels with (near) zero spread get std 1, which maps a constant channel
// to 0.
inline Normalizer fit_normalizer(const std::vector<const diffkit::Tensor*>& sets) {
  std::size_t rows = 0;
  std::array<double, kFrameWidth> sum{}, sum2{};
  for (const diffkit::Tensor* f : sets) {
    if (f->cols() != kFrameWidth) throw ValidationError("normalizer expects [F,216] frames");
    for (std::size_t i = 0; i < f->size(); ++i) sum[i % kFrameWidth] += (*f)[i];
    rows += f->rows();
  }
  if (rows == 0) throw ValidationError("cannot fit a normalizer on an empty set");
  Normalizer n;
  for (std::size_t c = 0; c < kFrameWidth; ++c) n.mean[c] = sum[c] / static_cast<double>(rows);
  for (const diffkit::Tensor* f : sets) {
    for (std::size_t i = 0; i < f->size(); ++i) {
      const double d = (*f)[i] - n.mean[i % kFrameWidth];
      sum2[i % kFrameWidth] += d * d;
    }
  }
  for (std::size_t c = 0; c < kFrameWidth; ++c) {
    const double sd = std::sqrt(sum2[c] / static_cast<double>(rows));
    n.stddev[c] = sd < Normalizer::kMinStd ? 1.0 : sd;
  }
  return n;
}

}  // namespace cghoi::repr
