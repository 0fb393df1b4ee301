#pragma once

#include <array>
#include <cmath>

#include "cghoi/body/body.hpp"
#include "cghoi/diffkit/tensor.hpp"
#include "cghoi/geom/rotation.hpp"

namespace cghoi::repr {

// Flattened frame layout: body (79) | contact (128) | object (9).
inline constexpr std::size_t kBodyOffset = 0;
inline constexpr std::size_t kContactOffset = body::kParamDims;
inline constexpr std::size_t kObjectOffset = kContactOffset + body::kMarkerCount;
inline constexpr std::size_t kObjectDims = 9;
inline constexpr std::size_t kFrameWidth = kObjectOffset + kObjectDims;
static_assert(kFrameWidth == 216);

inline constexpr std::uint32_t kFps = 20;

struct Frame {
  body::BodyParams body;
  geom::RigidTransform object;
  std::array<double, body::kMarkerCount> contact{};
};

inline std::array<double, kObjectDims> object_channels(const geom::RigidTransform& tf) {
  std::array<double, kObjectDims> o{};
  for (int i = 0; i < 3; ++i) o[static_cast<std::size_t>(i)] = tf.translation[i];
  for (std::size_t i = 0; i < 6; ++i) o[3 + i] = tf.rotation.a[i];
  return o;
}

inline geom::RigidTransform object_from_channels(const float* o) {
  geom::RigidTransform tf;
  tf.translation = geom::Vec3(o[0], o[1], o[2]);
  for (std::size_t i = 0; i < 6; ++i) tf.rotation.a[i] = o[3 + i];
  return tf;
}

inline void write_frame(const Frame& f, float* row) {
  for (std::size_t i = 0; i < body::kParamDims; ++i) row[kBodyOffset + i] = static_cast<float>(f.body.v[i]);
  for (std::size_t i = 0; i < body::kMarkerCount; ++i) row[kContactOffset + i] = static_cast<float>(f.contact[i]);
  const auto o = object_channels(f.object);
  for (std::size_t i = 0; i < kObjectDims; ++i) row[kObjectOffset + i] = static_cast<float>(o[i]);
}

inline Frame read_frame(const float* row) {
  Frame f;
  for (std::size_t i = 0; i < body::kParamDims; ++i) f.body.v[i] = row[kBodyOffset + i];
  for (std::size_t i = 0; i < body::kMarkerCount; ++i) f.contact[i] = row[kContactOffset + i];
  f.object = object_from_channels(row + kObjectOffset);
  return f;
}

inline Frame frame_at(const diffkit::Tensor& frames, std::size_t i) { return read_frame(frames.data() + i * kFrameWidth); }

inline body::BodyParams body_at(const diffkit::Tensor& frames, std::size_t i) {
  body::BodyParams p;
  const float* row = frames.data() + i * kFrameWidth;
  for (std::size_t k = 0; k < body::kParamDims; ++k) p.v[k] = row[kBodyOffset + k];
  return p;
}

inline geom::RigidTransform object_at(const diffkit::Tensor& frames, std::size_t i) {
  return object_from_channels(frames.data() + i * kFrameWidth + kObjectOffset);
}

// Frame invariants: finite, nonnegative contact, usable rotation.
inline void validate_frame(const float* row, std::size_t index) {
  for (std::size_t k = 0; k < kFrameWidth; ++k) {
    if (!std::isfinite(row[k])) {
      throw ValidationError("frame " + std::to_string(index) + ": non-finite channel " + std::to_string(k));
    }
  }
  for (std::size_t k = 0; k < body::kMarkerCount; ++k) {
    if (row[kContactOffset + k] < 0.0f) {
      throw ValidationError("frame " + std::to_string(index) + ": negative contact distance");
    }
  }
  geom::rot6d_to_matrix(object_from_channels(row + kObjectOffset).rotation);
}

}  // namespace cghoi::repr
