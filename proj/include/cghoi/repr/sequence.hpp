#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cghoi/diffkit/params.hpp"
#include "cghoi/geom/mesh.hpp"
#include "cghoi/repr/frame.hpp"

namespace cghoi::repr {

struct ConditionSpec {
  std::vector<std::uint32_t> tokens;
  geom::PointCloud cloud;  // canonical object frame
  std::string object_ref;
};

struct Sequence {
  std::string id;
  std::string split;
  std::string text;
  ConditionSpec cond;
  diffkit::Tensor frames;  // [F, 216]
  std::uint32_t fps = kFps;

  std::size_t frame_count() const { return frames.rank() == 2 ? frames.rows() : 0; }
};

inline void validate_sequence(const Sequence& s) {
  if (s.frames.rank() != 2 || s.frames.cols() != kFrameWidth) {
    throw ValidationError("sequence " + s.id + ": frames must be [F,216], got " + diffkit::shape_str(s.frames.shape()));
  }
  if (s.fps != kFps) throw ValidationError("sequence " + s.id + ": fps must be 20");
  for (std::size_t i = 0; i < s.frame_count(); ++i) validate_frame(s.frames.data() + i * kFrameWidth, i);
}

// Binary sequence file, little-endian:
// "CGHOI1" | u32 version | u32 frames | u32 fps | u32 n_tokens | u32 tokens[]
// | u32 cloud_size | f32 cloud[cloud_size*3] | f32 frames[F*216]
inline constexpr std::uint32_t kSequenceVersion = 1;

inline std::string encode_sequence(const Sequence& s) {
  using diffkit::detail::put;
  if (s.frames.rank() != 2 || s.frames.cols() != kFrameWidth) {
    throw ValidationError("sequence " + s.id + ": frames must be [F,216]");
  }
  std::string out = "CGHOI1";
  put<std::uint32_t>(out, kSequenceVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.frame_count()));
  put<std::uint32_t>(out, s.fps);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.cond.tokens.size()));
  for (std::uint32_t t : s.cond.tokens) put<std::uint32_t>(out, t);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.cond.cloud.size()));
  for (const auto& p : s.cond.cloud.points) {
    for (int i = 0; i < 3; ++i) put<float>(out, static_cast<float>(p[i]));
  }
  out.append(reinterpret_cast<const char*>(s.frames.data()), s.frames.size() * sizeof(float));
  return out;
}

inline Sequence decode_sequence(const std::string& bytes, const std::string& what = "sequence") {
  diffkit::detail::Reader r(bytes, what);
  if (r.get_bytes(6) != "CGHOI1") throw ParseError(what + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kSequenceVersion) {
    throw UnsupportedVersion(what + ": unsupported version " + std::to_string(version));
  }
  Sequence s;
  const auto frames = r.get<std::uint32_t>();
  s.fps = r.get<std::uint32_t>();
  const auto n_tokens = r.get<std::uint32_t>();
  if (n_tokens > bytes.size()) throw ParseError(what + ": token count exceeds file size");
  for (std::uint32_t i = 0; i < n_tokens; ++i) s.cond.tokens.push_back(r.get<std::uint32_t>());
  const auto cloud_size = r.get<std::uint32_t>();
  if (cloud_size > bytes.size()) throw ParseError(what + ": cloud size exceeds file size");
  for (std::uint32_t i = 0; i < cloud_size; ++i) {
    const float x = r.get<float>(), y = r.get<float>(), z = r.get<float>();
    s.cond.cloud.points.emplace_back(x, y, z);
  }
  if (static_cast<std::uint64_t>(frames) * kFrameWidth * sizeof(float) > bytes.size()) {
    throw ParseError(what + ": truncated frame block");
  }
  s.frames = diffkit::Tensor({frames, kFrameWidth});
  r.get_floats(s.frames.data(), s.frames.size());
  if (!r.at_end()) throw ParseError(what + ": trailing bytes");
  return s;
}

inline void save_sequence(const Sequence& s, const std::string& path) {
  diffkit::detail::write_file(path, encode_sequence(s));
}

inline Sequence load_sequence(const std::string& path) {
  return decode_sequence(diffkit::detail::read_file(path), path);
}

}  // namespace cghoi::repr
