#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <span>
#include <unsupported/Eigen/AutoDiff>
#include <vector>

#include "cghoi/error.hpp"
#include "cghoi/geom/mesh.hpp"
#include "cghoi/geom/query.hpp"
#include "cghoi/geom/rotation.hpp"
#include "cghoi/rng.hpp"

namespace cghoi::body {

using geom::Mat3;
using geom::Vec3;

inline constexpr std::size_t kJointCount = 22;
inline constexpr std::size_t kPoseDims = 63;
inline constexpr std::size_t kShapeDims = 10;
inline constexpr std::size_t kParamDims = 79;
inline constexpr std::size_t kMarkerCount = 128;
inline constexpr std::size_t kMaxInfluences = 4;

// Offsets inside the flat 79-vector.
inline constexpr std::size_t kPoseOffset = 0;
inline constexpr std::size_t kShapeOffset = 63;
inline constexpr std::size_t kGlobalRotOffset = 73;
inline constexpr std::size_t kTranslationOffset = 76;

enum Joint : int {
  kPelvis = 0, kLeftHip, kRightHip, kSpine1, kLeftKnee, kRightKnee, kSpine2, kLeftAnkle,
  kRightAnkle, kSpine3, kLeftFoot, kRightFoot, kNeck, kLeftCollar, kRightCollar, kHead,
  kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow, kLeftWrist, kRightWrist
};

// Body parameters in the flat layout pose(63) | shape(10) | global
// rotation(3) | translation(3). Pose and global rotation are axis-angle.
struct BodyParams {
  std::array<double, kParamDims> v{};

  std::span<double, kPoseDims> pose() { return std::span<double, kPoseDims>(v.data(), kPoseDims); }
  std::span<const double, kPoseDims> pose() const {
    return std::span<const double, kPoseDims>(v.data(), kPoseDims);
  }
  std::span<double, kShapeDims> shape() {
    return std::span<double, kShapeDims>(v.data() + kShapeOffset, kShapeDims);
  }
  std::span<const double, kShapeDims> shape() const {
    return std::span<const double, kShapeDims>(v.data() + kShapeOffset, kShapeDims);
  }
  Vec3 global_rot() const { return {v[73], v[74], v[75]}; }
  Vec3 translation() const { return {v[76], v[77], v[78]}; }
  void set_global_rot(const Vec3& r) { v[73] = r.x(), v[74] = r.y(), v[75] = r.z(); }
  void set_translation(const Vec3& t) { v[76] = t.x(), v[77] = t.y(), v[78] = t.z(); }
  // Local axis-angle of joint j (1..21).
  Vec3 joint_rot(int j) const {
    const auto o = static_cast<std::size_t>(3 * (j - 1));
    return {v[o], v[o + 1], v[o + 2]};
  }
  void set_joint_rot(int j, const Vec3& r) {
    const auto o = static_cast<std::size_t>(3 * (j - 1));
    v[o] = r.x(), v[o + 1] = r.y(), v[o + 2] = r.z();
  }

  friend bool operator==(const BodyParams&, const BodyParams&) = default;
};

struct SkinWeights {
  std::array<int, kMaxInfluences> joint{0, 0, 0, 0};
  std::array<double, kMaxInfluences> weight{1, 0, 0, 0};
};

struct BodyTemplate {
  std::array<int, kJointCount> parents{};
  std::array<Vec3, kJointCount> joints{};  // rest positions, meters
  geom::TriMesh mesh;
  std::vector<SkinWeights> skin;
  // shape_dirs[v][k]: displacement of vertex v per unit of shape coefficient k.
  std::vector<std::array<Vec3, kShapeDims>> shape_dirs;
  std::vector<std::size_t> marker_indices;
  // Joint whose segment generated the vertex.
  std::vector<int> vertex_part;

  friend bool operator==(const BodyTemplate& a, const BodyTemplate& b) {
    return a.parents == b.parents && a.joints == b.joints && a.mesh.vertices == b.mesh.vertices &&
           a.mesh.faces == b.mesh.faces && a.marker_indices == b.marker_indices &&
           a.vertex_part == b.vertex_part && a.shape_dirs == b.shape_dirs &&
           std::equal(a.skin.begin(), a.skin.end(), b.skin.begin(), b.skin.end(),
                      [](const SkinWeights& x, const SkinWeights& y) {
                        return x.joint == y.joint && x.weight == y.weight;
                      });
  }
};

namespace detail {

struct Segment {
  int joint;
  Vec3 a, b;
  Vec3 e1;  // first cross-section axis
  double r1, r2, cap;
};

inline std::vector<Segment> segments() {
  const Vec3 X = Vec3::UnitX(), Y = Vec3::UnitY(), Z = Vec3::UnitZ();
  std::vector<Segment> s;
  s.push_back({kPelvis, {-0.06, 0.90, 0}, {0.06, 0.90, 0}, Y, 0.10, 0.11, 0.11});
  s.push_back({kSpine1, {0, 0.98, 0}, {0, 1.16, 0}, X, 0.13, 0.10, 0.05});
  s.push_back({kSpine2, {0, 1.18, 0}, {0, 1.30, 0}, X, 0.15, 0.11, 0.05});
  s.push_back({kSpine3, {0, 1.31, 0}, {0, 1.43, 0}, X, 0.16, 0.11, 0.05});
  s.push_back({kNeck, {0, 1.49, 0}, {0, 1.57, 0}, X, 0.05, 0.05, 0.03});
  s.push_back({kHead, {0, 1.65, 0}, {0, 1.71, 0}, X, 0.085, 0.095, 0.09});
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    auto J = [&](Joint left, Joint right) { return side == 0 ? left : right; };
    s.push_back({J(kLeftCollar, kRightCollar), {sx * 0.05, 1.43, 0}, {sx * 0.16, 1.43, 0}, Y, 0.05, 0.05, 0.04});
    s.push_back({J(kLeftShoulder, kRightShoulder), {sx * 0.20, 1.43, 0}, {sx * 0.42, 1.43, 0}, Y, 0.045, 0.045, 0.045});
    s.push_back({J(kLeftElbow, kRightElbow), {sx * 0.46, 1.43, 0}, {sx * 0.67, 1.43, 0}, Y, 0.035, 0.035, 0.035});
    // Flat hand; palm normal is +/-z in the rest pose.
    s.push_back({J(kLeftWrist, kRightWrist), {sx * 0.745, 1.43, 0}, {sx * 0.825, 1.43, 0}, Y, 0.04, 0.013, 0.04});
    s.push_back({J(kLeftHip, kRightHip), {sx * 0.09, 0.83, 0}, {sx * 0.09, 0.55, 0}, X, 0.065, 0.065, 0.06});
    s.push_back({J(kLeftKnee, kRightKnee), {sx * 0.09, 0.47, 0}, {sx * 0.09, 0.14, 0}, X, 0.05, 0.05, 0.045});
    s.push_back({J(kLeftAnkle, kRightAnkle), {sx * 0.09, 0.06, -0.03}, {sx * 0.09, 0.05, 0.08}, X, 0.045, 0.03, 0.04});
    s.push_back({J(kLeftFoot, kRightFoot), {sx * 0.09, 0.035, 0.13}, {sx * 0.09, 0.035, 0.16}, X, 0.04, 0.025, 0.035});
  }
  (void)Z;
  return s;
}

// Local frame for a segment: cross-section axes orthogonal to the segment.
inline std::pair<Vec3, Vec3> section_axes(const Segment& seg) {
  const Vec3 axis = (seg.b - seg.a).normalized();
  Vec3 e1 = (seg.e1 - axis * axis.dot(seg.e1)).normalized();
  Vec3 e2 = axis.cross(e1);
  return {e1, e2};
}

}  // namespace detail

// Deterministic stand-in template: 22-joint skeleton, one closed capsule per
// joint, two-joint blend skinning near each proximal joint, ten smooth shape
// fields (<= 5 cm per unit coefficient), and 128 farthest-point markers
// chosen among vertices on the outer surface.
inline BodyTemplate build_template(std::uint64_t seed = 0) {
  BodyTemplate t;
  t.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
  t.joints = {Vec3(0, 0.95, 0),     Vec3(0.09, 0.87, 0),   Vec3(-0.09, 0.87, 0),
              Vec3(0, 1.05, 0),     Vec3(0.09, 0.50, 0),   Vec3(-0.09, 0.50, 0),
              Vec3(0, 1.18, 0),     Vec3(0.09, 0.09, 0),   Vec3(-0.09, 0.09, 0),
              Vec3(0, 1.30, 0),     Vec3(0.09, 0.03, 0.12), Vec3(-0.09, 0.03, 0.12),
              Vec3(0, 1.48, 0),     Vec3(0.05, 1.43, 0),   Vec3(-0.05, 1.43, 0),
              Vec3(0, 1.60, 0),     Vec3(0.19, 1.43, 0),   Vec3(-0.19, 1.43, 0),
              Vec3(0.44, 1.43, 0),  Vec3(-0.44, 1.43, 0),  Vec3(0.70, 1.43, 0),
              Vec3(-0.70, 1.43, 0)};

  const auto segs = detail::segments();
  std::vector<geom::TriMesh> parts;
  std::vector<Vec3> radial;  // unit outward direction from the segment axis
  for (const auto& seg : segs) {
    const auto [e1, e2] = detail::section_axes(seg);
    geom::TriMesh part = geom::make_capsule(seg.a, seg.b, e1, e2, seg.r1, seg.r2, seg.cap, 10, 3);
    const Vec3 axis = (seg.b - seg.a).normalized();
    const double len = (seg.b - seg.a).norm();
    for (const Vec3& v : part.vertices) {
      const double s = std::clamp((v - seg.a).dot(axis) / len, 0.0, 1.0);
      Vec3 off = v - (seg.a + axis * (s * len));
      radial.push_back(off.norm() > 1e-9 ? off.normalized() : axis * (s < 0.5 ? -1.0 : 1.0));
      SkinWeights w;
      w.joint[0] = seg.joint;
      const int parent = t.parents[static_cast<std::size_t>(seg.joint)];
      const double blend = parent >= 0 ? 0.4 * std::max(0.0, 1.0 - s / 0.3) : 0.0;
      w.weight[0] = 1.0 - blend;
      if (blend > 0.0) {
        w.joint[1] = parent;
        w.weight[1] = blend;
      }
      t.skin.push_back(w);
      t.vertex_part.push_back(seg.joint);
    }
    geom::append(t.mesh, part);
    parts.push_back(std::move(part));
  }

  // Smooth shape fields: even k inflate along the local radial direction,
  // odd k displace along a fixed direction; both modulated by a sinusoid.
  Rng rng(mix_seed(seed, 1));
  std::array<Vec3, kShapeDims> dir, freq;
  std::array<double, kShapeDims> phase{};
  for (std::size_t k = 0; k < kShapeDims; ++k) {
    dir[k] = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    freq[k] = Vec3(rng.normal(), rng.normal(), rng.normal()) * 2.0;
    phase[k] = rng.uniform(0.0, 2 * M_PI);
  }
  t.shape_dirs.resize(t.mesh.vertices.size());
  for (std::size_t i = 0; i < t.mesh.vertices.size(); ++i) {
    const Vec3& v = t.mesh.vertices[i];
    for (std::size_t k = 0; k < kShapeDims; ++k) {
      const double m = std::sin(freq[k].dot(v) + phase[k]);
      const Vec3 d = (k % 2 == 0) ? radial[i] : dir[k];
      t.shape_dirs[i][k] = 0.05 * m * d;
    }
  }

  // Marker candidates: vertices not buried inside another segment.
  std::vector<Vec3> candidates;
  std::vector<std::size_t> candidate_index;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (std::size_t i = 0; i < parts[p].vertices.size(); ++i) {
      const Vec3& v = parts[p].vertices[i];
      bool buried = false;
      for (std::size_t q = 0; q < parts.size() && !buried; ++q) {
        if (q == p) continue;
        buried = geom::point_in_mesh(v, parts[q]);
      }
      if (!buried) {
        candidates.push_back(v);
        candidate_index.push_back(offset + i);
      }
    }
    offset += parts[p].vertices.size();
  }
  const auto picked = geom::farthest_point_subset(candidates, kMarkerCount, mix_seed(seed, 2));
  for (std::size_t i : picked) t.marker_indices.push_back(candidate_index[i]);
  return t;
}

// World joint rotations and positions along the kinematic chain. The root
// rotation is the global rotation about the root joint, followed by the
// global translation.
template <class Scalar>
struct Posed {
  std::array<Eigen::Matrix<Scalar, 3, 3>, kJointCount> rot;
  std::array<Eigen::Matrix<Scalar, 3, 1>, kJointCount> pos;
};

template <class Scalar>
Posed<Scalar> pose_joints(const BodyTemplate& t, const Scalar* params) {
  using V = Eigen::Matrix<Scalar, 3, 1>;
  Posed<Scalar> out;
  out.rot[0] = geom::axis_angle_to_matrix_t<Scalar>(params[kGlobalRotOffset], params[kGlobalRotOffset + 1],
                                                     params[kGlobalRotOffset + 2]);
  out.pos[0] = t.joints[0].cast<Scalar>() +
               V(params[kTranslationOffset], params[kTranslationOffset + 1], params[kTranslationOffset + 2]);
  for (std::size_t j = 1; j < kJointCount; ++j) {
    const auto p = static_cast<std::size_t>(t.parents[j]);
    const std::size_t o = 3 * (j - 1);
    const auto local = geom::axis_angle_to_matrix_t<Scalar>(params[o], params[o + 1], params[o + 2]);
    out.rot[j] = out.rot[p] * local;
    out.pos[j] = out.pos[p] + out.rot[p] * (t.joints[j] - t.joints[p]).cast<Scalar>();
  }
  return out;
}

template <class Scalar>
Eigen::Matrix<Scalar, 3, 1> skin_vertex(const BodyTemplate& t, const Posed<Scalar>& posed,
                                        const Scalar* params, std::size_t vi) {
  using V = Eigen::Matrix<Scalar, 3, 1>;
  V shaped = t.mesh.vertices[vi].cast<Scalar>();
  for (std::size_t k = 0; k < kShapeDims; ++k) {
    shaped += t.shape_dirs[vi][k].cast<Scalar>() * params[kShapeOffset + k];
  }
  V out = V::Zero();
  const SkinWeights& w = t.skin[vi];
  for (std::size_t i = 0; i < kMaxInfluences; ++i) {
    if (w.weight[i] == 0.0) continue;
    const auto j = static_cast<std::size_t>(w.joint[i]);
    out += Scalar(w.weight[i]) * (posed.rot[j] * (shaped - t.joints[j].cast<Scalar>()) + posed.pos[j]);
  }
  return out;
}

inline void check_params(const BodyParams& p) {
  for (double x : p.v) {
    if (!std::isfinite(x)) throw ValidationError("body parameters must be finite");
  }
}

struct BodyOutput {
  geom::TriMesh mesh;
  std::vector<Vec3> markers;
};

inline std::vector<Vec3> body_markers(const BodyTemplate& t, const BodyParams& params) {
  check_params(params);
  const auto posed = pose_joints<double>(t, params.v.data());
  std::vector<Vec3> out;
  out.reserve(t.marker_indices.size());
  for (std::size_t vi : t.marker_indices) out.push_back(skin_vertex<double>(t, posed, params.v.data(), vi));
  return out;
}

// Linear blend skinning of the whole template surface plus the markers.
inline BodyOutput body_forward(const BodyTemplate& t, const BodyParams& params) {
  check_params(params);
  const auto posed = pose_joints<double>(t, params.v.data());
  BodyOutput out;
  out.mesh.faces = t.mesh.faces;
  out.mesh.vertices.reserve(t.mesh.vertices.size());
  for (std::size_t vi = 0; vi < t.mesh.vertices.size(); ++vi) {
    out.mesh.vertices.push_back(skin_vertex<double>(t, posed, params.v.data(), vi));
  }
  for (std::size_t vi : t.marker_indices) out.markers.push_back(out.mesh.vertices[vi]);
  return out;
}

using MarkerJacobian = Eigen::Matrix<double, Eigen::Dynamic, static_cast<int>(kParamDims)>;

// Marker positions and their Jacobian (3*128 x 79, rows x0,y0,z0,x1,...) by
// forward-mode differentiation of the skinning path.
inline std::pair<std::vector<Vec3>, MarkerJacobian> marker_jacobian(const BodyTemplate& t,
                                                                    const BodyParams& params) {
  check_params(params);
  using Deriv = Eigen::Matrix<double, static_cast<int>(kParamDims), 1>;
  using AD = Eigen::AutoDiffScalar<Deriv>;
  std::array<AD, kParamDims> x;
  for (std::size_t i = 0; i < kParamDims; ++i) {
    x[i] = AD(params.v[i], static_cast<int>(kParamDims), static_cast<int>(i));
  }
  const auto posed = pose_joints<AD>(t, x.data());
  std::vector<Vec3> markers;
  MarkerJacobian jac(3 * static_cast<Eigen::Index>(t.marker_indices.size()), static_cast<int>(kParamDims));
  for (std::size_t m = 0; m < t.marker_indices.size(); ++m) {
    const auto p = skin_vertex<AD>(t, posed, x.data(), t.marker_indices[m]);
    markers.emplace_back(p.x().value(), p.y().value(), p.z().value());
    for (int c = 0; c < 3; ++c) {
      const auto& d = p(c).derivatives();
      if (d.size() == 0) {
        jac.row(3 * static_cast<Eigen::Index>(m) + c).setZero();
      } else {
        jac.row(3 * static_cast<Eigen::Index>(m) + c) = d.transpose();
      }
    }
  }
  return {std::move(markers), std::move(jac)};
}

// Joint index of the dominant skin influence per marker.
inline std::vector<int> marker_parts(const BodyTemplate& t) {
  std::vector<int> parts;
  for (std::size_t vi : t.marker_indices) parts.push_back(t.vertex_part[vi]);
  return parts;
}

inline std::vector<std::size_t> markers_on(const BodyTemplate& t, std::initializer_list<int> joints) {
  std::vector<std::size_t> out;
  const auto parts = marker_parts(t);
  for (std::size_t m = 0; m < parts.size(); ++m) {
    for (int j : joints) {
      if (parts[m] == j) out.push_back(m);
    }
  }
  return out;
}

}  // namespace cghoi::body
