#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cmath>

#include "cghoi/error.hpp"

namespace cghoi::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// First two columns of a rotation matrix, stored column after column:
// (m00, m10, m20, m01, m11, m21).
struct Rotation6D {
  std::array<double, 6> a{1, 0, 0, 0, 1, 0};

  friend bool operator==(const Rotation6D&, const Rotation6D&) = default;
};

struct RigidTransform {
  Vec3 translation = Vec3::Zero();
  Rotation6D rotation;
};

namespace detail {

template <class Scalar>
Scalar sqrt_(const Scalar& x) {
  using std::sqrt;
  return sqrt(x);
}

}  // namespace detail

// Gram-Schmidt on the two stored columns; third column is their cross
// product. Templated so it can run on automatic-differentiation scalars.
template <class Scalar>
Eigen::Matrix<Scalar, 3, 3> rot6d_to_matrix_t(const Scalar* r) {
  using V = Eigen::Matrix<Scalar, 3, 1>;
  V a1(r[0], r[1], r[2]);
  V a2(r[3], r[4], r[5]);
  const Scalar n1 = detail::sqrt_(Scalar(a1.squaredNorm()));
  if (!(n1 > Scalar(1e-12))) throw DegenerateRotation("rot6d: first column is zero");
  V b1 = a1 / n1;
  V proj = a2 - b1 * b1.dot(a2);
  const Scalar n2 = detail::sqrt_(Scalar(proj.squaredNorm()));
  if (!(n2 > Scalar(1e-12))) {
    throw DegenerateRotation("rot6d: second column is zero or parallel to the first");
  }
  V b2 = proj / n2;
  V b3 = b1.cross(b2);
  Eigen::Matrix<Scalar, 3, 3> m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b3;
  return m;
}

inline Mat3 rot6d_to_matrix(const Rotation6D& r) {
  for (double v : r.a) {
    if (!std::isfinite(v)) throw DegenerateRotation("rot6d: non-finite component");
  }
  return rot6d_to_matrix_t<double>(r.a.data());
}

inline Rotation6D matrix_to_rot6d(const Mat3& m) {
  if (!m.allFinite()) throw ValidationError("matrix_to_rot6d: non-finite matrix");
  const double err = (m.transpose() * m - Mat3::Identity()).norm();
  if (err > 1e-4 || m.determinant() < 0.0) {
    throw ValidationError("matrix_to_rot6d: matrix is not a proper rotation");
  }
  return Rotation6D{{m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)}};
}

// Rodrigues' formula with a second-order Taylor branch near zero so the
// map stays differentiable at the identity.
template <class Scalar>
Eigen::Matrix<Scalar, 3, 3> axis_angle_to_matrix_t(const Scalar& x, const Scalar& y,
                                                   const Scalar& z) {
  using std::cos;
  using std::sin;
  using M = Eigen::Matrix<Scalar, 3, 3>;
  const Scalar theta2 = x * x + y * y + z * z;
  M k;
  k << Scalar(0), -z, y, z, Scalar(0), -x, -y, x, Scalar(0);
  M id = M::Identity();
  if (theta2 < Scalar(1e-12)) {
    return id + k + Scalar(0.5) * (k * k);
  }
  const Scalar theta = detail::sqrt_(theta2);
  const Scalar s = sin(theta) / theta;
  const Scalar c = (Scalar(1) - cos(theta)) / theta2;
  return id + s * k + c * (k * k);
}

inline Mat3 axis_angle_to_matrix(const Vec3& aa) {
  return axis_angle_to_matrix_t<double>(aa.x(), aa.y(), aa.z());
}

inline Vec3 apply(const RigidTransform& tf, const Vec3& p) {
  return rot6d_to_matrix(tf.rotation) * p + tf.translation;
}

}  // namespace cghoi::geom
