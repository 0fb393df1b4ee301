#pragma once

#include <unsupported/Eigen/AutoDiff>

#include "cghoi/body/body.hpp"
#include "cghoi/diffkit/tensor.hpp"
#include "cghoi/repr/frame.hpp"

namespace cghoi::diffusion {

using diffkit::Tensor;

struct GuidanceEval {
  double cost = 0.0;
  Tensor grad;  // [F,216] with respect to the denormalized frame channels
};

namespace detail {

// d(rot6d_to_matrix)/d(six inputs), as 9 rows (row-major entries) x 6.
inline Eigen::Matrix<double, 9, 6> rot6d_jacobian(const double* r, geom::Mat3& value) {
  using AD = Eigen::AutoDiffScalar<Eigen::Matrix<double, 6, 1>>;
  std::array<AD, 6> x;
  for (int i = 0; i < 6; ++i) x[static_cast<std::size_t>(i)] = AD(r[i], 6, i);
  const auto m = geom::rot6d_to_matrix_t<AD>(x.data());
  Eigen::Matrix<double, 9, 6> jac;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      value(a, b) = m(a, b).value();
      const auto& d = m(a, b).derivatives();
      if (d.size() == 0) {
        jac.row(a * 3 + b).setZero();
      } else {
        jac.row(a * 3 + b) = d.transpose();
      }
    }
  }
  return jac;
}

}  // namespace detail

// Mean over frames and markers of (recomputed - predicted contact)^2, where
// the recomputed distance runs from each posed marker to the nearest point
// of the object cloud placed by the frame's object channels. Frames are
// denormalized [F,216]. The gradient treats the nearest-point choice as
// fixed (a subgradient at ties).
inline GuidanceEval guidance_cost(const body::BodyTemplate& tmpl, const Tensor& frames, const geom::PointCloud& cloud,
                                  bool with_grad = true) {
  if (frames.rank() != 2 || frames.cols() != repr::kFrameWidth) {
    throw ShapeError("guidance_cost expects [F,216], got " + diffkit::shape_str(frames.shape()));
  }
  if (cloud.points.empty()) throw ValidationError("guidance_cost: empty object cloud");
  if (!frames.all_finite()) throw ValidationError("guidance_cost: non-finite frames");
  const std::size_t nf = frames.rows();
  const std::size_t nm = tmpl.marker_indices.size();
  const double norm = 1.0 / static_cast<double>(nf * nm);

  GuidanceEval out;
  if (with_grad) out.grad = Tensor(frames.shape());
  double total = 0.0;
  std::vector<geom::Vec3> world(cloud.size());
  for (std::size_t f = 0; f < nf; ++f) {
    const float* row = frames.data() + f * repr::kFrameWidth;
    const body::BodyParams bp = repr::body_at(frames, f);
    double r6[6];
    for (std::size_t i = 0; i < 6; ++i) r6[i] = row[repr::kObjectOffset + 3 + i];
    const geom::Vec3 trans(row[repr::kObjectOffset], row[repr::kObjectOffset + 1], row[repr::kObjectOffset + 2]);

    geom::Mat3 rot;
    Eigen::Matrix<double, 9, 6> rjac;
    if (with_grad) {
      rjac = detail::rot6d_jacobian(r6, rot);
    } else {
      rot = geom::rot6d_to_matrix_t<double>(r6);
    }
    for (std::size_t k = 0; k < cloud.size(); ++k) world[k] = rot * cloud.points[k] + trans;
    geom::PointCloud placed{world};

    std::vector<geom::Vec3> markers;
    body::MarkerJacobian mjac;
    if (with_grad) {
      auto mj = body::marker_jacobian(tmpl, bp);
      markers = std::move(mj.first);
      mjac = std::move(mj.second);
    } else {
      markers = body::body_markers(tmpl, bp);
    }

    Eigen::Matrix<double, 1, body::kParamDims> gbody = Eigen::Matrix<double, 1, body::kParamDims>::Zero();
    geom::Vec3 gtrans = geom::Vec3::Zero();
    geom::Mat3 grot = geom::Mat3::Zero();
    float* grow = with_grad ? out.grad.data() + f * repr::kFrameWidth : nullptr;
    for (std::size_t j = 0; j < nm; ++j) {
      const auto hit = geom::closest_distance(markers[j], placed);
      const double diff = hit.distance - row[repr::kContactOffset + j];
      total += diff * diff;
      if (!with_grad) continue;
      const double g = 2.0 * diff * norm;
      grow[repr::kContactOffset + j] = static_cast<float>(-g);
      if (hit.distance < 1e-12) continue;
      const geom::Vec3 u = (markers[j] - placed.points[hit.index]) / hit.distance;
      gbody += g * u.transpose() * mjac.middleRows(3 * static_cast<Eigen::Index>(j), 3);
      gtrans -= g * u;
      grot -= g * u * cloud.points[hit.index].transpose();
    }
    if (!with_grad) continue;
    for (Eigen::Index i = 0; i < gbody.cols(); ++i) grow[repr::kBodyOffset + static_cast<std::size_t>(i)] = gbody(0, i);
    for (int i = 0; i < 3; ++i) grow[repr::kObjectOffset + static_cast<std::size_t>(i)] = gtrans[i];
    Eigen::Matrix<double, 1, 9> gflat;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) gflat(0, a * 3 + b) = grot(a, b);
    const Eigen::Matrix<double, 1, 6> g6 = gflat * rjac;
    for (int i = 0; i < 6; ++i) grow[repr::kObjectOffset + 3 + static_cast<std::size_t>(i)] = g6(0, i);
  }
  out.cost = total * norm;
  return out;
}

}  // namespace cghoi::diffusion
