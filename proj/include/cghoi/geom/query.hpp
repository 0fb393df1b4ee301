#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cghoi/error.hpp"
#include "cghoi/geom/mesh.hpp"
#include "cghoi/rng.hpp"

namespace cghoi::geom {

// Area-weighted uniform samples on the surface.
inline PointCloud sample_surface_points(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.empty() || mesh.vertices.empty()) throw ValidationError("sample_surface_points: empty mesh");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const Face& f : mesh.faces) {
    total += face_area(mesh, f);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw ValidationError("sample_surface_points: zero surface area");
  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const Face& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
    double u = rng.uniform();
    double v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(f[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(f[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(f[2])];
    cloud.points.push_back(a + u * (b - a) + v * (c - a));
  }
  return cloud;
}

// Greedy farthest-point subset starting at a seeded index. Ties go to the
// lowest index.
inline std::vector<std::size_t> farthest_point_subset(const std::vector<Vec3>& points, std::size_t m,
                                                      std::uint64_t seed) {
  const std::size_t n = points.size();
  if (m > n) throw ValidationError("farthest_point_subset: requested more points than available");
  std::vector<std::size_t> chosen;
  if (m == 0) return chosen;
  chosen.reserve(m);
  Rng rng(seed);
  std::size_t current = rng.index(n);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  for (std::size_t k = 0; k < m; ++k) {
    chosen.push_back(current);
    taken[current] = true;
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (points[i] - points[current]).squaredNorm());
      if (!taken[i] && dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    current = best;
  }
  return chosen;
}

inline std::vector<std::size_t> farthest_point_subset(const PointCloud& cloud, std::size_t m,
                                                      std::uint64_t seed) {
  return farthest_point_subset(cloud.points, m, seed);
}

struct ClosestPoint {
  double distance = 0.0;
  std::size_t index = 0;
};

// Exact nearest cloud point; ties go to the lowest index.
inline ClosestPoint closest_distance(const Vec3& p, const PointCloud& cloud) {
  if (cloud.points.empty()) throw ValidationError("closest_distance: empty cloud");
  std::size_t best = 0;
  double best_d2 = (cloud.points[0] - p).squaredNorm();
  for (std::size_t i = 1; i < cloud.points.size(); ++i) {
    const double d2 = (cloud.points[i] - p).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return {std::sqrt(best_d2), best};
}

namespace detail {

// Returns +1/-1 for a crossing in front of the origin (sign = orientation
// of the face relative to the ray), 0 for a miss, and 2 for a degenerate
// (grazing, edge or vertex) hit.
inline int ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c) {
  constexpr double kEps = 1e-10;
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 pvec = d.cross(e2);
  const double det = e1.dot(pvec);
  const Vec3 tvec = o - a;
  if (std::abs(det) < kEps) {
    // Parallel ray: only matters if it lies in the triangle's plane.
    return std::abs(tvec.dot(e1.cross(e2).normalized())) < 1e-12 ? 2 : 0;
  }
  const double inv = 1.0 / det;
  const double u = tvec.dot(pvec) * inv;
  const Vec3 qvec = tvec.cross(e1);
  const double v = d.dot(qvec) * inv;
  const double t = e2.dot(qvec) * inv;
  constexpr double kEdge = 1e-9;
  if (u < -kEdge || v < -kEdge || u + v > 1.0 + kEdge || t < -kEdge) return 0;
  if (u < kEdge || v < kEdge || u + v > 1.0 - kEdge || t < kEdge) return 2;
  return det > 0 ? 1 : -1;
}

inline int winding_along(const Vec3& p, const Vec3& dir, const TriMesh& mesh, bool& degenerate) {
  int winding = 0;
  degenerate = false;
  for (const Face& f : mesh.faces) {
    const int r = ray_triangle(p, dir, mesh.vertices[static_cast<std::size_t>(f[0])],
                               mesh.vertices[static_cast<std::size_t>(f[1])],
                               mesh.vertices[static_cast<std::size_t>(f[2])]);
    if (r == 2) {
      degenerate = true;
    } else {
      winding += r;
    }
  }
  return winding;
}

}  // namespace detail

// Containment by signed ray crossings (integer winding number along a ray).
// Inside means nonzero winding, so overlapping closed components behave as
// their union. A degenerate hit triggers one re-cast along a jittered ray.
// Callers should check is_watertight() first; the result is meaningless for
// open meshes.
inline bool point_in_mesh(const Vec3& p, const TriMesh& mesh) {
  const Vec3 primary = Vec3(0.5773502691896258, 0.5773502691896258, 0.5773502691896257).normalized();
  const Vec3 jittered = Vec3(0.3139, 0.7071, -0.6337).normalized();
  bool degenerate = false;
  int winding = detail::winding_along(p, primary, mesh, degenerate);
  if (degenerate) winding = detail::winding_along(p, jittered, mesh, degenerate);
  return winding != 0;
}

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

inline Aabb bounds(const std::vector<Vec3>& pts) {
  Aabb box;
  for (const Vec3& p : pts) box.extend(p);
  return box;
}

}  // namespace cghoi::geom
