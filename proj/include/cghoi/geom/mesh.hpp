#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cghoi/error.hpp"
#include "cghoi/geom/rotation.hpp"

namespace cghoi::geom {

using Face = std::array<int, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  bool empty() const { return faces.empty(); }
};

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
};

inline double face_area(const TriMesh& mesh, const Face& f) {
  const Vec3& a = mesh.vertices[static_cast<std::size_t>(f[0])];
  const Vec3& b = mesh.vertices[static_cast<std::size_t>(f[1])];
  const Vec3& c = mesh.vertices[static_cast<std::size_t>(f[2])];
  return 0.5 * (b - a).cross(c - a).norm();
}

// Checks index ranges and drops zero-area faces.
inline void clean_mesh(TriMesh& mesh) {
  const auto n = static_cast<int>(mesh.vertices.size());
  std::vector<Face> kept;
  kept.reserve(mesh.faces.size());
  for (const Face& f : mesh.faces) {
    for (int i : f) {
      if (i < 0 || i >= n) throw ValidationError("mesh face index out of range");
    }
    if (face_area(mesh, f) > 1e-14) kept.push_back(f);
  }
  mesh.faces = std::move(kept);
}

// Closed two-manifold edge test: every directed edge appears once and its
// reverse appears once. A union of closed components passes.
inline bool is_watertight(const TriMesh& mesh) {
  if (mesh.faces.empty()) return false;
  std::map<std::pair<int, int>, int> directed;
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      ++directed[{f[static_cast<std::size_t>(k)], f[static_cast<std::size_t>((k + 1) % 3)]}];
    }
  }
  for (const auto& [edge, count] : directed) {
    if (count != 1) return false;
    auto it = directed.find({edge.second, edge.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

inline TriMesh transformed(const TriMesh& mesh, const Mat3& rot, const Vec3& t) {
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v = rot * v + t;
  return out;
}

inline PointCloud transformed(const PointCloud& cloud, const Mat3& rot, const Vec3& t) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.points.push_back(rot * p + t);
  return out;
}

// Axis-aligned box centered at the origin, outward-facing triangles.
inline TriMesh make_box(const Vec3& size) {
  const Vec3 h = 0.5 * size;
  TriMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(),
                            (i & 4) ? h.z() : -h.z());
  }
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

// Closed elongated blob along segment a->b. The cross-section is an ellipse
// with radii (r1, r2) along the unit axes (e1, e2) orthogonal to the segment;
// both ends are capped with half-ellipsoids of axial radius `cap`.
inline TriMesh make_capsule(const Vec3& a, const Vec3& b, const Vec3& e1, const Vec3& e2,
                            double r1, double r2, double cap, int segments = 12,
                            int cap_rings = 4) {
  const Vec3 axis = (b - a).normalized();
  TriMesh m;
  // Rings from the end at `a` (south pole) to the end at `b` (north pole).
  struct Ring {
    Vec3 center;
    double scale;
  };
  std::vector<Ring> rings;
  for (int i = 1; i <= cap_rings; ++i) {
    const double phi = (M_PI / 2) * i / cap_rings;
    rings.push_back({a - axis * (cap * std::cos(phi)), std::sin(phi)});
  }
  for (int i = cap_rings; i >= 1; --i) {
    const double phi = (M_PI / 2) * i / cap_rings;
    rings.push_back({b + axis * (cap * std::cos(phi)), std::sin(phi)});
  }
  const int south = 0;
  m.vertices.push_back(a - axis * cap);
  for (const Ring& ring : rings) {
    for (int s = 0; s < segments; ++s) {
      const double th = 2 * M_PI * s / segments;
      m.vertices.push_back(ring.center + ring.scale * (r1 * std::cos(th) * e1 + r2 * std::sin(th) * e2));
    }
  }
  const int north = static_cast<int>(m.vertices.size());
  m.vertices.push_back(b + axis * cap);

  // Orientation: e1 x e2 must align with the axis for outward normals.
  const bool flip = e1.cross(e2).dot(axis) < 0;
  auto add = [&](int i, int j, int k) {
    if (flip) {
      m.faces.push_back({i, k, j});
    } else {
      m.faces.push_back({i, j, k});
    }
  };
  const int nr = static_cast<int>(rings.size());
  auto idx = [&](int r, int s) { return 1 + r * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) add(south, idx(0, s + 1), idx(0, s));
  for (int r = 0; r + 1 < nr; ++r) {
    for (int s = 0; s < segments; ++s) {
      add(idx(r, s), idx(r, s + 1), idx(r + 1, s + 1));
      add(idx(r, s), idx(r + 1, s + 1), idx(r + 1, s));
    }
  }
  for (int s = 0; s < segments; ++s) add(north, idx(nr - 1, s), idx(nr - 1, s + 1));
  return m;
}

// Solid cylinder along the x axis, centered at the origin.
inline TriMesh make_cylinder_x(double radius, double length, int segments = 24) {
  TriMesh m;
  const double h = 0.5 * length;
  m.vertices.emplace_back(-h, 0, 0);
  m.vertices.emplace_back(h, 0, 0);
  for (int side = 0; side < 2; ++side) {
    for (int s = 0; s < segments; ++s) {
      const double th = 2 * M_PI * s / segments;
      m.vertices.emplace_back(side ? h : -h, radius * std::cos(th), radius * std::sin(th));
    }
  }
  auto ring = [&](int side, int s) { return 2 + side * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) {
    m.faces.push_back({0, ring(0, s + 1), ring(0, s)});
    m.faces.push_back({1, ring(1, s), ring(1, s + 1)});
    m.faces.push_back({ring(0, s), ring(0, s + 1), ring(1, s + 1)});
    m.faces.push_back({ring(0, s), ring(1, s + 1), ring(1, s)});
  }
  return m;
}

inline TriMesh make_uv_sphere(double radius, int segments = 24, int rings = 12) {
  return make_capsule(Vec3(0, 0, -1e-9), Vec3(0, 0, 1e-9), Vec3::UnitX(), Vec3::UnitY(), radius,
                      radius, radius, segments, rings);
}

inline void append(TriMesh& dst, const TriMesh& src) {
  const auto offset = static_cast<int>(dst.vertices.size());
  dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
  for (Face f : src.faces) {
    for (int& i : f) i += offset;
    dst.faces.push_back(f);
  }
}

// ---------------------------------------------------------------------------
// Wavefront-style triangle files: `v x y z` and `f i j k` (1-based).

inline TriMesh parse_obj(std::istream& in) {
  TriMesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x = 0, y = 0, z = 0;
      if (!(ls >> x >> y >> z)) {
        throw ParseError("obj line " + std::to_string(lineno) + ": bad vertex");
      }
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        try {
          idx.push_back(std::stoi(tok.substr(0, slash)) - 1);
        } catch (const std::exception&) {
          throw ParseError("obj line " + std::to_string(lineno) + ": bad face index");
        }
      }
      if (idx.size() != 3) {
        throw ParseError("obj line " + std::to_string(lineno) + ": only triangles are supported");
      }
      mesh.faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  clean_mesh(mesh);
  return mesh;
}

inline TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open mesh file " + path);
  return parse_obj(in);
}

inline void write_obj(std::ostream& out, const TriMesh& mesh) {
  char buf[96];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.6f %.6f %.6f\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const Face& f : mesh.faces) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
}

inline void save_obj(const std::string& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write mesh file " + path);
  write_obj(out, mesh);
}

}  // namespace cghoi::geom
