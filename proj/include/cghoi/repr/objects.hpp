#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cghoi/geom/mesh.hpp"
#include "cghoi/geom/query.hpp"
#include "cghoi/rng.hpp"

namespace cghoi::repr {

inline constexpr std::size_t kCloudSize = 256;

struct ObjectAsset {
  std::string name;
  geom::TriMesh mesh;
  geom::Vec3 extent;  // axis-aligned size in the object frame
  geom::PointCloud cloud;  // canonical frame, float-representable
};

inline geom::PointCloud float_rounded(geom::PointCloud c) {
  for (auto& p : c.points) {
    for (int i = 0; i < 3; ++i) p[i] = static_cast<float>(p[i]);
  }
  return c;
}

// The cloud is sampled once per object from a name-derived seed and reused.
inline geom::PointCloud canonical_cloud(const geom::TriMesh& mesh, const std::string& name) {
  return float_rounded(geom::sample_surface_points(mesh, kCloudSize, hash_name(name)));
}

inline const std::vector<std::string>& builtin_object_names() {
  static const std::vector<std::string> names = {"box", "board", "stool", "bar"};
  return names;
}

inline bool is_builtin_object(const std::string& name) {
  for (const auto& n : builtin_object_names()) {
    if (n == name) return true;
  }
  return false;
}

inline ObjectAsset make_asset(std::string name, geom::TriMesh mesh) {
  geom::clean_mesh(mesh);
  if (mesh.empty()) throw ValidationError("object mesh '" + name + "' has no faces");
  ObjectAsset a;
  const auto box = geom::bounds(mesh.vertices);
  a.extent = box.hi - box.lo;
  a.cloud = canonical_cloud(mesh, name);
  a.mesh = std::move(mesh);
  a.name = std::move(name);
  return a;
}

inline ObjectAsset builtin_object(const std::string& name) {
  using geom::Vec3;
  if (name == "box") return make_asset(name, geom::make_box(Vec3(0.30, 0.24, 0.24)));
  if (name == "board") return make_asset(name, geom::make_box(Vec3(0.34, 0.45, 0.03)));
  if (name == "stool") return make_asset(name, geom::make_box(Vec3(0.34, 0.40, 0.34)));
  if (name == "bar") return make_asset(name, geom::make_cylinder_x(0.03, 0.33, 24));
  throw ValidationError("unknown object: " + name);
}

// A built-in name or a path to a triangle mesh file.
inline ObjectAsset resolve_object(const std::string& ref) {
  if (is_builtin_object(ref)) return builtin_object(ref);
  if (!std::filesystem::exists(ref)) throw ValidationError("object '" + ref + "' is neither built in nor a file");
  return make_asset(std::filesystem::path(ref).stem().string(), geom::load_obj(ref));
}

}  // namespace cghoi::repr
