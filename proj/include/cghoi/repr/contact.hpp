#pragma once

#include <array>

#include "cghoi/body/body.hpp"
#include "cghoi/geom/query.hpp"

namespace cghoi::repr {

using ContactLabels = std::array<double, body::kMarkerCount>;

inline geom::PointCloud place_cloud(const geom::PointCloud& canonical, const geom::RigidTransform& tf) {
  return geom::transformed(canonical, geom::rot6d_to_matrix(tf.rotation), tf.translation);
}

inline ContactLabels contact_labels_for(const std::vector<geom::Vec3>& markers, const geom::PointCloud& world_cloud) {
  if (markers.size() != body::kMarkerCount) throw ValidationError("expected 128 markers");
  ContactLabels out{};
  for (std::size_t j = 0; j < markers.size(); ++j) out[j] = geom::closest_distance(markers[j], world_cloud).distance;
  return out;
}

// Unsigned distance from every marker to the nearest placed cloud point.
inline ContactLabels compute_contact_labels(const body::BodyTemplate& tmpl, const body::BodyParams& params,
                                            const geom::RigidTransform& object,
                                            const geom::PointCloud& canonical_cloud) {
  return contact_labels_for(body::body_markers(tmpl, params), place_cloud(canonical_cloud, object));
}

}  // namespace cghoi::repr
