#pragma once

#include <vector>

#include "cghoi/body/body.hpp"
#include "cghoi/geom/mesh.hpp"
#include "cghoi/repr/contact.hpp"
#include "cghoi/repr/frame.hpp"
#include "cghoi/repr/objects.hpp"
#include "cghoi/repr/synth.hpp"

namespace cghoi::metrics {

struct PenetrationReport {
  double ratio = 0.0;         // penetrating / (frames - excluded)
  std::size_t frames = 0;     // all frames seen
  std::size_t penetrating = 0;
  std::size_t excluded = 0;   // frames with a non-watertight body or object mesh
};

// Fraction of frames in which any object surface sample lies inside the
// posed body. sequences[i] is a raw [F,216] block and objects[i] its asset.
inline PenetrationReport penetration_ratio(const body::BodyTemplate& tmpl,
                                           const std::vector<const diffkit::Tensor*>& sequences,
                                           const std::vector<const repr::ObjectAsset*>& objects) {
  if (sequences.size() != objects.size()) throw ValidationError("penetration_ratio: one object per sequence required");
  PenetrationReport r;
  // posing keeps the template topology, so one check covers every frame
  const bool body_ok = geom::is_watertight(tmpl.mesh);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const diffkit::Tensor& frames = *sequences[s];
    if (frames.rank() != 2 || frames.cols() != repr::kFrameWidth) {
      throw ShapeError("penetration_ratio: frames must be [F,216]");
    }
    const bool ok = body_ok && geom::is_watertight(objects[s]->mesh);
    for (std::size_t f = 0; f < frames.rows(); ++f) {
      ++r.frames;
      if (!ok) {
        ++r.excluded;
        continue;
      }
      const auto mesh = body::body_forward(tmpl, repr::body_at(frames, f)).mesh;
      if (repr::cloud_penetrates(mesh, repr::place_cloud(objects[s]->cloud, repr::object_at(frames, f)))) {
        ++r.penetrating;
      }
    }
  }
  const std::size_t counted = r.frames - r.excluded;
  r.ratio = counted ? static_cast<double>(r.penetrating) / static_cast<double>(counted) : 0.0;
  return r;
}

}  // namespace cghoi::metrics
