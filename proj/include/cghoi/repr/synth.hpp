#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <cstdio>
#include <sstream>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cghoi/repr/contact.hpp"
#include "cghoi/repr/objects.hpp"
#include "cghoi/repr/sequence.hpp"
#include "cghoi/repr/text.hpp"

namespace cghoi::repr {

// ---------------------------------------------------------------------------
// Script catalog

struct ScriptDef {
  std::string key;
  std::string pattern;  // "{obj}" is replaced by the object name
  std::vector<std::string> objects;
};

inline const std::vector<ScriptDef>& script_catalog() {
  static const std::vector<ScriptDef> catalog = {
      {"lift", "lift the {obj}", {"box", "bar", "board"}},
      {"carry", "carry the {obj} forward", {"box", "board", "bar"}},
      {"push", "push the {obj}", {"stool", "board"}},
      {"sit", "sit down on the {obj}", {"stool"}},
      {"set_down", "set the {obj} down", {"board", "box", "bar"}},
      {"pick_up", "pick up the {obj}", {"bar", "box", "board"}},
  };
  return catalog;
}

inline const ScriptDef& find_script(const std::string& key) {
  for (const auto& s : script_catalog()) {
    if (s.key == key) return s;
  }
  throw ValidationError("unknown script: " + key);
}

inline std::string script_text(const ScriptDef& s, const std::string& object) {
  std::string t = s.pattern;
  t.replace(t.find("{obj}"), 5, object);
  return t;
}

// Vocabulary over every catalog text.
inline Vocabulary catalog_vocabulary() {
  std::vector<std::string> texts;
  for (const auto& s : script_catalog()) {
    for (const auto& o : s.objects) texts.push_back(script_text(s, o));
  }
  return Vocabulary(texts);
}

// ---------------------------------------------------------------------------
// Posing

struct Posture {
  double yaw = 0.0;
  double x = 0.0, z = 0.0;  // root position on the ground plane
  double crouch = 0.0;      // hip flexion; knees bend twice as much
  double sit = 0.0;         // 0 standing .. 1 seated (thighs horizontal)
  double bend = 0.0;        // forward spine bend
  double pitch = 0.35;      // arm angle below horizontal, world frame
  double spread = 0.0;      // arm yaw beyond straight ahead (positive closes the hands)
  double walk_phase = 0.0;
  double walk_amp = 0.0;
};

namespace synth_detail {

using geom::Mat3;
using geom::Vec3;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kRestAnkleHeight = 0.09;
inline constexpr double kHandOffset = 0.085;     // wrist joint to hand center
inline constexpr double kGripGap = 0.007;

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }

inline Vec3 log_map(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

inline double smooth(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

}  // namespace synth_detail

inline body::BodyParams pose_body(const body::BodyTemplate& tmpl, const Posture& p,
                                  const std::array<double, body::kShapeDims>& shape) {
  using namespace synth_detail;
  body::BodyParams b;
  for (std::size_t k = 0; k < body::kShapeDims; ++k) b.shape()[k] = shape[k];
  const double swing = p.walk_amp * std::sin(p.walk_phase);
  const double hip_base = -p.crouch - p.sit * kPi / 2;
  const double knee_base = 2.0 * p.crouch + p.sit * kPi / 2;
  b.set_joint_rot(body::kLeftHip, Vec3(hip_base + swing, 0, 0));
  b.set_joint_rot(body::kRightHip, Vec3(hip_base - swing, 0, 0));
  b.set_joint_rot(body::kLeftKnee, Vec3(knee_base + 0.8 * p.walk_amp * std::max(0.0, -std::sin(p.walk_phase)), 0, 0));
  b.set_joint_rot(body::kRightKnee, Vec3(knee_base + 0.8 * p.walk_amp * std::max(0.0, std::sin(p.walk_phase)), 0, 0));
  b.set_joint_rot(body::kLeftAnkle, Vec3(-p.crouch, 0, 0));
  b.set_joint_rot(body::kRightAnkle, Vec3(-p.crouch, 0, 0));
  b.set_joint_rot(body::kSpine1, Vec3(p.bend, 0, 0));
  const double arm = p.pitch - p.bend;
  b.set_joint_rot(body::kLeftShoulder, log_map(rot_x(arm) * rot_y(-(kPi / 2 + p.spread))));
  b.set_joint_rot(body::kRightShoulder, log_map(rot_x(arm) * rot_y(kPi / 2 + p.spread)));
  b.set_global_rot(Vec3(0, p.yaw, 0));
  b.set_translation(Vec3(p.x, 0, p.z));
  // Plant the lower ankle on the rest ankle height.
  const auto posed = body::pose_joints<double>(tmpl, b.v.data());
  const double low = std::min(posed.pos[body::kLeftAnkle].y(), posed.pos[body::kRightAnkle].y());
  b.set_translation(Vec3(p.x, kRestAnkleHeight - low, p.z));
  return b;
}

struct Hands {
  geom::Vec3 left, right;
  geom::Vec3 mid() const { return 0.5 * (left + right); }
};

inline Hands hand_centers(const body::BodyTemplate& tmpl, const body::BodyParams& b) {
  using synth_detail::kHandOffset;
  const auto posed = body::pose_joints<double>(tmpl, b.v.data());
  return {posed.pos[body::kLeftWrist] + posed.rot[body::kLeftWrist] * geom::Vec3(kHandOffset, 0, 0),
          posed.pos[body::kRightWrist] + posed.rot[body::kRightWrist] * geom::Vec3(-kHandOffset, 0, 0)};
}

// True when any placed cloud point lies inside the posed body surface.
inline bool cloud_penetrates(const geom::TriMesh& body_mesh, const geom::PointCloud& world_cloud) {
  const auto box = geom::bounds(body_mesh.vertices);
  for (const auto& p : world_cloud.points) {
    if (box.contains(p) && geom::point_in_mesh(p, body_mesh)) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Sequence generation

struct SynthConfig {
  std::size_t frames = 32;
  std::size_t per_pair = 4;
  std::uint64_t seed = 0;
  std::uint64_t template_seed = 0;
  std::vector<std::string> scripts;  // empty: whole catalog
  std::vector<std::string> objects;  // empty: every built-in object
  double shape_scale = 0.1;
  std::size_t max_attempts = 20;
};

namespace synth_detail {

struct Keyframe {
  Posture posture;
  bool held = true;  // object follows the hands
};

// Grip point in the object frame: near the top-back edge of the side faces.
inline Vec3 grip_offset(const Vec3& extent) {
  return {0.0, std::max(extent.y() / 2 - 0.045, 0.0), std::min(-extent.z() / 2 + 0.055, 0.0)};
}

inline geom::RigidTransform held_transform(const body::BodyTemplate& tmpl, const body::BodyParams& b, double yaw,
                                           const Vec3& extent) {
  const Mat3 r = rot_y(yaw);
  geom::RigidTransform tf;
  tf.translation = hand_centers(tmpl, b).mid() - r * grip_offset(extent);
  tf.rotation = geom::matrix_to_rot6d(r);
  return tf;
}

// Arm spread that leaves kGripGap between each palm surface and the
// object's side, measured on the posed (shaped) hand vertices.
inline double solve_spread(const body::BodyTemplate& tmpl, const std::array<double, body::kShapeDims>& shape,
                           double width) {
  std::vector<std::size_t> left, right;
  for (std::size_t v = 0; v < tmpl.vertex_part.size(); ++v) {
    if (tmpl.vertex_part[v] == body::kLeftWrist) left.push_back(v);
    if (tmpl.vertex_part[v] == body::kRightWrist) right.push_back(v);
  }
  const double target = width / 2 + kGripGap;
  double lo = -0.6, hi = 0.6;  // the palms close in as the spread grows
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    Posture p;
    p.spread = mid;
    const auto mesh = body::body_forward(tmpl, pose_body(tmpl, p, shape)).mesh;
    double inner_left = std::numeric_limits<double>::infinity();
    double inner_right = -std::numeric_limits<double>::infinity();
    for (std::size_t v : left) inner_left = std::min(inner_left, mesh.vertices[v].x());
    for (std::size_t v : right) inner_right = std::max(inner_right, mesh.vertices[v].x());
    const double mid_x = 0.5 * (inner_left + inner_right);
    if (std::min(inner_left - mid_x, mid_x - inner_right) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

// Lowered grasp posture: u in [0,1] from upright to a deep crouch.
inline Posture lowered(Posture p, double u, double top_pitch) {
  p.crouch = 0.9 * u;
  p.bend = 0.8 * u;
  p.pitch = top_pitch + (1.3 - top_pitch) * u;
  return p;
}

// Lowering at which the held object's bottom touches the floor (u = 1 when
// the floor is out of reach).
inline double solve_floor_reach(const body::BodyTemplate& tmpl, const std::array<double, body::kShapeDims>& shape,
                                const Posture& base, double top_pitch, const Vec3& extent) {
  auto bottom = [&](double u) {
    const auto b = pose_body(tmpl, lowered(base, u, top_pitch), shape);
    return held_transform(tmpl, b, base.yaw, extent).translation.y() - extent.y() / 2;
  };
  if (bottom(1.0) > 0.0) return 1.0;
  if (bottom(0.0) <= 0.0) return 0.0;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (bottom(mid) > 0.0 ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace synth_detail

// One procedurally scripted interaction. Frames are float-rounded before the
// contact channels are derived, so recomputing labels from the stored
// channels reproduces them exactly.
inline diffkit::Tensor generate_frames(const body::BodyTemplate& tmpl, const std::string& script,
                                       const ObjectAsset& object, std::size_t frames, Rng& rng,
                                       double shape_scale = 0.1) {
  using namespace synth_detail;
  find_script(script);
  if (frames < 2) throw ValidationError("a sequence needs at least 2 frames");

  std::array<double, body::kShapeDims> shape{};
  for (double& s : shape) s = rng.uniform(-shape_scale, shape_scale);
  Posture base;
  base.yaw = rng.uniform(-kPi, kPi);
  base.x = rng.uniform(-0.5, 0.5);
  base.z = rng.uniform(-0.5, 0.5);
  const Vec3 ext = object.extent;
  const double top_pitch = rng.uniform(0.25, 0.45);
  base.spread = solve_spread(tmpl, shape, ext.x());
  base.pitch = top_pitch;
  const Vec3 forward = rot_y(base.yaw) * Vec3::UnitZ();
  const double dt = 1.0 / kFps;

  std::vector<Keyframe> keys(frames);
  std::vector<geom::RigidTransform> object_tf(frames);
  auto tau_of = [&](std::size_t i) { return static_cast<double>(i) / static_cast<double>(frames - 1); };

  if (script == "lift") {
    const double u0 = solve_floor_reach(tmpl, shape, base, top_pitch, ext);
    const double end = rng.uniform(0.8, 0.95);
    for (std::size_t i = 0; i < frames; ++i) keys[i].posture = lowered(base, u0 * (1.0 - smooth(tau_of(i) / end)), top_pitch);
  } else if (script == "carry" || script == "push") {
    const bool push = script == "push";
    const double u = push ? solve_floor_reach(tmpl, shape, base, top_pitch, ext) : 0.0;
    const double speed = push ? rng.uniform(0.2, 0.35) : rng.uniform(0.4, 0.7);
    const double cadence = rng.uniform(1.6, 2.0);
    const double phase0 = rng.uniform(0.0, 2 * kPi);
    for (std::size_t i = 0; i < frames; ++i) {
      Posture p = lowered(base, u, top_pitch);
      const double t = static_cast<double>(i) * dt;
      const Vec3 pos = Vec3(base.x, 0, base.z) + forward * speed * t;
      p.x = pos.x();
      p.z = pos.z();
      p.walk_phase = phase0 + 2 * kPi * cadence * t;
      p.walk_amp = push ? 0.15 : 0.3;
      keys[i].posture = p;
    }
  } else if (script == "sit") {
    const double back = rng.uniform(0.30, 0.34);
    const double start = rng.uniform(0.05, 0.15);
    for (std::size_t i = 0; i < frames; ++i) {
      const double s = smooth((tau_of(i) - start) / 0.75);
      Posture p = base;
      p.sit = s;
      p.bend = 0.25 * s;
      p.pitch = 0.9;
      p.spread = -0.25;
      const Vec3 pos = Vec3(base.x, 0, base.z) - forward * back * s;
      p.x = pos.x();
      p.z = pos.z();
      keys[i] = {p, false};
    }
  } else {  // set_down / pick_up: the latter is the former played backwards
    const double u_floor = solve_floor_reach(tmpl, shape, base, top_pitch, ext);
    const double tc = rng.uniform(0.5, 0.6);
    for (std::size_t i = 0; i < frames; ++i) {
      const double tau = tau_of(i);
      Posture p;
      if (tau <= tc) {
        p = lowered(base, u_floor * smooth(tau / tc), top_pitch);
        keys[i] = {p, true};
      } else {
        p = lowered(base, u_floor * (1.0 - 0.6 * smooth((tau - tc - 0.15) / 0.3)), top_pitch);
        p.spread = base.spread - 0.4 * smooth((tau - tc) / 0.2);
        keys[i] = {p, false};
      }
    }
  }

  // Body parameters, then object transforms.
  std::vector<body::BodyParams> bodies(frames);
  for (std::size_t i = 0; i < frames; ++i) bodies[i] = pose_body(tmpl, keys[i].posture, shape);
  if (script == "sit") {
    const auto last = body::body_forward(tmpl, bodies.back());
    const auto posed = body::pose_joints<double>(tmpl, bodies.back().v.data());
    const Mat3 r = rot_y(base.yaw);
    Vec3 center = posed.pos[body::kPelvis] + forward * 0.04;
    double top = std::numeric_limits<double>::infinity();
    for (const auto& v : last.mesh.vertices) {
      const Vec3 local = r.transpose() * (v - center);
      if (std::abs(local.x()) < ext.x() / 2 + 0.02 && std::abs(local.z()) < ext.z() / 2 + 0.02) {
        top = std::min(top, v.y());
      }
    }
    center.y() = top - 0.008 - ext.y() / 2;
    geom::RigidTransform tf{center, geom::matrix_to_rot6d(r)};
    std::fill(object_tf.begin(), object_tf.end(), tf);
  } else {
    geom::RigidTransform last_held;
    for (std::size_t i = 0; i < frames; ++i) {
      if (keys[i].held) last_held = held_transform(tmpl, bodies[i], base.yaw, ext);
      object_tf[i] = last_held;
    }
  }
  if (script == "pick_up") {
    std::reverse(bodies.begin(), bodies.end());
    std::reverse(object_tf.begin(), object_tf.end());
  }

  diffkit::Tensor out({frames, kFrameWidth});
  for (std::size_t i = 0; i < frames; ++i) {
    float* row = out.data() + i * kFrameWidth;
    Frame f;
    f.body = bodies[i];
    f.object = object_tf[i];
    write_frame(f, row);
    const Frame rounded = read_frame(row);
    const auto labels = compute_contact_labels(tmpl, rounded.body, rounded.object, object.cloud);
    for (std::size_t j = 0; j < body::kMarkerCount; ++j) row[kContactOffset + j] = static_cast<float>(labels[j]);
  }
  return out;
}

inline bool frames_penetrate(const body::BodyTemplate& tmpl, const diffkit::Tensor& frames,
                             const geom::PointCloud& canonical_cloud) {
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    const auto mesh = body::body_forward(tmpl, body_at(frames, i)).mesh;
    if (cloud_penetrates(mesh, place_cloud(canonical_cloud, object_at(frames, i)))) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  std::uint64_t template_seed = 0;
  std::size_t frames = 32;
  Vocabulary vocab = catalog_vocabulary();
  std::vector<Sequence> sequences;

  std::vector<const Sequence*> split(const std::string& name) const {
    std::vector<const Sequence*> out;
    for (const auto& s : sequences) {
      if (s.split == name) out.push_back(&s);
    }
    return out;
  }
};

struct PairKey {
  std::string script, object;
};

inline std::vector<PairKey> dataset_pairs(const SynthConfig& cfg) {
  for (const auto& s : cfg.scripts) find_script(s);
  for (const auto& o : cfg.objects) {
    if (!is_builtin_object(o)) throw ValidationError("unknown object: " + o);
  }
  std::vector<PairKey> pairs;
  for (const auto& s : script_catalog()) {
    if (!cfg.scripts.empty() && std::find(cfg.scripts.begin(), cfg.scripts.end(), s.key) == cfg.scripts.end()) continue;
    for (const auto& o : s.objects) {
      if (!cfg.objects.empty() && std::find(cfg.objects.begin(), cfg.objects.end(), o) == cfg.objects.end()) continue;
      pairs.push_back({s.key, o});
    }
  }
  if (pairs.empty()) throw ValidationError("configuration selects no (script, object) pair");
  return pairs;
}

// Held-out splits by (script, object) pair: about 10% of pairs each for
// val and test once there are at least three pairs.
inline std::map<std::string, std::string> assign_splits(const std::vector<PairKey>& pairs, std::uint64_t seed) {
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5117));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const std::size_t n = pairs.size();
  const std::size_t held = n >= 3 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.1 * n))) : 0;
  std::map<std::string, std::string> out;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = pairs[order[k]];
    out[p.script + "/" + p.object] = k < held ? "test" : k < 2 * held ? "val" : "train";
  }
  return out;
}

inline Sequence make_sequence(const body::BodyTemplate& tmpl, const Vocabulary& vocab, const std::string& script,
                              const ObjectAsset& object, const std::string& id, std::size_t frames,
                              std::uint64_t seed, double shape_scale = 0.1, std::size_t max_attempts = 20) {
  Sequence s;
  s.id = id;
  s.text = script_text(find_script(script), object.name);
  s.cond.tokens = vocab.tokenize(s.text);
  s.cond.cloud = object.cloud;
  s.cond.object_ref = object.name;
  Rng rng(seed);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    s.frames = generate_frames(tmpl, script, object, frames, rng, shape_scale);
    if (!frames_penetrate(tmpl, s.frames, object.cloud)) return s;
  }
  throw RuntimeFailure("could not generate a penetration-free '" + s.text + "' sequence");
}

inline Dataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.frames < 4 || cfg.frames % 4 != 0) throw ValidationError("frames must be a positive multiple of 4");
  if (cfg.per_pair == 0) throw ValidationError("per_pair must be positive");
  const auto pairs = dataset_pairs(cfg);
  const auto splits = assign_splits(pairs, cfg.seed);
  const auto tmpl = body::build_template(cfg.template_seed);
  Dataset ds;
  ds.template_seed = cfg.template_seed;
  ds.frames = cfg.frames;
  std::map<std::string, ObjectAsset> assets;
  for (const auto& p : pairs) {
    if (!assets.count(p.object)) assets.emplace(p.object, builtin_object(p.object));
    for (std::size_t k = 0; k < cfg.per_pair; ++k) {
      char num[16];
      std::snprintf(num, sizeof(num), "%03zu", k);
      const std::string id = p.object + "-" + p.script + "-" + num;
      Sequence s = make_sequence(tmpl, ds.vocab, p.script, assets.at(p.object), id, cfg.frames,
                                 mix_seed(cfg.seed, hash_name(id)), cfg.shape_scale, cfg.max_attempts);
      s.split = splits.at(p.script + "/" + p.object);
      ds.sequences.push_back(std::move(s));
    }
  }
  return ds;
}

// On disk: manifest.tsv, dataset.info, seq/<id>.cghoi, objects/<name>.obj.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "seq");
  fs::create_directories(dir / "objects");
  std::string manifest;
  std::vector<std::string> objects;
  for (const auto& s : ds.sequences) {
    const std::string rel = "seq/" + s.id + ".cghoi";
    save_sequence(s, (dir / rel).string());
    manifest += s.id + "\t" + s.split + "\t" + rel + "\t" + s.text + "\n";
    if (std::find(objects.begin(), objects.end(), s.cond.object_ref) == objects.end()) {
      objects.push_back(s.cond.object_ref);
    }
  }
  diffkit::detail::write_file((dir / "manifest.tsv").string(), manifest);
  for (const auto& o : objects) {
    if (is_builtin_object(o)) geom::save_obj((dir / "objects" / (o + ".obj")).string(), builtin_object(o).mesh);
  }
  diffkit::detail::write_file((dir / "dataset.info").string(),
                              "template_seed = " + std::to_string(ds.template_seed) +
                                  "\nframes = " + std::to_string(ds.frames) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::istringstream info(diffkit::detail::read_file((dir / "dataset.info").string()));
    std::string line;
    while (std::getline(info, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      key.erase(key.find_last_not_of(' ') + 1);
      value.erase(0, value.find_first_not_of(' '));
      if (key == "template_seed") ds.template_seed = std::stoull(value);
      if (key == "frames") ds.frames = std::stoull(value);
    }
  }
  std::istringstream manifest(diffkit::detail::read_file((dir / "manifest.tsv").string()));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int k = 0; k < 3; ++k) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) throw ParseError("manifest line " + std::to_string(lineno) + ": expected 4 fields");
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    fields.push_back(line.substr(start));
    Sequence s = load_sequence((dir / fields[2]).string());
    s.id = fields[0];
    s.split = fields[1];
    s.text = fields[3];
    s.cond.object_ref = s.id.substr(0, s.id.find('-'));
    if (s.frame_count() != ds.frames) throw ValidationError("sequence " + s.id + " has a different frame count");
    ds.sequences.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cghoi::repr
