#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Geometry>
#include <set>

#include "cghoi/body/body.hpp"

using namespace cghoi;
using namespace cghoi::body;

namespace {

const BodyTemplate& tmpl() {
  static const BodyTemplate t = build_template(0);
  return t;
}

BodyParams random_params(Rng& rng, double scale = 0.4) {
  BodyParams p;
  for (double& x : p.v) x = scale * rng.normal();
  return p;
}

}  // namespace

TEST_CASE("template construction", "[body]") {
  const BodyTemplate& t = tmpl();
  CHECK(t.marker_indices.size() == kMarkerCount);
  CHECK(std::set<std::size_t>(t.marker_indices.begin(), t.marker_indices.end()).size() == kMarkerCount);
  CHECK(geom::is_watertight(t.mesh));
  for (std::size_t j = 1; j < kJointCount; ++j) CHECK(t.parents[j] < static_cast<int>(j));
  for (const SkinWeights& w : t.skin) {
    double sum = 0;
    for (double x : w.weight) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
  for (const auto& dirs : t.shape_dirs) {
    for (const geom::Vec3& d : dirs) CHECK(d.norm() <= 0.05 + 1e-12);
  }
  CHECK(build_template(0) == t);
  CHECK_FALSE(build_template(1) == t);
  // Markers reach the hands and feet.
  CHECK(markers_on(t, {kLeftWrist, kRightWrist}).size() >= 2);
  CHECK(markers_on(t, {kLeftAnkle, kRightAnkle, kLeftFoot, kRightFoot}).size() >= 2);
}

TEST_CASE("body_forward basic poses", "[body]") {
  const BodyTemplate& t = tmpl();
  SECTION("rest pose reproduces the template") {
    const BodyOutput out = body_forward(t, BodyParams{});
    for (std::size_t i = 0; i < t.mesh.vertices.size(); ++i) {
      CHECK((out.mesh.vertices[i] - t.mesh.vertices[i]).norm() < 1e-12);
    }
    CHECK(out.mesh.faces == t.mesh.faces);
  }
  SECTION("pure translation moves every marker by t") {
    BodyParams p;
    const geom::Vec3 tr(0.3, -1.2, 2.5);
    p.set_translation(tr);
    const auto rest = body_markers(t, BodyParams{});
    const auto moved = body_markers(t, p);
    for (std::size_t m = 0; m < rest.size(); ++m) CHECK((moved[m] - (rest[m] + tr)).norm() < 1e-12);
  }
  SECTION("pure global rotation rotates about the root") {
    const geom::Vec3 aa(0.3, -0.7, 0.2);
    BodyParams p;
    p.set_global_rot(aa);
    const geom::Mat3 r = Eigen::AngleAxisd(aa.norm(), aa.normalized()).toRotationMatrix();
    const auto rest = body_markers(t, BodyParams{});
    const auto moved = body_markers(t, p);
    for (std::size_t m = 0; m < rest.size(); ++m) {
      const geom::Vec3 expected = r * (rest[m] - t.joints[0]) + t.joints[0];
      CHECK((moved[m] - expected).norm() < 1e-12);
    }
  }
  SECTION("non-finite parameters") {
    BodyParams p;
    p.v[5] = std::nan("");
    CHECK_THROWS_AS(body_forward(t, p), ValidationError);
  }
}

TEST_CASE("rigid equivariance", "[body][property]") {
  const BodyTemplate& t = tmpl();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const BodyParams p = random_params(rng);
    const geom::Vec3 gaa(rng.normal(), rng.normal(), rng.normal());
    const geom::Mat3 g = Eigen::AngleAxisd(gaa.norm(), gaa.normalized()).toRotationMatrix();
    const geom::Vec3 gt(rng.normal(), rng.normal(), rng.normal());

    BodyParams q = p;
    const geom::Mat3 r = g * geom::axis_angle_to_matrix(p.global_rot());
    const Eigen::AngleAxisd composed(r);
    q.set_global_rot(composed.axis() * composed.angle());
    q.set_translation(g * (t.joints[0] + p.translation()) + gt - t.joints[0]);

    const auto a = body_markers(t, p);
    const auto b = body_markers(t, q);
    for (std::size_t m = 0; m < a.size(); ++m) CHECK((b[m] - (g * a[m] + gt)).norm() < 1e-6);
  }
}

TEST_CASE("marker Jacobian matches central differences", "[body][gradient]") {
  const BodyTemplate& t = tmpl();
  Rng rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    BodyParams p = random_params(rng, 0.3);
    if (trial == 0) p = BodyParams{};  // exercises the small-angle branch
    const auto [markers, jac] = marker_jacobian(t, p);
    const auto plain = body_markers(t, p);
    for (std::size_t m = 0; m < markers.size(); ++m) CHECK((markers[m] - plain[m]).norm() < 1e-12);

    Eigen::MatrixXd fd(jac.rows(), jac.cols());
    const double h = 1e-4;
    for (std::size_t k = 0; k < kParamDims; ++k) {
      BodyParams up = p, dn = p;
      up.v[k] += h;
      dn.v[k] -= h;
      const auto a = body_markers(t, up);
      const auto b = body_markers(t, dn);
      for (std::size_t m = 0; m < a.size(); ++m) {
        fd.block(3 * static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k), 3, 1) = (a[m] - b[m]) / (2 * h);
      }
    }
    const double rel = (fd - jac).norm() / jac.norm();
    CHECK(rel < 1e-3);
    for (Eigen::Index c = 0; c < jac.cols(); ++c) {
      const double n = jac.col(c).norm();
      if (n > 1e-3) CHECK((fd.col(c) - jac.col(c)).norm() / n < 1e-3);
    }
  }
}

TEST_CASE("posed mesh keeps its topology", "[body]") {
  const BodyTemplate& t = tmpl();
  Rng rng(2);
  const BodyOutput out = body_forward(t, random_params(rng));
  CHECK(out.mesh.faces == t.mesh.faces);
  CHECK(geom::is_watertight(out.mesh));
}
