#include <catch2/catch_amalgamated.hpp>

#include "cghoi/denoiser/denoiser.hpp"
#include "gradcheck.hpp"

using namespace cghoi;
using namespace cghoi::diffkit;
using namespace cghoi::denoiser;
using testutil::grad_check;
using testutil::project;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Tensor::randn(std::move(s), rng, stddev);
}

DenoiserConfig tiny_config(bool weighting = true) {
  DenoiserConfig cfg;
  cfg.latent = 16;
  cfg.heads = 4;
  cfg.time_dim = 16;
  cfg.vocab = 12;
  cfg.groups = 4;
  cfg.contact_weighting = weighting;
  return cfg;
}

Condition some_condition(std::uint64_t seed) {
  Condition c;
  c.tokens = {3, 1, 7};
  c.cloud = rand_tensor({repr::kCloudSize, 3}, seed, 0.2);
  return c;
}

Tensor aggregate_value(const Tensor& hyps, const Tensor& contact) {
  Tape tape(false);
  return aggregate_hypotheses(tape.constant(hyps), tape.constant(contact)).value();
}

}  // namespace

TEST_CASE("aggregation falls back to the mean when all distances are equal") {
  Tensor hyps({1, kHypothesisWidth});
  Tensor contact({1, kMarkers}, 0.3f);
  for (std::size_t j = 0; j < kMarkers; ++j)
    for (std::size_t k = 0; k < kObjectDims; ++k) hyps[j * kObjectDims + k] = static_cast<float>(j % 4) + k;
  Tensor out = aggregate_value(hyps, contact);
  // j % 4 averages to 1.5 exactly over 128 markers
  for (std::size_t k = 0; k < kObjectDims; ++k) CHECK(out[k] == 1.5f + static_cast<float>(k));
}

TEST_CASE("aggregation with a single weighted marker returns its hypothesis") {
  Tape tape(false);
  Tensor hyps = rand_tensor({1, 3 * kObjectDims}, 4);
  Tensor contact({1, 3}, {0.0f, 1.0f, 1.0f});
  Tensor out = aggregate_hypotheses(tape.constant(hyps), tape.constant(contact)).value();
  for (std::size_t k = 0; k < kObjectDims; ++k) CHECK(out[k] == hyps[k]);
}

TEST_CASE("aggregation of three markers weights by max minus distance") {
  Tape tape(false);
  Tensor hyps({1, 3 * kObjectDims});
  const float a[3] = {1.0f, 4.0f, 10.0f};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < kObjectDims; ++k) hyps[j * kObjectDims + k] = a[j] * static_cast<float>(k + 1);
  Tensor contact({1, 3}, {0.0f, 1.0f, 2.0f});
  Tensor out = aggregate_hypotheses(tape.constant(hyps), tape.constant(contact)).value();
  for (std::size_t k = 0; k < kObjectDims; ++k) {
    const float expect = (2.0f * a[0] + 1.0f * a[1]) * static_cast<float>(k + 1) / 3.0f;
    CHECK(out[k] == Catch::Approx(expect).epsilon(1e-6));
  }
  // negative predictions count by magnitude
  Tensor mirrored({1, 3}, {0.0f, -1.0f, 2.0f});
  CHECK(aggregate_hypotheses(tape.constant(hyps), tape.constant(mirrored)).value() == out);
}

TEST_CASE("aggregation stays inside the hypothesis range") {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng.index(20);
    Tensor hyps = Tensor::randn({2, m * kObjectDims}, rng, 3.0);
    Tensor contact = Tensor::randn({2, m}, rng, 1.0);
    Tensor out = aggregate_value(hyps, contact);
    for (std::size_t f = 0; f < 2; ++f) {
      for (std::size_t k = 0; k < kObjectDims; ++k) {
        float lo = 1e30f, hi = -1e30f;
        for (std::size_t j = 0; j < m; ++j) {
          const float v = hyps[f * m * kObjectDims + j * kObjectDims + k];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        const float o = out[f * kObjectDims + k];
        const float slack = 1e-5f * std::max(1.0f, std::abs(o));
        REQUIRE(o >= lo - slack);
        REQUIRE(o <= hi + slack);
      }
    }
  }
}

TEST_CASE("aggregation applies the contact denormalization") {
  Tape tape(false);
  Tensor hyps = rand_tensor({1, 3 * kObjectDims}, 5);
  // raw (0, 1, 1) maps to distances (1, 0, 0) -> markers 1 and 2 share
  Tensor contact({1, 3}, {0.0f, 1.0f, 1.0f});
  Tensor out = aggregate_hypotheses(tape.constant(hyps), tape.constant(contact), {1.0, 2.0, 2.0}, {1.0, -2.0, -2.0})
                   .value();
  for (std::size_t k = 0; k < kObjectDims; ++k) {
    CHECK(out[k] == Catch::Approx(0.5 * (hyps[kObjectDims + k] + hyps[2 * kObjectDims + k])).margin(1e-6));
  }
}

TEST_CASE("aggregation gradient matches finite differences") {
  auto f = [](Tape& t, const std::vector<Var>& in) {
    return project(t, aggregate_hypotheses(in[0], in[1], {0.5, 1.5, 1.0, 2.0, 0.7}, {0.1, 0.0, 0.2, -0.1, 0.05}));
  };
  // contact values kept well apart from ties and zero crossings
  Tensor contact({3, 5}, {0.9f, 0.2f, 1.4f, -0.7f, 2.1f, -1.6f, 0.5f, 0.3f, 1.1f, -0.8f, 0.6f, -1.2f, 2.2f, 0.4f, 1.3f});
  auto r = grad_check(f, {rand_tensor({3, 5 * kObjectDims}, 8), contact});
  CHECK(r.rel_error < 1e-3);
}

TEST_CASE("aggregation fallback gradient spreads evenly") {
  Tape tape;
  Var h = tape.variable(rand_tensor({1, 4 * kObjectDims}, 9));
  Var c = tape.variable(Tensor({1, 4}, 0.5f));
  tape.backward(sum(aggregate_hypotheses(h, c)));
  for (float g : tape.grad(h)->values()) CHECK(g == 0.25f);
  if (const Tensor* gc = tape.grad(c))
    for (float g : gc->values()) CHECK(g == 0.0f);
}

TEST_CASE("aggregation rejects mismatched shapes") {
  Tape tape(false);
  CHECK_THROWS_AS(aggregate_hypotheses(tape.constant(Tensor({2, 18})), tape.constant(Tensor({2, 3}))), ShapeError);
  CHECK_THROWS_AS(aggregate_hypotheses(tape.constant(Tensor({2, 27})), tape.constant(Tensor({3, 3}))), ShapeError);
}

TEST_CASE("attention over identical key rows returns that row plus the residual") {
  Tape tape(false);
  Tensor eye({2, 2}, {1, 0, 0, 1});
  AttentionWeights w{tape.constant(eye), tape.constant(eye), tape.constant(eye), tape.constant(eye)};
  Var q = tape.constant(Tensor({1, 2}, {0.3f, -0.4f}));
  Var kv = tape.constant(Tensor({2, 2}, {1.5f, 2.5f, 1.5f, 2.5f}));
  Tensor out = multi_head_attention(q, kv, w, 1).value();
  CHECK(out[0] == 0.3f + 1.5f);
  CHECK(out[1] == -0.4f + 2.5f);
}

TEST_CASE("attention matches a hand evaluation for two frames") {
  Tape tape(false);
  Tensor eye({2, 2}, {1, 0, 0, 1});
  AttentionWeights w{tape.constant(eye), tape.constant(eye), tape.constant(eye), tape.constant(eye)};
  const double h[2][2] = {{1.0, 0.0}, {0.5, -1.0}};
  const double kv[4][2] = {{0.0, 1.0}, {2.0, 0.0}, {-1.0, 1.0}, {1.0, 1.0}};
  Tensor ht({2, 2}), kt({4, 2});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) ht[i * 2 + j] = static_cast<float>(h[i][j]);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) kt[i * 2 + j] = static_cast<float>(kv[i][j]);
  std::vector<Tensor> probs;
  Tensor out = multi_head_attention(tape.constant(ht), tape.constant(kt), w, 1, &probs).value();
  for (int i = 0; i < 2; ++i) {
    double logits[4], z = 0.0;
    for (int r = 0; r < 4; ++r) {
      logits[r] = std::exp((h[i][0] * kv[r][0] + h[i][1] * kv[r][1]) / std::sqrt(2.0));
      z += logits[r];
    }
    for (int j = 0; j < 2; ++j) {
      double acc = h[i][j];
      for (int r = 0; r < 4; ++r) acc += logits[r] / z * kv[r][j];
      CHECK(out[static_cast<std::size_t>(i * 2 + j)] == Catch::Approx(acc).epsilon(1e-6));
    }
  }
  REQUIRE(probs.size() == 1);
  for (std::size_t i = 0; i < 2; ++i) {
    double row = 0.0;
    for (std::size_t r = 0; r < 4; ++r) row += probs[0][i * 4 + r];
    CHECK(std::abs(row - 1.0) < 1e-6);
  }
}

TEST_CASE("attention rows sum to one for every head") {
  Tape tape(false);
  Rng rng(3);
  AttentionWeights w{tape.constant(Tensor::randn({8, 8}, rng, 1.0)), tape.constant(Tensor::randn({8, 8}, rng, 1.0)),
                     tape.constant(Tensor::randn({8, 8}, rng, 1.0)), tape.constant(Tensor::randn({8, 8}, rng, 1.0))};
  std::vector<Tensor> probs;
  multi_head_attention(tape.constant(Tensor::randn({5, 8}, rng, 2.0)), tape.constant(Tensor::randn({10, 8}, rng, 2.0)),
                       w, 4, &probs);
  REQUIRE(probs.size() == 4);
  for (const Tensor& p : probs) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double row = 0.0;
      for (std::size_t r = 0; r < p.cols(); ++r) row += p.at(i, r);
      CHECK(std::abs(row - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("cross attention reads pre-update features") {
  Tape tape(false);
  Rng rng(4);
  std::array<AttentionWeights, 3> w;
  for (auto& a : w)
    a = {tape.constant(Tensor::randn({4, 4}, rng, 1.0)), tape.constant(Tensor::randn({4, 4}, rng, 1.0)),
         tape.constant(Tensor::randn({4, 4}, rng, 1.0)), tape.constant(Tensor::randn({4, 4}, rng, 1.0))};
  std::array<Var, 3> x = {tape.constant(Tensor::randn({3, 4}, rng, 1.0)),
                          tape.constant(Tensor::randn({3, 4}, rng, 1.0)),
                          tape.constant(Tensor::randn({3, 4}, rng, 1.0))};
  auto out = cross_attention_block(x, w, 2);
  CHECK(out[2].value() == multi_head_attention(x[2], concat({x[0], x[1]}, 0), w[2], 2).value());
  CHECK(out[0].value() == multi_head_attention(x[0], concat({x[1], x[2]}, 0), w[0], 2).value());
  std::array<Var, 3> bad = {x[0], x[1], tape.constant(Tensor({2, 4}))};
  CHECK_THROWS_AS(cross_attention_block(bad, w, 2), ShapeError);
}

TEST_CASE("text encoder pools tokens order-free") {
  Denoiser net(tiny_config(), 1);
  Tape tape(false);
  Tensor a = net.encode_text(tape, {1, 5, 9, 5}).value();
  Tensor b = net.encode_text(tape, {5, 9, 5, 1}).value();
  CHECK(a == b);
  CHECK(a.shape() == Shape{1, 16});
  // nothing pools to zeros, so only the bias remains
  Tensor empty = net.encode_text(tape, {}).value();
  for (std::size_t k = 0; k < 16; ++k) CHECK(empty[k] == net.params().get("text/proj_b")[k]);
  CHECK_THROWS_AS(net.encode_text(tape, {12}), ValidationError);
}

TEST_CASE("geometry encoder is permutation invariant") {
  Denoiser net(tiny_config(), 2);
  Tape tape(false);
  Tensor cloud = rand_tensor({repr::kCloudSize, 3}, 6, 0.3);
  Tensor shuffled = cloud;
  Rng rng(7);
  for (std::size_t i = repr::kCloudSize - 1; i > 0; --i) {
    const std::size_t j = rng.index(i + 1);
    for (std::size_t k = 0; k < 3; ++k) std::swap(shuffled[i * 3 + k], shuffled[j * 3 + k]);
  }
  CHECK(net.encode_geometry(tape, cloud).value() == net.encode_geometry(tape, shuffled).value());
  CHECK_THROWS_AS(net.encode_geometry(tape, Tensor({10, 3})), ValidationError);
}

TEST_CASE("geometry encoder of repeated points equals the single point path") {
  Denoiser net(tiny_config(), 2);
  Tape tape(false);
  Tensor cloud({repr::kCloudSize, 3});
  for (std::size_t i = 0; i < repr::kCloudSize; ++i) {
    cloud[i * 3] = 0.1f;
    cloud[i * 3 + 1] = -0.2f;
    cloud[i * 3 + 2] = 0.05f;
  }
  Tensor enc = net.encode_geometry(tape, cloud).value();
  auto P = [&](const char* n) { return net.p(tape, n); };
  Var x = tape.constant(Tensor({1, 3}, {0.1f, -0.2f, 0.05f}));
  Var h = relu(linear(x, P("geom/w1"), P("geom/b1")));
  h = relu(linear(h, P("geom/w2"), P("geom/b2")));
  h = linear(h, P("geom/w3"), P("geom/b3"));
  Tensor single = linear(h, P("geom/proj_w"), P("geom/proj_b")).value();
  for (std::size_t k = 0; k < enc.size(); ++k) CHECK(enc[k] == Catch::Approx(single[k]).margin(1e-6));
}

TEST_CASE("denoiser output shapes for 32 frames") {
  DenoiserConfig cfg = tiny_config();
  cfg.latent = 32;
  cfg.groups = 8;
  Denoiser net(cfg, 3);
  Tape tape(false);
  Var z = tape.constant(rand_tensor({32, repr::kFrameWidth}, 1));
  DenoiserOutput out = net.denoise(tape, z, 10, some_condition(2));
  CHECK(out.body.shape() == Shape{32, 79});
  CHECK(out.contact.shape() == Shape{32, 128});
  CHECK(out.hypotheses.shape() == Shape{32, 128 * 9});
  CHECK(out.object.shape() == Shape{32, 9});
  CHECK(out.flat().shape() == Shape{32, 216});
  CHECK(out.object.value() == aggregate_value(out.hypotheses.value(), out.contact.value()));
  CHECK(out.flat().value().all_finite());
}

TEST_CASE("denoiser without contact weighting has a direct object head") {
  Denoiser net(tiny_config(false), 3);
  CHECK_FALSE(net.params().contains("head/hyp_w"));
  Tape tape(false);
  DenoiserOutput out = net.denoise(tape, tape.constant(rand_tensor({8, 216}, 1)), 4, some_condition(2));
  CHECK_FALSE(out.has_hypotheses);
  CHECK(out.object.shape() == Shape{8, 9});
}

TEST_CASE("denoiser is deterministic and condition sensitive") {
  Denoiser net(tiny_config(), 4);
  Tensor z = rand_tensor({8, 216}, 1);
  Tape t1(false), t2(false);
  Tensor a = net.denoise(t1, t1.constant(z), 7, some_condition(2)).flat().value();
  Tensor b = net.denoise(t2, t2.constant(z), 7, some_condition(2)).flat().value();
  CHECK(a == b);
  Tensor masked = net.denoise(t1, t1.constant(z), 7, Condition::null()).flat().value();
  CHECK_FALSE(masked == a);
  Tensor other_t = net.denoise(t1, t1.constant(z), 8, some_condition(2)).flat().value();
  CHECK_FALSE(other_t == a);
}

TEST_CASE("denoiser rejects bad inputs") {
  Denoiser net(tiny_config(), 4);
  Tape tape(false);
  Condition c = some_condition(2);
  CHECK_THROWS_AS(net.denoise(tape, tape.constant(Tensor({8, 216})), 100, c), ValidationError);
  CHECK_THROWS_AS(net.denoise(tape, tape.constant(Tensor({6, 216})), 1, c), ValidationError);
  CHECK_THROWS_AS(net.denoise(tape, tape.constant(Tensor({8, 215})), 1, c), ShapeError);
  Tensor bad({8, 216});
  bad[5] = std::nanf("");
  CHECK_THROWS_AS(net.denoise(tape, tape.constant(bad), 1, c), ValidationError);
  DenoiserConfig cfg = tiny_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(Denoiser(cfg, 1), ValidationError);
}

TEST_CASE("denoiser gradient with respect to the noisy input matches finite differences") {
  Denoiser net(tiny_config(), 5);
  Condition c = some_condition(2);
  auto f = [&](Tape& t, const std::vector<Var>& in) {
    return project(t, net.denoise(t, in[0], 6, c).flat(), 17);
  };
  auto r = grad_check(f, {rand_tensor({8, 216}, 3)}, 1e-2);
  INFO("rel error " << r.rel_error);
  CHECK(r.rel_error < 1e-3);
}

TEST_CASE("denoiser parameter gradients match finite differences") {
  Denoiser net(tiny_config(), 6);
  Condition c = some_condition(2);
  Tensor z = rand_tensor({8, 216}, 4);
  Tape tape;
  Var out = project(tape, net.denoise(tape, tape.constant(z), 3, c).flat(), 23);
  tape.backward(out);
  for (const char* name : {"text/embed", "geom/w1", "null/text", "h/b2/conv1_w", "attn3/o/wk", "head/hyp_w",
                           "c/b4/skip_w", "time/w1"}) {
    Tensor& w = net.params().get(name);
    const Tensor* g = tape.param_grad(w);
    Rng rng(hash_name(name));
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t k = rng.index(w.size());
      const double analytic = g ? (*g)[k] : 0.0;
      const float orig = w[k];
      auto eval = [&](float v) {
        w[k] = v;
        Tape t(false);
        const double r = project(t, net.denoise(t, t.constant(z), 3, c).flat(), 23).value().item();
        w[k] = orig;
        return r;
      };
      const double numeric = (eval(orig + 1e-2f) - eval(orig - 1e-2f)) / 2e-2;
      INFO(name << "[" << k << "] analytic " << analytic << " numeric " << numeric);
      CHECK(std::abs(analytic - numeric) <= 2e-2 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST_CASE("denoiser adopts stored weights") {
  Denoiser a(tiny_config(), 7);
  Denoiser b(tiny_config(), a.params());
  CHECK(b.params() == a.params());
  ParamStore partial;
  partial.add("text/embed", a.params().get("text/embed"));
  CHECK_THROWS_AS(Denoiser(tiny_config(), partial), ValidationError);
}
