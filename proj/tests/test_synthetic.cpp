#include <doctest.h>

#include <cmath>

#include "loopdyn/error.hpp"
#include "loopdyn/synthetic.hpp"

using namespace loopdyn;

namespace {

std::vector<Eigen::VectorXd> run_latents(const SyntheticSpec& spec, const Eigen::VectorXd& z0, int steps,
                                         NudgeKind kind = NudgeKind::Replace) {
  SyntheticGenerator gen(spec);
  LoopConfig c;
  c.nudge_kind = kind;
  c.seed_text = encode_payload(z0);
  c.steps = steps;
  c.max_context_chars = 4000;
  const auto t = run_trajectory(c, gen);
  std::vector<Eigen::VectorXd> out{z0};
  for (const auto& r : t.steps) out.push_back(latent_roundtrip(r.output));
  return out;
}

}  // namespace

TEST_CASE("payload round trip") {
  Eigen::VectorXd z(3);
  z << 0.1, -1.0 / 3.0, 12345.678901234567;
  const auto text = "filler " + encode_payload(z) + " more words";
  const auto back = latent_roundtrip(text);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(back[i] == z[i]);  // bitwise

  const auto q = latent_roundtrip(encode_payload(z, true));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(q[i] - z[i]) <= 0.5e-6 + 1e-12);

  CHECK_THROWS_AS(latent_roundtrip("no payload here"), Error);
  CHECK_THROWS_AS(latent_roundtrip("<<z:1,abc>>"), Error);
  CHECK_THROWS_AS(latent_roundtrip("<<z:>>"), Error);
  // A malformed trailing block does not hide an earlier good one.
  CHECK(latent_roundtrip(encode_payload(z) + " <<z:oops>>")[0] == z[0]);
}

TEST_CASE("spec validation") {
  SyntheticSpec s;
  s.contraction_rate = 1.0;
  CHECK_THROWS_AS(SyntheticGenerator{s}, Error);
  s = SyntheticSpec{};
  s.regime = Regime::Period2;
  CHECK_THROWS_AS(SyntheticGenerator{s}, Error);
  s.regime = Regime::MultiBasin;
  s.basin_centers = {Eigen::Vector2d(0, 0)};
  CHECK_THROWS_AS(SyntheticGenerator{s}, Error);
  CHECK_THROWS_AS(parse_regime("chaos"), Error);
}

TEST_CASE("contractive orbit decays geometrically") {
  SyntheticSpec s;
  s.contraction_rate = 0.8;
  s.noise_scale = 0.0;
  const Eigen::Vector2d z0(3.0, -4.0);
  const auto zs = run_latents(s, z0, 25);
  for (std::size_t t = 0; t < zs.size(); ++t) {
    CHECK(zs[t].norm() == doctest::Approx(std::pow(0.8, static_cast<double>(t)) * 5.0).epsilon(1e-9));
  }
}

TEST_CASE("period2 orbit has period two") {
  SyntheticSpec s;
  s.regime = Regime::Period2;
  s.noise_scale = 0.0;
  s.basin_centers = {Eigen::Vector2d(-4, 1), Eigen::Vector2d(4, 1)};
  const auto zs = run_latents(s, Eigen::Vector2d(-3.5, 1.2), 20, NudgeKind::Append);
  for (std::size_t t = 0; t + 2 < zs.size(); ++t) CHECK((zs[t + 2] - zs[t]).norm() < 1e-9);
  CHECK((zs[1] - zs[0]).norm() > 1.0);
}

TEST_CASE("drift orbit matches closed form") {
  SyntheticSpec s;
  s.regime = Regime::Drift;
  s.noise_scale = 0.0;
  s.drift_velocity = Eigen::Vector2d(0.1, -0.2);
  const Eigen::Vector2d z0(1, 1);
  const auto zs = run_latents(s, z0, 15);
  for (std::size_t t = 0; t < zs.size(); ++t) {
    CHECK((zs[t] - (z0 + static_cast<double>(t) * s.drift_velocity)).norm() < 1e-9);
  }
}

TEST_CASE("absorbing regime settles into one basin") {
  SyntheticSpec s;
  s.regime = Regime::Absorbing;
  s.contraction_rate = 0.5;
  s.noise_scale = 0.3;
  s.burn_in = 5;
  s.basin_centers = {Eigen::Vector2d(-4, 0), Eigen::Vector2d(4, 0)};
  SyntheticGenerator gen(s);
  LoopConfig c;
  c.nudge_kind = NudgeKind::Replace;
  c.seed_text = "start";
  c.steps = 100;
  for (int run = 0; run < 5; ++run) {
    c.run_id = run;
    const auto t = run_trajectory(c, gen);
    const int final_label = nearest_center(s, latent_roundtrip(t.steps.back().output));
    for (int k = s.burn_in; k < 100; ++k) {
      CHECK(nearest_center(s, latent_roundtrip(t.steps[static_cast<std::size_t>(k)].output)) == final_label);
    }
  }
}

TEST_CASE("noise-free maps agree with regime_map iteration") {
  for (auto regime : {Regime::Contractive, Regime::Period2, Regime::Absorbing, Regime::Drift, Regime::MultiBasin}) {
    SyntheticSpec s;
    s.regime = regime;
    s.noise_scale = 0.0;
    s.contraction_rate = 0.7;
    s.basin_centers = {Eigen::Vector2d(-4, 0), Eigen::Vector2d(4, 0)};
    Eigen::VectorXd z = Eigen::Vector2d(0.5, 2.0);
    const auto zs = run_latents(s, z, 12);
    for (std::size_t t = 0; t < zs.size(); ++t) {
      CHECK((zs[t] - z).norm() < 1e-9);
      z = regime_map(s, z);
    }
  }
}

TEST_CASE("temperature zero is deterministic across streams") {
  SyntheticSpec s;
  s.noise_scale = 0.5;
  s.initial_jitter = 0.5;
  SyntheticGenerator gen(s);
  Rng r1(1), r2(2);
  GenerationRequest req{"seed", "f", std::nullopt, 0.0, 0, 120};
  CHECK(gen.generate(req, r1) == gen.generate(req, r2));
  req.temperature = 1.0;
  CHECK(gen.generate(req, r1) != gen.generate(req, r2));
}

TEST_CASE("output carries a payload at both ends and respects the token budget") {
  SyntheticSpec s;
  SyntheticGenerator gen(s);
  Rng rng(3);
  GenerationRequest req{encode_payload(Eigen::Vector2d(1, 2)), "f", std::nullopt, 1.0, 4, 5};
  const auto out = gen.generate(req, rng);
  CHECK(out.rfind("<<z:", 0) == 0);
  CHECK(out.substr(out.size() - 2) == ">>");
  int tokens = 1;
  for (char ch : out) tokens += ch == ' ';
  CHECK(tokens <= 5);
}

TEST_CASE("trailing text dilutes the latent toward the hash point") {
  SyntheticSpec s;
  s.dilution_half_tokens = 10.0;
  const Eigen::Vector2d z(1, 1);
  const std::string tail = " a b c d e f g h i j";
  const auto diluted = read_latent(s, encode_payload(z) + tail);
  const Eigen::VectorXd expected = 0.5 * Eigen::VectorXd(z) + 0.5 * hash_point(s, tail);
  CHECK((diluted - expected).norm() < 1e-12);
  CHECK((read_latent(s, encode_payload(z)) - Eigen::VectorXd(z)).norm() == 0.0);
}
