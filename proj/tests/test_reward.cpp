#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rwmlab/reward.hpp"
#include "rwmlab/rng.hpp"

using namespace rwmlab;

namespace {

struct Scratch {
  std::vector<double> obs, priv, act, prev, cmd;
  RewardInputs inputs(double dt = 0.02) const { return {obs, priv, act, prev, cmd, dt}; }
};

}  // namespace

TEST_CASE("exp tracking returns the full weight at zero error") {
  RewardTerm t{RewardKind::ExpTracking, "track", 0.7, 0.25, {0}, 0, {}};
  Scratch s;
  s.obs = {1.23};
  s.cmd = {1.23};
  s.act = s.prev = {0.0};
  CHECK(eval_term(t, s.inputs(), nullptr) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("exp tracking matches the printed kernel at sigma 0.25") {
  RewardTerm t{RewardKind::ExpTracking, "track", 1.0, 0.25, {0}, 0, {}};
  Scratch s;
  s.obs = {0.0};
  s.cmd = {0.25};  // squared error 0.0625 = sigma^2
  s.act = s.prev = {0.0};
  CHECK(eval_term(t, s.inputs(), nullptr) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(eval_term(t, s.inputs(), nullptr) == doctest::Approx(0.367879).epsilon(1e-5));
}

TEST_CASE("action rate vanishes for repeated actions and is signed by its weight") {
  RewardTerm t{RewardKind::ActionRate, "rate", -0.01, 0.25, {}, 0, {}};
  Scratch s;
  s.obs = {};
  s.act = {0.4, -0.2};
  s.prev = {0.4, -0.2};
  s.cmd = {};
  CHECK(eval_term(t, s.inputs(), nullptr) == 0.0);
  s.prev = {0.0, 0.0};
  CHECK(eval_term(t, s.inputs(), nullptr) == doctest::Approx(-0.01 * (0.16 + 0.04)));
}

TEST_CASE("quadratic penalty evaluates the printed formula with a table weight") {
  RewardTerm t{RewardKind::QuadraticPenalty, "vz", -2.0, 0.25, {0}, 0, {}};
  Scratch s;
  s.obs = {0.5};
  s.act = s.prev = {};
  s.cmd = {};
  CHECK(eval_term(t, s.inputs(), nullptr) == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("air time accrues in flight and is credited at touch-down") {
  RewardTerm t{RewardKind::AirTime, "air", 0.5, 0.25, {0}, 0, {}};
  Scratch s;
  s.obs = {0.0};
  s.act = s.prev = {};
  s.cmd = {};
  std::vector<double> accum(1, 0.0);
  const double dt = 0.02;
  for (int i = 0; i < 10; ++i) {
    s.obs[0] = 0.0;  // airborne
    CHECK(eval_term(t, s.inputs(dt), &accum) == 0.0);
  }
  s.obs[0] = 1.0;  // touch-down
  CHECK(eval_term(t, s.inputs(dt), &accum) == doctest::Approx(0.5 * 10 * dt).epsilon(1e-12));
  CHECK(eval_term(t, s.inputs(dt), &accum) == 0.0);  // accumulator was reset
}

TEST_CASE("spec: empty evaluates to zero, two terms add exactly") {
  RewardSpec empty;
  Scratch s;
  s.obs = {1.0, 2.0};
  s.act = s.prev = {0.0};
  s.cmd = {0.0, 0.0};
  auto st = empty.make_state();
  CHECK(empty.eval(s.inputs(), &st) == 0.0);

  RewardSpec two;
  two.terms = {
      {RewardKind::QuadraticPenalty, "a", -1.0, 0.25, {0}, 0, {}},
      {RewardKind::Clearance, "b", 2.0, 0.25, {1}, 0, {}},
  };
  auto st2 = two.make_state();
  std::vector<double> per;
  const double total = two.eval(s.inputs(), &st2, &per);
  CHECK(total == per[0] + per[1]);
  CHECK(per[0] == -1.0);
  CHECK(per[1] == 4.0);
}

TEST_CASE("pendulum preset at the exact target with zero action rate pays the positive weights") {
  auto spec = reward_preset("pendulum-track");
  Scratch s;
  s.obs = {0.0, -1.0};       // at the inverted target
  s.priv = {0.0, 0.0};       // no spin
  s.act = s.prev = {0.0};
  s.cmd = {0.0, -1.0};
  auto st = spec.make_state();
  double positive_sum = 0.0;
  for (const auto& t : spec.terms)
    if (t.weight > 0.0) positive_sum += t.weight;
  CHECK(spec.eval(s.inputs(), &st) == doctest::Approx(positive_sum).epsilon(1e-12));
}

TEST_CASE("sign contract: negative-weight terms never return positive values") {
  Rng rng(5);
  auto spec = reward_preset("anymal-analog");
  Scratch s;
  s.obs.resize(57);
  s.priv.resize(10);
  s.act.resize(12);
  s.prev.resize(12);
  s.cmd.resize(3);
  auto st = spec.make_state();
  for (int trial = 0; trial < 200; ++trial) {
    for (auto& v : s.obs) v = rng.uniform(-2.0, 2.0);
    for (auto& v : s.priv) v = rng.uniform(0.0, 1.0);
    for (auto& v : s.act) v = rng.uniform(-1.0, 1.0);
    for (auto& v : s.prev) v = rng.uniform(-1.0, 1.0);
    for (auto& v : s.cmd) v = rng.uniform(-1.0, 1.0);
    std::vector<double> per;
    spec.eval(s.inputs(), &st, &per);
    for (std::size_t i = 0; i < spec.terms.size(); ++i) {
      if (spec.terms[i].weight < 0.0) CHECK(per[i] <= 0.0);
      if (spec.terms[i].weight > 0.0) CHECK(per[i] >= 0.0);
      if (spec.terms[i].weight == 0.0) CHECK(per[i] == 0.0);
    }
  }
}

TEST_CASE("exp kernel is bounded by the weight and monotone in the error") {
  RewardTerm t{RewardKind::ExpTracking, "track", 1.5, 0.5, {0}, 0, {}};
  Scratch s;
  s.act = s.prev = {};
  s.cmd = {0.0};
  double prev_val = 2.0;
  for (double err = 0.0; err < 3.0; err += 0.1) {
    s.obs = {err};
    const double v = eval_term(t, s.inputs(), nullptr);
    CHECK(v > 0.0);
    CHECK(v <= 1.5);
    CHECK(v < prev_val);
    prev_val = v;
  }
}

TEST_CASE("imagination consistency: identical inputs give bit-identical totals") {
  auto spec = reward_preset("hopper-hop");
  Scratch s;
  s.obs = {0.7, -0.3, 0.1};
  s.priv = {1.0, 0.0, 0.0};
  s.act = {5.0};
  s.prev = {4.0};
  s.cmd = {1.0};
  auto st1 = spec.make_state();
  auto st2 = spec.make_state();
  const double a = spec.eval(s.inputs(), &st1);
  const double b = spec.eval(s.inputs(), &st2);
  CHECK(a == b);
}

TEST_CASE("selector out of range names the offending term") {
  RewardSpec spec;
  spec.terms = {{RewardKind::QuadraticPenalty, "broken", -1.0, 0.25, {9}, 0, {}}};
  try {
    spec.validate(2, 2, 1, 2);
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("broken") != std::string::npos);
  }
}

TEST_CASE("robot presets carry the published weight tables") {
  auto anymal = reward_preset("anymal-analog");
  auto find = [](const RewardSpec& s, const std::string& n) {
    for (const auto& t : s.terms)
      if (t.name == n) return t.weight;
    return 1e99;
  };
  CHECK(find(anymal, "lin_vel_tracking") == 1.0);
  CHECK(find(anymal, "ang_vel_tracking") == 0.5);
  CHECK(find(anymal, "lin_vel_z") == -2.0);
  CHECK(find(anymal, "ang_vel_xy") == -0.05);
  CHECK(find(anymal, "joint_torque") == -2.5e-5);
  CHECK(find(anymal, "joint_accel") == -2.5e-7);
  CHECK(find(anymal, "action_rate") == -0.01);
  CHECK(find(anymal, "feet_air_time") == 0.5);
  CHECK(find(anymal, "undesired_contacts") == -1.0);
  CHECK(find(anymal, "flat_orientation") == -5.0);
  CHECK(find(anymal, "foot_clearance") == 0.0);
  CHECK(find(anymal, "joint_deviation") == 0.0);

  auto g1 = reward_preset("g1-analog");
  CHECK(find(g1, "action_rate") == -0.05);
  CHECK(find(g1, "feet_air_time") == 0.0);
  CHECK(find(g1, "foot_clearance") == 1.0);
  CHECK(find(g1, "joint_deviation") == -1.0);
}
