#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rwmlab/env.hpp"

using namespace rwmlab;

namespace {

EnvParams noiseless() {
  EnvParams p;
  p.process_noise_std = 0.0;
  return p;
}

std::vector<double> zero_action(const PolicyContext& ctx) {
  return std::vector<double>(ctx.prev_action.size(), 0.0);
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("reset: same seed gives identical states") {
  for (const char* name : {"pendulum-po", "cartpole-swingup", "hopper1d"}) {
    auto env = make_env(name);
    auto a = env->reset_seeded(123);
    auto b = env->reset_seeded(123);
    CHECK(a.state.x == b.state.x);
    CHECK(a.observation == b.observation);
    auto c = env->reset_seeded(124);
    CHECK(a.state.x != c.state.x);
  }
}

TEST_CASE("reset: pendulum angles are centered over the documented range") {
  auto env = make_env("pendulum-po");
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) sum += env->reset_seeded(i).state.x[0];
  CHECK(std::abs(sum / n) < 0.1);
}

TEST_CASE("reset: hopper starts airborne in the documented height band") {
  auto env = make_env("hopper1d");
  for (int i = 0; i < 10000; ++i) {
    auto r = env->reset_seeded(i);
    CHECK(r.state.x[0] >= 0.8);
    CHECK(r.state.x[0] <= 1.2);
    CHECK(r.privileged[0] == 0.0);  // contact flag
  }
}

TEST_CASE("pendulum: stable equilibrium at zero stays put") {
  auto env = make_env("pendulum-po", noiseless());
  EnvState s;
  s.x = {0.0, 0.0};
  Rng rng(0);
  auto r = env->step(s, {0.0}, rng);
  CHECK(r.next_state.x[0] == 0.0);
  CHECK(r.next_state.x[1] == 0.0);
}

TEST_CASE("pendulum: inverted equilibrium holds for one step then diverges when nudged") {
  auto env = make_env("pendulum-po", noiseless());
  EnvState s;
  s.x = {M_PI, 0.0};
  Rng rng(0);
  auto r = env->step(s, {0.0}, rng);
  CHECK(std::abs(std::abs(r.next_state.x[0]) - M_PI) < 1e-12);

  s.x = {M_PI - 0.01, 0.0};
  EnvState cur = s;
  for (int i = 0; i < 100; ++i) cur = env->step(cur, {0.0}, rng).next_state;
  CHECK(std::abs(std::abs(cur.x[0]) - M_PI) > 0.1);
}

TEST_CASE("pendulum: undamped energy drifts below 1% over 500 steps") {
  EnvParams p = noiseless();
  p.damping_scale = 0.0;
  auto env = make_env("pendulum-po", p);
  auto energy = [](const EnvState& s) {
    return 0.5 * s.x[1] * s.x[1] - 9.81 * std::cos(s.x[0]);
  };
  // The symplectic step keeps energy oscillating in a bounded band; drift is
  // the secular trend of the band, measured by windowed means.
  for (double th0 : {0.5, 1.0, 2.0}) {
    EnvState cur;
    cur.x = {th0, 0.0};
    Rng rng(0);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 500; ++i) {
      cur = env->step(cur, {0.0}, rng).next_state;
      if (i < 100) first += energy(cur);
      if (i >= 400) last += energy(cur);
    }
    first /= 100.0;
    last /= 100.0;
    CHECK(std::abs(last - first) / (first + 9.81) < 0.01);
  }
}

TEST_CASE("integrator order: Richardson ratio sits in the first-order band") {
  auto state_at = [&](double dt) {
    EnvParams p = noiseless();
    p.dt = dt;
    auto env = make_env("pendulum-po", p);
    EnvState s;
    s.x = {1.3, 0.2};
    Rng rng(0);
    const int steps = static_cast<int>(std::lround(100 * 0.02 / dt));
    for (int i = 0; i < steps; ++i) s = env->step(s, {0.5}, rng).next_state;
    return s.x;
  };
  const auto a = state_at(0.02), b = state_at(0.01), c = state_at(0.005);
  const double d1 = std::hypot(a[0] - b[0], a[1] - b[1]);
  const double d2 = std::hypot(b[0] - c[0], b[1] - c[1]);
  const double ratio = d1 / d2;
  CHECK(ratio > 1.5);
  CHECK(ratio < 2.5);
}

TEST_CASE("hopper: free-fall contact time matches the closed form") {
  auto env = make_env("hopper1d", noiseless());
  EnvState s;
  s.x = {1.0, 0.0, 0.0, 0.0};
  Rng rng(0);
  const double t_expect = std::sqrt(2.0 * (1.0 - 0.5) / 9.81);
  int first_contact = -1;
  EnvState cur = s;
  for (int i = 0; i < 40 && first_contact < 0; ++i) {
    auto r = env->step(cur, {0.0}, rng);
    if (r.privileged[0] == 1.0) first_contact = i + 1;
    cur = r.next_state;
  }
  REQUIRE(first_contact > 0);
  CHECK(std::abs(first_contact * 0.02 - t_expect) <= 0.02 + 1e-9);
}

TEST_CASE("hopper: contact flag equals foot height <= 0 at every recorded step") {
  auto env = make_env("hopper1d");
  auto policy = scripted_mixture_policy("hopper1d");
  auto trajs = collect_trajectories(*env, policy, 4, 150, 7);
  for (const auto& tr : trajs) {
    for (std::size_t t = 0; t < tr.length(); ++t) {
      const bool flag = tr.priv[t][0] >= 0.5;
      const bool foot_down = tr.priv[t][1] <= 0.0;
      CHECK(flag == foot_down);
    }
  }
}

TEST_CASE("hopper: termination sets the privileged termination flag") {
  auto env = make_env("hopper1d", noiseless());
  EnvState s;
  s.x = {1.2, -3.5, 0.0, 0.0};  // slammed downward
  Rng rng(0);
  EnvState cur = s;
  bool terminated = false;
  for (int i = 0; i < 60 && !terminated; ++i) {
    auto r = env->step(cur, {0.0}, rng);
    terminated = r.terminated;
    if (terminated) CHECK(r.privileged[2] == 1.0);
    cur = r.next_state;
  }
  CHECK(terminated);
}

TEST_CASE("cartpole: terminates when the cart leaves the rail") {
  auto env = make_env("cartpole-swingup", noiseless());
  EnvState s;
  s.x = {2.3, 2.0, 0.0, 0.0};
  Rng rng(0);
  auto r = env->step(s, {10.0}, rng);
  bool term = r.terminated;
  for (int i = 0; i < 10 && !term; ++i) {
    r = env->step(r.next_state, {10.0}, rng);
    term = r.terminated;
  }
  CHECK(term);
  CHECK(r.privileged[1] == 1.0);
}

TEST_CASE("cartpole: resting at the bottom stays put") {
  auto env = make_env("cartpole-swingup", noiseless());
  EnvState s;
  s.x = {0.0, 0.0, 0.0, 0.0};
  Rng rng(0);
  auto r = env->step(s, {0.0}, rng);
  for (double v : r.next_state.x) CHECK(v == 0.0);
}

TEST_CASE("action clipping is recorded") {
  auto env = make_env("pendulum-po", noiseless());
  EnvState s;
  s.x = {0.5, 0.0};
  Rng rng(0);
  CHECK(env->clip_events() == 0);
  env->step(s, {5.0}, rng);
  CHECK(env->clip_events() == 1);
  env->step(s, {1.0}, rng);
  CHECK(env->clip_events() == 1);
}

TEST_CASE("observe_noisy: zero std is the identity, stats match, seeded draws repeat") {
  std::vector<double> obs = {1.0, 2.0}, act = {0.5};
  {
    Rng rng(1);
    auto o = obs;
    auto a = act;
    observe_noisy(o, a, 0.0, rng);
    CHECK(o == obs);
    CHECK(a == act);
  }
  {
    Rng r1(2), r2(2);
    auto o1 = obs, o2 = obs, a1 = act, a2 = act;
    observe_noisy(o1, a1, 0.1, r1);
    observe_noisy(o2, a2, 0.1, r2);
    CHECK(o1 == o2);
    CHECK(a1 == a2);
  }
  {
    Rng rng(3);
    double sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      std::vector<double> o = {0.0}, a = {};
      observe_noisy(o, a, 0.1, rng);
      sq += o[0] * o[0];
    }
    const double std = std::sqrt(sq / n);
    CHECK(std == doctest::Approx(0.1).epsilon(0.02));
  }
}

TEST_CASE("collect: inverted start under zero action emits constant (0, -1)") {
  EnvParams p = noiseless();
  auto env = make_env("pendulum-po", p);
  // Drive the stepper directly from the exact equilibrium.
  EnvState s;
  s.x = {M_PI, 0.0};
  Rng rng(0);
  for (int t = 0; t < 50; ++t) {
    auto r = env->step(s, {0.0}, rng);
    CHECK(std::abs(r.observation[0] - 0.0) < 1e-6);
    CHECK(std::abs(r.observation[1] - (-1.0)) < 1e-6);
    s = r.next_state;
  }
}

TEST_CASE("collect: episode counts, lengths and termination flags") {
  auto env = make_env("hopper1d");
  auto policy = [](const PolicyContext& ctx) {
    return std::vector<double>{ctx.rng.uniform(0.0, 20.0)};
  };
  auto trajs = collect_trajectories(*env, policy, 8, 200, 21);
  CHECK(trajs.size() == 8);
  for (const auto& tr : trajs) {
    CHECK(tr.length() <= 201);  // max_len transitions -> max_len + 1 rows
    for (std::size_t t = 0; t + 1 < tr.length(); ++t) CHECK(tr.done[t] == 0);
    if (tr.length() < 201) CHECK(tr.done.back() == 1);
  }
}

TEST_CASE("collect: rewards recorded when a preset is bound") {
  auto env = make_env("pendulum-po");
  auto spec = reward_preset("pendulum-track");
  auto trajs = collect_trajectories(*env, zero_action, 2, 50, 5, &spec);
  bool any_nonzero = false;
  for (const auto& tr : trajs)
    for (std::size_t t = 0; t + 1 < tr.length(); ++t)
      if (tr.reward[t] != 0.0) any_nonzero = true;
  CHECK(any_nonzero);
}

TEST_CASE("traj files: byte-identical for identical seeds, round-trips") {
  namespace fs = std::filesystem;
  auto env = make_env("pendulum-po");
  auto policy = scripted_mixture_policy("pendulum-po");
  const auto dir = fs::temp_directory_path();
  const auto p1 = (dir / "rwmlab_t1.traj").string();
  const auto p2 = (dir / "rwmlab_t2.traj").string();

  TrajFileHeader h;
  h.env_name = "pendulum-po";
  h.obs_dim = 2;
  h.act_dim = 1;
  h.priv_dim = 2;
  h.command_dim = 2;
  h.seed = 99;
  auto t1 = collect_trajectories(*env, policy, 3, 60, 99);
  auto t2 = collect_trajectories(*env, policy, 3, 60, 99);
  save_trajectories(p1, h, t1);
  save_trajectories(p2, h, t2);
  CHECK(file_bytes(p1) == file_bytes(p2));

  auto [h2, loaded] = load_trajectories(p1);
  CHECK(h2.env_name == "pendulum-po");
  CHECK(h2.seed == 99);
  REQUIRE(loaded.size() == t1.size());
  CHECK(loaded[0].length() == t1[0].length());
  CHECK(loaded[1].obs[3][0] == doctest::Approx(t1[1].obs[3][0]).epsilon(1e-6));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("collect: validation errors") {
  auto env = make_env("pendulum-po");
  CHECK_THROWS_AS(collect_trajectories(*env, zero_action, 0, 10, 1), UsageError);
}
