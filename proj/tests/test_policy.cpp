#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rwmlab/policy.hpp"

using namespace rwmlab;

namespace {

PPOConfig small_ppo() {
  PPOConfig cfg;
  cfg.imagination_envs = 16;
  cfg.imagination_steps = 20;
  cfg.actor_hidden = {16, 16};
  cfg.critic_hidden = {16, 16};
  cfg.epochs = 2;
  cfg.mini_batches = 2;
  cfg.model_update_steps = 5;
  cfg.real_episode_len = 60;
  cfg.eval_episode_len = 60;
  return cfg;
}

WorldModelConfig small_wm(const EnvSpec& spec) {
  WorldModelConfig cfg;
  cfg.history_horizon = 4;
  cfg.forecast_horizon = 2;
  cfg.hidden = {12, 12};
  cfg.head_hidden = 12;
  cfg.batch_size = 16;
  cfg.obs_dim = spec.obs_dim;
  cfg.act_dim = spec.act_dim;
  cfg.priv_dim = spec.priv_dim;
  cfg.priv_flag_channels = spec.priv_flag_channels;
  cfg.learning_rate = 1e-3;
  return cfg;
}

ReplayBuffer filled_buffer(const std::string& env_name, int episodes, int len,
                           std::uint64_t seed) {
  auto env = make_env(env_name);
  auto policy = scripted_mixture_policy(env_name);
  ReplayBuffer buf(1000);
  auto trajs = collect_trajectories(*env, policy, episodes, len, seed);
  for (auto& tr : trajs) buf.push(std::move(tr), env_name, 0);
  return buf;
}

}  // namespace

TEST_CASE("act: deterministic returns the mean; log-prob matches the closed form") {
  PPOConfig cfg = small_ppo();
  ActorCritic ac(4, 2, cfg, 1);
  Rng rng(2);
  Array obs({3, 4});
  for (auto& v : obs.data) v = rng.uniform(-1.0, 1.0);

  auto det = ac.act(obs, true, rng);
  Array mean = ac.actor.forward_raw(obs);
  CHECK(det.action.data == mean.data);

  auto sampled = ac.act(obs, false, rng);
  auto lp = ac.log_prob(obs, sampled.action);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(sampled.log_prob[i] - lp[i]) < 1e-10);
}

TEST_CASE("act: permutation equivariance over the batch") {
  PPOConfig cfg = small_ppo();
  ActorCritic ac(3, 1, cfg, 3);
  Rng rng(4);
  Array obs({4, 3});
  for (auto& v : obs.data) v = rng.uniform(-1.0, 1.0);
  const std::vector<std::size_t> perm = {3, 1, 0, 2};
  Array obs_p({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) obs_p.at(i, j) = obs.at(perm[i], j);
  Rng r1(5), r2(5);
  auto a = ac.act(obs, true, r1);
  auto b = ac.act(obs_p, true, r2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(b.action.at(i, 0) == a.action.at(perm[i], 0));
    CHECK(b.value[i] == a.value[perm[i]]);
  }
}

TEST_CASE("action scaler: env bounds map to the unit frame and clip") {
  auto env = make_env("hopper1d");
  ActionScaler s(env->spec());
  CHECK(s.to_env({0.0})[0] == doctest::Approx(10.0));
  CHECK(s.to_env({1.0})[0] == doctest::Approx(20.0));
  CHECK(s.to_env({-3.0})[0] == doctest::Approx(0.0));  // clipped
  CHECK(s.to_policy({15.0})[0] == doctest::Approx(0.5));
}

TEST_CASE("gae: myopic limit, zero case, and 3-step hand recursion") {
  std::vector<double> adv, ret;

  compute_gae({1.0, 2.0, 3.0}, {0.5, 0.6, 0.7}, {0, 0, 0}, 0.9, 0.0, 0.95, adv, ret);
  CHECK(adv[0] == doctest::Approx(1.0 - 0.5).epsilon(1e-12));
  CHECK(adv[1] == doctest::Approx(2.0 - 0.6).epsilon(1e-12));
  CHECK(adv[2] == doctest::Approx(3.0 - 0.7).epsilon(1e-12));

  compute_gae({0.0, 0.0}, {0.0, 0.0}, {0, 0}, 0.0, 0.99, 0.95, adv, ret);
  for (double a : adv) CHECK(a == 0.0);

  const double g = 0.99, l = 0.95;
  std::vector<double> r = {1.0, -0.5, 2.0}, v = {0.3, 0.8, -0.2};
  const double vboot = 0.4;
  compute_gae(r, v, {0, 0, 0}, vboot, g, l, adv, ret);
  const double d2 = r[2] + g * vboot - v[2];
  const double d1 = r[1] + g * v[2] - v[1];
  const double d0 = r[0] + g * v[1] - v[0];
  const double a2 = d2;
  const double a1 = d1 + g * l * a2;
  const double a0 = d0 + g * l * a1;
  CHECK(std::abs(adv[0] - a0) < 1e-10);
  CHECK(std::abs(adv[1] - a1) < 1e-10);
  CHECK(std::abs(adv[2] - a2) < 1e-10);
  CHECK(ret[1] == doctest::Approx(a1 + v[1]).epsilon(1e-12));

  // Done steps cut the bootstrap.
  compute_gae({1.0, 1.0}, {0.0, 0.0}, {1, 0}, 5.0, g, l, adv, ret);
  CHECK(adv[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("replay buffer: capacity and oldest-first eviction") {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) {
    Trajectory tr;
    tr.command = {double(i)};
    tr.obs = {{0.0}};
    tr.act = {{0.0}};
    tr.priv = {{0.0}};
    tr.reward = {0.0};
    tr.done = {0};
    buf.push(std::move(tr), "env", i);
  }
  CHECK(buf.size() == 3);
  CHECK(buf.segments().front().policy_version == 2);
  CHECK(buf.segments().back().policy_version == 4);
}

TEST_CASE("clipped surrogate: hand-set ratio 1.5 with positive advantage clips at 1.2") {
  Tape t;
  Var ratio = t.constant(Array::from({1.5}));
  Var adv = t.constant(Array::from({1.0}));
  Var surr1 = t.mul(ratio, adv);
  Var surr2 = t.mul(t.clamp(ratio, 0.8, 1.2), adv);
  Var obj = t.minimum(surr1, surr2);
  CHECK(t.value(obj).data[0] == doctest::Approx(1.2).epsilon(1e-15));
}

TEST_CASE("imagination: empty for T = 0; forced termination freezes after one step") {
  auto env = make_env("hopper1d");
  const auto& spec = env->spec();
  PPOConfig cfg = small_ppo();
  auto buf = filled_buffer("hopper1d", 6, 80, 7);
  WorldModel wm(small_wm(spec), 8);
  wm.set_normalizer(Normalizer::fit(buf.trajectories()));
  wm.mark_normalizer_fitted();
  ActorCritic ac(spec.obs_dim + spec.command_dim + spec.act_dim, spec.act_dim, cfg, 9);
  auto reward = reward_preset("hopper-hop");
  Rng rng(10);

  auto empty = imagine_rollout(wm, ac, buf, reward, spec, cfg, 8, 0, rng);
  CHECK(empty.size() == 0);

  // Bias the termination logit so every step predicts done.
  for (auto* p : wm.parameters()) {
    if (p->name == "wm.head.priv.b") p->value.data[spec.termination_channel] = 50.0;
    if (p->name == "wm.head.priv.w")
      for (std::size_t i = 0; i < p->value.rows(); ++i)
        p->value.at(i, spec.termination_channel) = 0.0;
  }
  auto forced = imagine_rollout(wm, ac, buf, reward, spec, cfg, 8, 10, rng);
  CHECK(forced.size() == 8);  // exactly one step per agent
  for (std::size_t i = 0; i < forced.size(); ++i) {
    CHECK(forced.dones[i] == 1);
    CHECK(forced.step_of[i] == 0);
  }
  CHECK(forced.terminations == 8);
}

TEST_CASE("imagination: dead agents never contribute post-done transitions") {
  auto env = make_env("hopper1d");
  const auto& spec = env->spec();
  PPOConfig cfg = small_ppo();
  auto buf = filled_buffer("hopper1d", 8, 100, 11);
  WorldModel wm(small_wm(spec), 12);
  TrainOptions topt;
  topt.iterations = 30;
  topt.seed = 13;
  train_world_model(wm, buf.trajectories(), topt);
  ActorCritic ac(spec.obs_dim + spec.command_dim + spec.act_dim, spec.act_dim, cfg, 14);
  auto reward = reward_preset("hopper-hop");
  Rng rng(15);
  auto batch = imagine_rollout(wm, ac, buf, reward, spec, cfg, 32, 30, rng);

  std::map<int, int> last_step, done_step;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int a = batch.agent_of[i];
    last_step[a] = std::max(last_step.count(a) ? last_step[a] : -1, batch.step_of[i]);
    if (batch.dones[i]) {
      CHECK(done_step.count(a) == 0);  // at most one done per agent
      done_step[a] = batch.step_of[i];
    }
  }
  for (const auto& [a, ds] : done_step) CHECK(last_step[a] == ds);
}

TEST_CASE("ppo: identical policies give unit ratios, zero KL and zero clip fraction") {
  auto env = make_env("pendulum-po");
  const auto& spec = env->spec();
  PPOConfig cfg = small_ppo();
  cfg.epochs = 1;
  cfg.mini_batches = 1;
  // Zero learning rate path: check diagnostics on the very first minibatch,
  // where stored and current log-probs coincide by construction.
  auto buf = filled_buffer("pendulum-po", 4, 60, 16);
  WorldModel wm(small_wm(spec), 17);
  wm.set_normalizer(Normalizer::fit(buf.trajectories()));
  wm.mark_normalizer_fitted();
  ActorCritic ac(spec.obs_dim + spec.command_dim + spec.act_dim, spec.act_dim, cfg, 18);
  auto reward = reward_preset("pendulum-track");
  Rng rng(19);
  auto batch = imagine_rollout(wm, ac, buf, reward, spec, cfg, 8, 10, rng);
  REQUIRE(batch.size() > 0);

  // Ratio sanity: recomputing stored log-probs with the unchanged policy
  // reproduces them (ratio exp(new - old) = 1 within 1e-8).
  Array obs({batch.size(), batch.obs[0].size()});
  Array act({batch.size(), batch.actions[0].size()});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < batch.obs[i].size(); ++j) obs.at(i, j) = batch.obs[i][j];
    for (std::size_t j = 0; j < batch.actions[i].size(); ++j) act.at(i, j) = batch.actions[i][j];
  }
  auto lp = ac.log_prob(obs, act);
  for (std::size_t i = 0; i < batch.size(); ++i)
    CHECK(std::abs(std::exp(lp[i] - batch.log_probs[i]) - 1.0) < 1e-8);

  AdamW opt(ac.parameters(), cfg.learning_rate, 0.0);
  Rng prng(20);
  auto stats = ppo_update(ac, opt, batch, cfg, prng);
  CHECK(std::abs(stats.kl) < 1e-8);
  CHECK(stats.clip_fraction == 0.0);
}

TEST_CASE("ppo: zero advantages leave the policy mean in place, entropy still moves log_std") {
  auto env = make_env("pendulum-po");
  const auto& spec = env->spec();
  PPOConfig cfg = small_ppo();
  cfg.epochs = 1;
  cfg.mini_batches = 1;
  cfg.entropy_coef = 0.01;
  auto buf = filled_buffer("pendulum-po", 4, 60, 21);
  WorldModel wm(small_wm(spec), 22);
  wm.set_normalizer(Normalizer::fit(buf.trajectories()));
  wm.mark_normalizer_fitted();
  ActorCritic ac(spec.obs_dim + spec.command_dim + spec.act_dim, spec.act_dim, cfg, 23);
  auto reward = reward_preset("pendulum-track");
  Rng rng(24);
  auto batch = imagine_rollout(wm, ac, buf, reward, spec, cfg, 8, 10, rng);
  for (auto& a : batch.advantages) a = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) batch.returns[i] = batch.values[i];

  const Array actor_w_before = ac.actor.layers[0].w.value;
  const double ls_before = ac.log_std.value.data[0];
  AdamW opt(ac.parameters(), 1e-3, 0.0);
  Rng prng(25);
  ppo_update(ac, opt, batch, cfg, prng);
  // Advantage normalization of an all-zero vector stays zero, so the
  // surrogate contributes nothing; entropy pressure still raises log_std.
  double max_change = 0.0;
  for (std::size_t i = 0; i < actor_w_before.size(); ++i)
    max_change = std::max(max_change,
                          std::abs(ac.actor.layers[0].w.value.data[i] - actor_w_before.data[i]));
  CHECK(max_change < 1e-6);
  CHECK(ac.log_std.value.data[0] > ls_before);
}

TEST_CASE("mbpo: buffer occupancy, no-op fine-tuning, determinism of reports") {
  const std::string env_name = "pendulum-po";
  auto env = make_env(env_name);
  const auto& spec = env->spec();
  auto cfg = small_ppo();
  cfg.imagination_envs = 8;
  cfg.imagination_steps = 10;
  auto wm_cfg = small_wm(spec);

  auto make_runner = [&](int wm_steps) {
    WorldModel wm(wm_cfg, 26);
    // Pre-fit the normalizer so fine-tuning rounds share statistics.
    auto pre = collect_trajectories(*make_env(env_name), scripted_mixture_policy(env_name), 4, 60,
                                    27);
    wm.set_normalizer(Normalizer::fit(pre));
    wm.mark_normalizer_fitted();
    TrainOptions topt;
    topt.iterations = 20;
    topt.seed = 28;
    train_world_model(wm, pre, topt);
    auto runner = std::make_unique<MbpoRunner>(env_name, std::move(wm),
                                               cfg, reward_preset("pendulum-track"), 29);
    runner->model_update_steps = wm_steps;
    return runner;
  };

  auto r1 = make_runner(5);
  auto rep1 = r1->run_iteration();
  CHECK(rep1.real_steps_total == static_cast<long>(r1->buffer().total_steps()));
  CHECK(r1->buffer().size() == 1);

  // Zero fine-tune steps leave the model parameters untouched.
  auto r2 = make_runner(0);
  std::vector<Array> before;
  for (auto* p : r2->model().parameters()) before.push_back(p->value);
  r2->run_iteration();
  r2->run_iteration();
  auto after = r2->model().parameters();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i]->value.data == before[i].data);

  // Determinism: identical seeds and configs give identical reports.
  auto ra = make_runner(5);
  auto rb = make_runner(5);
  for (int i = 0; i < 2; ++i) {
    auto a = ra->run_iteration();
    auto b = rb->run_iteration();
    CHECK(a.model_error_e == b.model_error_e);
    CHECK(a.predicted_mean_reward == b.predicted_mean_reward);
    CHECK(a.ground_truth_mean_reward == b.ground_truth_mean_reward);
    CHECK(a.kl == b.kl);
  }
}

TEST_CASE("pretraining: error threshold and hopper termination-head accuracy") {
  // Small-budget spot check; the acceptance suite runs the full-budget
  // version of these claims.
  PretrainOptions popt;
  popt.episodes = 16;
  popt.max_len = 120;
  popt.iterations = 250;
  popt.seed = 30;
  auto env = make_env("hopper1d");
  auto wm_cfg = small_wm(env->spec());
  wm_cfg.hidden = {24, 24};
  wm_cfg.head_hidden = 24;
  wm_cfg.history_horizon = 6;
  wm_cfg.forecast_horizon = 2;
  wm_cfg.batch_size = 64;
  WorldModel wm(wm_cfg, 31);
  pretrain_world_model(wm, "hopper1d", popt);

  // Held-out nominal-dynamics data.
  auto held = collect_trajectories(*env, scripted_mixture_policy("hopper1d"), 8, 120, 32);
  const auto& std_scale = wm.normalizer().obs_std;
  double err = 0.0;
  int count = 0;
  long correct = 0, total = 0;
  for (const auto& tr : held) {
    const int m = wm_cfg.history_horizon;
    if (static_cast<int>(tr.length()) < m + 2) continue;
    std::vector<Array> hobs, hact;
    for (int t = 0; t < m; ++t) {
      Array o({1, 3});
      o.data = tr.obs[t];
      Array a({1, 1});
      a.data = tr.act[t];
      hobs.push_back(std::move(o));
      hact.push_back(std::move(a));
    }
    Array a0({1, 1});
    a0.data = tr.act[m - 1];
    auto preds = rollout(wm, hobs, hact, {a0}, nullptr, true);
    err += relative_error({preds[0].mean_raw.data}, {tr.obs[m]}, std_scale).mean;
    ++count;

    // Termination-head accuracy over one-step predictions along the episode.
    auto s = wm.init_state(1);
    for (int t = 0; t + 1 < static_cast<int>(tr.length()); ++t) {
      Array o({1, 3});
      o.data = tr.obs[t];
      Array a({1, 1});
      a.data = tr.act[t];
      if (t + 1 < m) {
        wm.observe(s, o, a);
        continue;
      }
      auto p = wm.predict(s, o, a, nullptr, true);
      const bool predicted = p.priv.at(0, 2) > 0.5;
      const bool actual = tr.done[t + 1] != 0;
      if (predicted == actual) ++correct;
      ++total;
    }
  }
  REQUIRE(count > 0);
  CHECK(err / count < 0.5);
  CHECK(total > 0);
  CHECK(static_cast<double>(correct) / total > 0.9);
}
