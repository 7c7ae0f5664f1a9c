#include "rwmlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "rwmlab/checkpoint.hpp"
#include "rwmlab/errors.hpp"

namespace rwmlab {

using nlohmann::json;

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;
}

void PPOConfig::validate() const {
  if (imagination_envs < 1) throw ConfigError("ppo: imagination_envs must be >= 1");
  if (imagination_steps < 0) throw ConfigError("ppo: imagination_steps must be >= 0");
  if (gae_lambda <= 0.0 || gae_lambda > 1.0) throw ConfigError("ppo: gae_lambda must be in (0, 1]");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("ppo: gamma must be in [0, 1]");
  if (clip_eps <= 0.0) throw ConfigError("ppo: clip range must be positive");
  if (epochs < 1 || mini_batches < 1) throw ConfigError("ppo: epochs/mini_batches must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("ppo: learning rate must be positive");
}

// --- actor-critic ------------------------------------------------------------

ActorCritic::ActorCritic(int obs_dim, int act_dim, const PPOConfig& cfg, std::uint64_t seed)
    : obs_dim_(obs_dim), act_dim_(act_dim) {
  Rng rng = Rng::derive(seed, "actor-critic");
  actor = Mlp("policy.actor", obs_dim, cfg.actor_hidden, act_dim, Activation::Elu, rng);
  critic = Mlp("policy.critic", obs_dim, cfg.critic_hidden, 1, Activation::Elu, rng);
  log_std = Parameter("policy.log_std",
                      Array::full({static_cast<std::size_t>(act_dim)}, cfg.init_log_std));
}

Array ActorCritic::clamped_log_std() const {
  Array ls = log_std.value;
  for (auto& v : ls.data) v = std::clamp(v, log_std_min_, log_std_max_);
  return ls;
}

ActorCritic::ActResult ActorCritic::act(const Array& obs_rows, bool deterministic,
                                        Rng& rng) const {
  const std::size_t batch = obs_rows.rows();
  Array mean = actor.forward_raw(obs_rows);
  Array vals = critic.forward_raw(obs_rows);
  const Array ls = clamped_log_std();

  ActResult out;
  out.action = mean;
  out.log_prob.assign(batch, 0.0);
  out.value.assign(batch, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    double lp = 0.0;
    for (int j = 0; j < act_dim_; ++j) {
      const double sigma = std::exp(ls.data[j]);
      double z = 0.0;
      if (!deterministic) {
        z = rng.normal();
        out.action.at(i, j) = mean.at(i, j) + sigma * z;
      }
      lp += -ls.data[j] - kHalfLog2Pi - 0.5 * z * z;
    }
    out.log_prob[i] = lp;
    out.value[i] = vals.at(i, 0);
  }
  return out;
}

std::vector<double> ActorCritic::value(const Array& obs_rows) const {
  Array vals = critic.forward_raw(obs_rows);
  std::vector<double> out(obs_rows.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = vals.at(i, 0);
  return out;
}

std::vector<double> ActorCritic::log_prob(const Array& obs_rows, const Array& actions) const {
  Array mean = actor.forward_raw(obs_rows);
  const Array ls = clamped_log_std();
  std::vector<double> out(obs_rows.rows(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double lp = 0.0;
    for (int j = 0; j < act_dim_; ++j) {
      const double sigma = std::exp(ls.data[j]);
      const double z = (actions.at(i, j) - mean.at(i, j)) / sigma;
      lp += -ls.data[j] - kHalfLog2Pi - 0.5 * z * z;
    }
    out[i] = lp;
  }
  return out;
}

std::vector<Parameter*> ActorCritic::parameters() {
  std::vector<Parameter*> ps = actor.params();
  for (auto* p : critic.params()) ps.push_back(p);
  ps.push_back(&log_std);
  return ps;
}

void ActorCritic::save(const std::string& path, std::uint64_t seed, long iterations) const {
  auto& self = const_cast<ActorCritic&>(*this);
  save_params(path, self.parameters());
  json meta;
  meta["obs_dim"] = obs_dim_;
  meta["act_dim"] = act_dim_;
  meta["seed"] = seed;
  meta["iterations"] = iterations;
  std::ofstream os(path + ".json");
  if (!os) throw ConfigError("policy: cannot write sidecar for " + path);
  os << meta.dump(2) << "\n";
}

void ActorCritic::load_values(const std::string& path) { load_params(path, parameters()); }

ActionScaler::ActionScaler(const EnvSpec& spec) {
  for (const auto& [lo, hi] : spec.action_bounds) {
    center.push_back(0.5 * (lo + hi));
    half.push_back(0.5 * (hi - lo));
  }
}

std::vector<double> ActionScaler::to_env(const std::vector<double>& u) const {
  std::vector<double> a(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) {
    a[j] = center[j] + half[j] * u[j];
    const double lo = center[j] - half[j], hi = center[j] + half[j];
    a[j] = std::clamp(a[j], lo, hi);
  }
  return a;
}

std::vector<double> ActionScaler::to_policy(const std::vector<double>& a) const {
  std::vector<double> u(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) u[j] = (a[j] - center[j]) / half[j];
  return u;
}

// --- advantages ---------------------------------------------------------------

void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<std::uint8_t>& dones, double bootstrap_value, double gamma,
                 double lambda, std::vector<double>& advantages, std::vector<double>& returns) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n)
    throw UsageError("compute_gae: sequence lengths differ");
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double last_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double not_done = dones[i] ? 0.0 : 1.0;
    const double next_value = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    const double delta = rewards[i] + gamma * next_value * not_done - values[i];
    last_adv = delta + gamma * lambda * not_done * last_adv;
    advantages[i] = last_adv;
    returns[i] = advantages[i] + values[i];
  }
}

// --- replay buffer ---------------------------------------------------------------

void ReplayBuffer::push(Trajectory traj, const std::string& env_name, long policy_version) {
  segments_.push_back({std::move(traj), env_name, policy_version});
  while (segments_.size() > capacity_) segments_.pop_front();
}

std::vector<Trajectory> ReplayBuffer::trajectories() const {
  std::vector<Trajectory> out;
  out.reserve(segments_.size());
  for (const auto& s : segments_) out.push_back(s.traj);
  return out;
}

long ReplayBuffer::total_steps() const {
  long n = 0;
  for (const auto& s : segments_) n += static_cast<long>(s.traj.length());
  return n;
}

// --- imagination ------------------------------------------------------------------

std::vector<double> policy_observation(const std::vector<double>& obs,
                                       const std::vector<double>& command,
                                       const std::vector<double>& prev_action_u) {
  std::vector<double> p;
  p.reserve(obs.size() + command.size() + prev_action_u.size());
  p.insert(p.end(), obs.begin(), obs.end());
  p.insert(p.end(), command.begin(), command.end());
  p.insert(p.end(), prev_action_u.begin(), prev_action_u.end());
  return p;
}

ImaginationBatch imagine_rollout(const WorldModel& model, const ActorCritic& policy,
                                 const ReplayBuffer& buffer, const RewardSpec& reward,
                                 const EnvSpec& env_spec, const PPOConfig& cfg, int n_agents,
                                 int steps, Rng& rng) {
  ImaginationBatch batch;
  if (steps <= 0 || n_agents <= 0) return batch;
  const int m = model.config().history_horizon;

  // Seedable windows: M consecutive real rows with no termination inside.
  struct Seed {
    const Trajectory* traj;
    int start;
  };
  std::vector<Seed> seeds;
  for (const auto& seg : buffer.segments()) {
    const auto& tr = seg.traj;
    const int len = static_cast<int>(tr.length());
    for (int start = 0; start + m <= len; ++start) {
      bool clean = true;
      for (int t = start; t < start + m; ++t)
        if (tr.done[t]) {
          clean = false;
          break;
        }
      if (clean) seeds.push_back({&tr, start});
    }
  }
  if (seeds.empty())
    throw UsageError("imagine_rollout: buffer holds no window of M clean steps");

  const std::size_t A = static_cast<std::size_t>(n_agents);
  std::vector<Seed> chosen(A);
  for (auto& s : chosen) s = seeds[rng.below(seeds.size())];

  const std::size_t obs_dim = env_spec.obs_dim;
  const std::size_t act_dim = env_spec.act_dim;
  ActionScaler scaler(env_spec);

  // Batched burn-in over the first M-1 pairs.
  auto state = model.init_state(A);
  for (int t = 0; t + 1 < m; ++t) {
    Array obs({A, obs_dim}), act({A, act_dim});
    for (std::size_t a = 0; a < A; ++a) {
      const auto& tr = *chosen[a].traj;
      const int row = chosen[a].start + t;
      for (std::size_t j = 0; j < obs_dim; ++j) obs.at(a, j) = tr.obs[row][j];
      for (std::size_t j = 0; j < act_dim; ++j) act.at(a, j) = tr.act[row][j];
    }
    model.observe(state, obs, act);
  }

  // Per-agent context at the last real row.
  std::vector<std::vector<double>> cur_obs(A), commands(A), prev_u(A), prev_env_action(A);
  for (std::size_t a = 0; a < A; ++a) {
    const auto& tr = *chosen[a].traj;
    const int last = chosen[a].start + m - 1;
    cur_obs[a] = tr.obs[last];
    commands[a] = tr.command;
    const int prev_row = last - 1;
    prev_env_action[a] = prev_row >= 0 ? tr.act[prev_row] : std::vector<double>(act_dim, 0.0);
    prev_u[a] = scaler.to_policy(prev_env_action[a]);
  }

  const std::size_t pobs_dim = obs_dim + commands[0].size() + act_dim;
  std::vector<std::uint8_t> alive(A, 1);
  std::vector<RewardState> rstate(A, reward.make_state());
  std::vector<std::vector<double>> rewards(A), values(A), log_probs(A);
  std::vector<std::vector<std::uint8_t>> dones(A);
  std::vector<std::vector<std::vector<double>>> obs_rows(A), act_rows(A);

  Array obs_in({A, obs_dim});
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t j = 0; j < obs_dim; ++j) obs_in.at(a, j) = cur_obs[a][j];

  for (int k = 0; k < steps; ++k) {
    Array pobs({A, pobs_dim});
    for (std::size_t a = 0; a < A; ++a) {
      auto row = policy_observation(cur_obs[a], commands[a], prev_u[a]);
      for (std::size_t j = 0; j < pobs_dim; ++j) pobs.at(a, j) = row[j];
    }
    auto act_res = policy.act(pobs, false, rng);

    Array env_act({A, act_dim});
    std::vector<std::vector<double>> env_act_rows(A);
    for (std::size_t a = 0; a < A; ++a) {
      std::vector<double> u(act_dim);
      for (std::size_t j = 0; j < act_dim; ++j) u[j] = act_res.action.at(a, j);
      env_act_rows[a] = scaler.to_env(u);
      for (std::size_t j = 0; j < act_dim; ++j) env_act.at(a, j) = env_act_rows[a][j];
    }

    Array noise({A, obs_dim});
    for (auto& v : noise.data) v = rng.normal();
    GaussianPrediction pred;
    try {
      pred = model.predict(state, obs_in, env_act, &noise, false);
    } catch (const ModelFault& f) {
      throw ModelFault(std::string(f.what()) + " during imagination step " + std::to_string(k + 1),
                       k + 1);
    }

    for (std::size_t a = 0; a < A; ++a) {
      if (!alive[a]) continue;
      std::vector<double> next_obs(obs_dim), priv(model.config().priv_dim);
      for (std::size_t j = 0; j < obs_dim; ++j) next_obs[j] = pred.sample_raw.at(a, j);
      for (int j = 0; j < model.config().priv_dim; ++j) priv[j] = pred.priv.at(a, j);

      RewardInputs in{next_obs, priv, env_act_rows[a], prev_env_action[a], commands[a],
                      env_spec.dt};
      const double r = reward.eval(in, &rstate[a]);

      bool done = false;
      if (env_spec.termination_channel >= 0 &&
          priv[env_spec.termination_channel] > 0.5) {
        done = true;
      }

      auto prow = policy_observation(cur_obs[a], commands[a], prev_u[a]);
      obs_rows[a].push_back(std::move(prow));
      std::vector<double> u(act_dim);
      for (std::size_t j = 0; j < act_dim; ++j) u[j] = act_res.action.at(a, j);
      act_rows[a].push_back(u);
      rewards[a].push_back(r);
      values[a].push_back(act_res.value[a]);
      log_probs[a].push_back(act_res.log_prob[a]);
      dones[a].push_back(done ? 1 : 0);
      if (done) {
        alive[a] = 0;
        ++batch.terminations;
      } else {
        prev_env_action[a] = env_act_rows[a];
        prev_u[a] = u;
        cur_obs[a] = next_obs;
      }
    }

    // Feed the sampled observation back for every slot; dead agents' rows are
    // never recorded again.
    obs_in = pred.sample_raw;
  }

  // Bootstrap values for truncated agents.
  Array final_pobs({A, pobs_dim});
  for (std::size_t a = 0; a < A; ++a) {
    auto row = policy_observation(cur_obs[a], commands[a], prev_u[a]);
    for (std::size_t j = 0; j < pobs_dim; ++j) final_pobs.at(a, j) = row[j];
  }
  const auto final_values = policy.value(final_pobs);

  for (std::size_t a = 0; a < A; ++a) {
    if (rewards[a].empty()) continue;
    const double bootstrap = alive[a] ? final_values[a] : 0.0;
    std::vector<double> adv, ret;
    compute_gae(rewards[a], values[a], dones[a], bootstrap, cfg.gamma, cfg.gae_lambda, adv, ret);
    for (std::size_t i = 0; i < rewards[a].size(); ++i) {
      batch.obs.push_back(std::move(obs_rows[a][i]));
      batch.actions.push_back(std::move(act_rows[a][i]));
      batch.log_probs.push_back(log_probs[a][i]);
      batch.values.push_back(values[a][i]);
      batch.advantages.push_back(adv[i]);
      batch.returns.push_back(ret[i]);
      batch.rewards.push_back(rewards[a][i]);
      batch.dones.push_back(dones[a][i]);
      batch.agent_of.push_back(static_cast<int>(a));
      batch.step_of.push_back(static_cast<int>(i));
    }
  }
  return batch;
}

// --- ppo -------------------------------------------------------------------------

PPOStats ppo_update(ActorCritic& policy, AdamW& opt, const ImaginationBatch& batch,
                    const PPOConfig& cfg, Rng& rng) {
  if (batch.size() == 0) throw UsageError("ppo_update: empty batch");
  const std::size_t n = batch.size();
  const std::size_t obs_dim = batch.obs[0].size();
  const std::size_t act_dim = batch.actions[0].size();

  // Per-update advantage normalization.
  double mean = 0.0, var = 0.0;
  for (double a : batch.advantages) mean += a;
  mean /= static_cast<double>(n);
  for (double a : batch.advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(n);
  const double std = std::sqrt(std::max(var, 1e-16));
  std::vector<double> adv_norm(n);
  for (std::size_t i = 0; i < n; ++i) adv_norm[i] = (batch.advantages[i] - mean) / (std + 1e-8);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  PPOStats stats;
  stats.lr = opt.lr();
  double kl_acc = 0.0, clip_acc = 0.0, ploss_acc = 0.0, vloss_acc = 0.0, ent_acc = 0.0;
  int updates = 0;
  auto params = policy.parameters();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t mb_size = (n + cfg.mini_batches - 1) / cfg.mini_batches;
    for (int mb = 0; mb < cfg.mini_batches; ++mb) {
      const std::size_t lo = mb * mb_size;
      if (lo >= n) break;
      const std::size_t hi = std::min(lo + mb_size, n);
      const std::size_t bsz = hi - lo;

      Array obs({bsz, obs_dim}), act({bsz, act_dim}), lp_old({bsz, 1}), adv({bsz, 1}),
          ret({bsz, 1});
      for (std::size_t r = 0; r < bsz; ++r) {
        const std::size_t idx = order[lo + r];
        for (std::size_t j = 0; j < obs_dim; ++j) obs.at(r, j) = batch.obs[idx][j];
        for (std::size_t j = 0; j < act_dim; ++j) act.at(r, j) = batch.actions[idx][j];
        lp_old.at(r, 0) = batch.log_probs[idx];
        adv.at(r, 0) = adv_norm[idx];
        ret.at(r, 0) = batch.returns[idx];
      }

      Tape t;
      Var obs_v = t.constant(obs);
      Var mean_v = policy.actor.forward(t, obs_v);
      Var ls = t.clamp(t.param(policy.log_std), -10.0, 2.0);
      Var ls_b = t.broadcast_rows(ls, bsz);
      Var z = t.mul(t.sub(t.constant(act), mean_v), t.exp_(t.scale(ls_b, -1.0)));
      Var nll_dim = t.add(t.add_scalar(ls_b, kHalfLog2Pi), t.scale(t.square(z), 0.5));
      Var lp_new = t.scale(t.row_sum(nll_dim), -1.0);
      Var logratio = t.sub(lp_new, t.constant(lp_old));
      Var ratio = t.exp_(logratio);
      Var adv_v = t.constant(adv);
      Var surr1 = t.mul(ratio, adv_v);
      Var surr2 = t.mul(t.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv_v);
      Var policy_loss = t.scale(t.mean_all(t.minimum(surr1, surr2)), -1.0);

      Var v_pred = policy.critic.forward(t, obs_v);
      Var value_loss = t.mean_all(t.square(t.sub(v_pred, t.constant(ret))));

      Var entropy = t.sum(t.add_scalar(ls, kHalfLog2Pi + 0.5));
      Var total = t.add(t.add(policy_loss, t.scale(value_loss, cfg.value_coef)),
                        t.scale(entropy, -cfg.entropy_coef));

      // Diagnostics from the recorded values.
      const Array& ratio_vals = t.value(ratio);
      const Array& logratio_vals = t.value(logratio);
      double kl = 0.0, clipped = 0.0;
      for (std::size_t r = 0; r < bsz; ++r) {
        kl += ratio_vals.data[r] - 1.0 - logratio_vals.data[r];
        if (std::abs(ratio_vals.data[r] - 1.0) > cfg.clip_eps) clipped += 1.0;
      }
      kl /= static_cast<double>(bsz);
      clipped /= static_cast<double>(bsz);

      const double total_val = t.value(total).data[0];
      if (!std::isfinite(total_val)) {
        stats.skipped = true;
        opt.set_lr(std::max(opt.lr() / 2.0, cfg.lr_min));
        std::fprintf(stderr, "[ppo] non-finite loss, update skipped, lr halved to %g\n", opt.lr());
        continue;
      }

      opt.zero_grad();
      t.backward(total);
      clip_grad_norm(params, 1.0);
      opt.step();

      kl_acc += kl;
      clip_acc += clipped;
      ploss_acc += t.value(policy_loss).data[0];
      vloss_acc += t.value(value_loss).data[0];
      ent_acc += t.value(entropy).data[0];
      ++updates;
    }
  }

  if (updates > 0) {
    stats.kl = kl_acc / updates;
    stats.clip_fraction = clip_acc / updates;
    stats.policy_loss = ploss_acc / updates;
    stats.value_loss = vloss_acc / updates;
    stats.entropy = ent_acc / updates;
    // Track the KL target by doubling/halving once per update.
    double lr = opt.lr();
    if (stats.kl > 2.0 * cfg.kl_target)
      lr = std::max(lr / 2.0, cfg.lr_min);
    else if (stats.kl < 0.5 * cfg.kl_target)
      lr = std::min(lr * 2.0, cfg.lr_max);
    opt.set_lr(lr);
  }
  stats.lr = opt.lr();
  return stats;
}

// --- pretraining -------------------------------------------------------------------

std::vector<Trajectory> collect_pretrain_data(const std::string& env_name,
                                              const PretrainOptions& opt) {
  auto policy = scripted_mixture_policy(env_name, opt.heuristic_fraction);
  Rng scale_rng = Rng::derive(opt.seed, "pretrain-domain");
  std::vector<Trajectory> data;
  for (int ep = 0; ep < opt.episodes; ++ep) {
    EnvParams p;
    p.mass_scale = scale_rng.uniform(1.0 - opt.domain_scale_range, 1.0 + opt.domain_scale_range);
    p.damping_scale =
        scale_rng.uniform(1.0 - opt.domain_scale_range, 1.0 + opt.domain_scale_range);
    auto env = make_env(env_name, p);
    std::uint64_t ep_mix = opt.seed + static_cast<std::uint64_t>(ep) * 0x9E3779B97F4A7C15ull;
    auto one = collect_trajectories(*env, policy, 1, opt.max_len, Rng::splitmix64(ep_mix));
    data.push_back(std::move(one[0]));
  }
  return data;
}

std::vector<TrainLogRow> pretrain_world_model(WorldModel& model, const std::string& env_name,
                                              const PretrainOptions& opt) {
  auto data = collect_pretrain_data(env_name, opt);
  TrainOptions topt;
  topt.iterations = opt.iterations;
  topt.seed = Rng::fnv1a("pretrain") ^ opt.seed;
  topt.verbose = opt.verbose;
  return train_world_model(model, data, topt);
}

// --- mbpo ----------------------------------------------------------------------------

MbpoRunner::MbpoRunner(const std::string& env_name, WorldModel model, const PPOConfig& cfg,
                       const RewardSpec& reward, std::uint64_t seed)
    : env_name_(env_name),
      env_(make_env(env_name)),
      model_(std::move(model)),
      cfg_(cfg),
      reward_(reward),
      buffer_(cfg.buffer_capacity),
      seed_(seed) {
  cfg_.validate();
  const auto& spec = env_->spec();
  if (model_.config().obs_dim != spec.obs_dim || model_.config().act_dim != spec.act_dim)
    throw ConfigError("mbpo: world model dims do not match environment " + env_name);
  reward_.validate(spec.obs_dim, spec.priv_dim, spec.act_dim, spec.command_dim);
  const int pobs = spec.obs_dim + spec.command_dim + spec.act_dim;
  policy_ = std::make_unique<ActorCritic>(pobs, spec.act_dim, cfg_, seed);
  opt_ = std::make_unique<AdamW>(policy_->parameters(), cfg_.learning_rate, cfg_.weight_decay);
  trainer_ = std::make_unique<WmTrainer>(model_);
}

Trajectory MbpoRunner::collect_real_episode() {
  ActionScaler scaler(env_->spec());
  auto policy_fn = [&](const PolicyContext& ctx) {
    auto prev_u = scaler.to_policy(ctx.prev_action);
    auto row = policy_observation(ctx.observation, ctx.command, prev_u);
    Array obs({1, row.size()});
    obs.data = row;
    auto res = policy_->act(obs, false, ctx.rng);
    std::vector<double> u(env_->spec().act_dim);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = res.action.at(0, j);
    return scaler.to_env(u);
  };
  const std::uint64_t ep_seed =
      Rng::derive(seed_, "mbpo/collect/" + std::to_string(iteration_)).next_u64();
  auto trajs = collect_trajectories(*env_, policy_fn, 1, cfg_.real_episode_len, ep_seed, &reward_);
  return std::move(trajs[0]);
}

double MbpoRunner::model_error_on(const Trajectory& tr) {
  const int m = model_.config().history_horizon;
  const int len = static_cast<int>(tr.length());
  if (len < m + 2) return std::numeric_limits<double>::quiet_NaN();
  const int horizon = std::min(64, len - m - 1);
  const auto& std_scale = model_.normalizer().obs_std;

  double acc = 0.0;
  int count = 0;
  // A few evenly spaced start points across the fresh episode.
  const int n_starts = std::min(4, len - m - horizon + 1);
  for (int s = 0; s < n_starts; ++s) {
    const int start = s * std::max(1, (len - m - horizon) / std::max(1, n_starts - 1));
    if (start + m + horizon > len) break;
    std::vector<Array> hobs, hact, actions;
    for (int t = 0; t < m; ++t) {
      Array o({1, static_cast<std::size_t>(env_->spec().obs_dim)});
      o.data = tr.obs[start + t];
      Array a({1, static_cast<std::size_t>(env_->spec().act_dim)});
      a.data = tr.act[start + t];
      hobs.push_back(std::move(o));
      hact.push_back(std::move(a));
    }
    for (int k = 0; k < horizon; ++k) {
      Array a({1, static_cast<std::size_t>(env_->spec().act_dim)});
      a.data = tr.act[start + m - 1 + k];
      actions.push_back(std::move(a));
    }
    auto preds = rollout(model_, hobs, hact, actions, nullptr, true);
    std::vector<std::vector<double>> pred_seq, target_seq;
    for (int k = 0; k < horizon; ++k) {
      pred_seq.push_back(preds[k].mean_raw.data);
      target_seq.push_back(tr.obs[start + m + k]);
    }
    acc += relative_error(pred_seq, target_seq, std_scale).mean;
    ++count;
  }
  return count > 0 ? acc / count : std::numeric_limits<double>::quiet_NaN();
}

double MbpoRunner::evaluate_ground_truth(std::uint64_t seed_salt) {
  ActionScaler scaler(env_->spec());
  auto policy_fn = [&](const PolicyContext& ctx) {
    auto prev_u = scaler.to_policy(ctx.prev_action);
    auto row = policy_observation(ctx.observation, ctx.command, prev_u);
    Array obs({1, row.size()});
    obs.data = row;
    auto res = policy_->act(obs, true, ctx.rng);
    std::vector<double> u(env_->spec().act_dim);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = res.action.at(0, j);
    return scaler.to_env(u);
  };
  const std::uint64_t ep_seed = Rng::derive(seed_, "mbpo/eval/" + std::to_string(seed_salt)).next_u64();
  auto trajs = collect_trajectories(*env_, policy_fn, 1, cfg_.eval_episode_len, ep_seed, &reward_);
  const auto& tr = trajs[0];
  if (tr.length() < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t t = 0; t + 1 < tr.length(); ++t) acc += tr.reward[t];
  return acc / static_cast<double>(tr.length() - 1);
}

IterationReport MbpoRunner::run_iteration() {
  IterationReport rep;
  rep.iteration = iteration_;

  // (1) one real episode with the current policy
  Trajectory fresh = collect_real_episode();
  real_steps_total_ += static_cast<long>(fresh.length());
  buffer_.push(fresh, env_name_, iteration_);
  rep.real_steps_total = real_steps_total_;

  // (2) fine-tune the world model on the buffer
  const int wm_steps = model_update_steps >= 0 ? model_update_steps : cfg_.model_update_steps;
  if (wm_steps > 0) {
    TrainOptions topt;
    topt.iterations = wm_steps;
    topt.seed = Rng::derive(seed_, "mbpo/wm/" + std::to_string(iteration_)).next_u64();
    auto log = trainer_->run(buffer_.trajectories(), topt);
    rep.model_loss = log.empty() ? 0.0 : log.back().loss;
  }

  // (3) imagination rollouts, (4) policy update
  Rng im_rng = Rng::derive(seed_, "mbpo/imagine/" + std::to_string(iteration_));
  bool update_ok = true;
  ImaginationBatch batch;
  try {
    batch = imagine_rollout(model_, *policy_, buffer_, reward_, env_->spec(), cfg_,
                            cfg_.imagination_envs, cfg_.imagination_steps, im_rng);
  } catch (const ModelFault& f) {
    std::fprintf(stderr, "[mbpo] iteration %d aborted in imagination: %s\n", iteration_, f.what());
    update_ok = false;
  }
  if (update_ok && batch.size() > 0) {
    Rng ppo_rng = Rng::derive(seed_, "mbpo/ppo/" + std::to_string(iteration_));
    auto stats = ppo_update(*policy_, *opt_, batch, cfg_, ppo_rng);
    rep.kl = stats.kl;
    rep.lr = stats.lr;
    rep.clip_fraction = stats.clip_fraction;
  }
  rep.terminations_in_imagination = batch.terminations;
  if (batch.size() > 0) {
    double acc = 0.0;
    for (double r : batch.rewards) acc += r;
    rep.predicted_mean_reward = acc / static_cast<double>(batch.size());
  }

  // Evaluation: model error on the fresh episode and a ground-truth episode.
  rep.model_error_e = model_error_on(fresh);
  rep.ground_truth_mean_reward = evaluate_ground_truth(iteration_);

  ++iteration_;
  reports_.push_back(rep);
  return rep;
}

}  // namespace rwmlab
