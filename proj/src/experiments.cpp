#include "rwmlab/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "rwmlab/errors.hpp"
#include "rwmlab/svg.hpp"

namespace rwmlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string grid_noise(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "noise=%g", v);
  return buf;
}

std::string grid_mn(int m, int n) {
  return "M=" + std::to_string(m) + ",N=" + std::to_string(n);
}

json spec_to_json(const ExperimentSpec& s) {
  json j;
  j["kind"] = s.kind;
  j["env"] = s.env;
  j["seeds"] = s.seeds;
  j["noise_grid"] = s.noise_grid;
  j["m_grid"] = s.m_grid;
  j["n_grid"] = s.n_grid;
  j["rollout_len"] = s.rollout_len;
  j["train_episodes"] = s.train_episodes;
  j["eval_episodes"] = s.eval_episodes;
  j["episode_len"] = s.episode_len;
  j["train_iterations"] = s.train_iterations;
  j["ablation_iterations"] = s.ablation_iterations;
  j["eval_stride"] = s.eval_stride;
  j["deterministic_rollout"] = s.deterministic_rollout;
  j["checkpoint"] = s.checkpoint;
  j["checkpoints_from"] = s.checkpoints_from;
  j["mbpo_iterations"] = s.mbpo_iterations;
  j["pretrain_episodes"] = s.pretrain_episodes;
  j["pretrain_iterations"] = s.pretrain_iterations;
  j["reward_preset"] = s.reward_preset_name;
  j["jobs"] = s.jobs;
  j["wm"] = {{"history_horizon", s.wm.history_horizon},
             {"forecast_horizon", s.wm.forecast_horizon},
             {"forecast_decay", s.wm.forecast_decay},
             {"hidden", s.wm.hidden},
             {"head_hidden", s.wm.head_hidden},
             {"mlp_hidden", s.wm.mlp_hidden},
             {"batch_size", s.wm.batch_size},
             {"learning_rate", s.wm.learning_rate},
             {"weight_decay", s.wm.weight_decay},
             {"feedback_sampled", s.wm.feedback_sampled},
             {"predict_delta", s.wm.predict_delta},
             {"mse_only", s.wm.mse_only}};
  j["ppo"] = {{"imagination_envs", s.ppo.imagination_envs},
              {"imagination_steps", s.ppo.imagination_steps},
              {"learning_rate", s.ppo.learning_rate},
              {"epochs", s.ppo.epochs},
              {"mini_batches", s.ppo.mini_batches},
              {"kl_target", s.ppo.kl_target},
              {"gamma", s.ppo.gamma},
              {"clip_eps", s.ppo.clip_eps},
              {"entropy_coef", s.ppo.entropy_coef},
              {"gae_lambda", s.ppo.gae_lambda},
              {"actor_hidden", s.ppo.actor_hidden},
              {"critic_hidden", s.ppo.critic_hidden},
              {"init_log_std", s.ppo.init_log_std},
              {"model_update_steps", s.ppo.model_update_steps},
              {"real_episode_len", s.ppo.real_episode_len}};
  return j;
}

void write_config(const ExperimentSpec& s, const fs::path& dir) {
  fs::create_directories(dir);
  json j = spec_to_json(s);
  j["config_hash"] = s.config_hash;
  write_text_file((dir / "config.json").string(), j.dump(2) + "\n");
}

WorldModelConfig variant_config(const ExperimentSpec& spec, const EnvSpec& env,
                                const std::string& variant, int m, int n) {
  WorldModelConfig cfg = spec.wm;
  cfg.obs_dim = env.obs_dim;
  cfg.act_dim = env.act_dim;
  cfg.priv_dim = env.priv_dim;
  cfg.priv_flag_channels = env.priv_flag_channels;
  cfg.history_horizon = m;
  cfg.forecast_horizon = n;
  cfg.variant = variant == "mlp-ar" ? "mlp" : "rwm";
  return cfg;
}

struct TrainedModel {
  WorldModel model;
  double wall_seconds = 0.0;
};

TrainedModel train_variant(const ExperimentSpec& spec, const std::string& variant,
                           const std::vector<Trajectory>& corpus, std::uint64_t seed, int m,
                           int n, int iterations) {
  auto env = make_env(spec.env);
  WorldModelConfig cfg = variant_config(spec, env->spec(), variant, m, n);
  WorldModel model(cfg, Rng::derive(seed, "model-init/" + variant).next_u64());
  TrainOptions topt;
  topt.iterations = iterations;
  topt.seed = Rng::derive(seed, "model-train/" + variant).next_u64();
  const auto t0 = std::chrono::steady_clock::now();
  train_world_model(model, corpus, topt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), secs};
}

void append_ek_rows(ResultTable& table, const ExperimentSpec& spec, const std::string& variant,
                    std::uint64_t seed, const std::string& grid, const ArEval& ev) {
  for (std::size_t k = 0; k < ev.e_k.size(); ++k)
    table.add({spec.kind, spec.env, variant, seed, grid, static_cast<int>(k + 1), "e_k",
               ev.e_k[k], spec.config_hash});
  table.add({spec.kind, spec.env, variant, seed, grid, -1, "e_mean", ev.e_mean,
             spec.config_hash});
  table.add({spec.kind, spec.env, variant, seed, grid, -1, "eval_windows",
             static_cast<double>(ev.windows), spec.config_hash});
}

// Median e_k curve across seeds plus a min/max band.
SvgSeries seed_band_series(const ResultTable& t, const std::string& variant,
                           const std::string& grid, int rollout_len, const std::string& label,
                           const std::string& color, bool dashed) {
  SvgSeries s;
  s.label = label;
  s.color = color;
  s.dashed = dashed;
  for (int k = 1; k <= rollout_len; ++k) {
    auto vals = t.values("e_k", variant, grid.empty() ? std::string() : grid, k);
    if (vals.empty()) continue;
    s.x.push_back(k);
    s.y.push_back(median_of(vals));
    s.band_lo.push_back(*std::min_element(vals.begin(), vals.end()));
    s.band_hi.push_back(*std::max_element(vals.begin(), vals.end()));
  }
  return s;
}

void save_traj_file(const ExperimentSpec& spec, const EnvSpec& env,
                    const std::vector<Trajectory>& trajs, std::uint64_t seed,
                    const fs::path& path) {
  TrajFileHeader h;
  h.env_name = env.name;
  h.obs_dim = env.obs_dim;
  h.act_dim = env.act_dim;
  h.priv_dim = env.priv_dim;
  h.command_dim = env.command_dim;
  h.dt = env.dt;
  h.seed = seed;
  save_trajectories(path.string(), h, trajs);
}

}  // namespace

void ExperimentSpec::validate() const {
  static const std::vector<std::string> kinds = {"traj_pred", "noise_sweep", "baseline_compare",
                                                 "horizon_ablation", "mbpo_curves"};
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ConfigError("experiment: unknown kind '" + kind + "'");
  if (seeds.empty()) throw ConfigError("experiment: no seeds");
  if (kind != "traj_pred" && seeds.size() < 3)
    throw ConfigError("experiment: comparative experiments need >= 3 seeds");
  if (rollout_len < 1) throw ConfigError("experiment: rollout_len must be >= 1");
  if (jobs < 1) throw ConfigError("experiment: jobs must be >= 1");
}

std::string default_reward_preset(const std::string& env_name) {
  if (env_name == "pendulum-po") return "pendulum-track";
  if (env_name == "cartpole-swingup") return "cartpole-swingup";
  if (env_name == "hopper1d") return "hopper-hop";
  throw ConfigError("no default reward preset for environment " + env_name);
}

std::vector<Trajectory> experiment_corpus(const std::string& env_name, int episodes,
                                          int episode_len, std::uint64_t seed,
                                          const std::string& role) {
  auto env = make_env(env_name);
  auto policy = scripted_mixture_policy(env_name);
  const std::uint64_t s = Rng::derive(seed, "corpus/" + env_name + "/" + role).next_u64();
  return collect_trajectories(*env, policy, episodes, episode_len, s);
}

void run_parallel(int jobs, std::vector<std::function<void()>>& tasks) {
  if (jobs <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex err_mx;
  std::vector<std::thread> pool;
  const int workers = std::min<int>(jobs, static_cast<int>(tasks.size()));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= tasks.size()) break;
        try {
          tasks[i]();
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mx);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

ArEval ar_eval(const WorldModel& model, const std::vector<Trajectory>& eval_trajs,
               int rollout_len, double noise_std, std::uint64_t noise_seed, int stride,
               bool deterministic) {
  const int m = model.config().history_horizon;
  const std::size_t obs_dim = model.config().obs_dim;
  const std::size_t act_dim = model.config().act_dim;

  // Per-dimension std over the evaluation set.
  std::vector<double> mean(obs_dim, 0.0), sd(obs_dim, 0.0);
  long n = 0;
  for (const auto& tr : eval_trajs)
    for (const auto& o : tr.obs) {
      for (std::size_t j = 0; j < obs_dim; ++j) mean[j] += o[j];
      ++n;
    }
  for (auto& v : mean) v /= static_cast<double>(n);
  for (const auto& tr : eval_trajs)
    for (const auto& o : tr.obs)
      for (std::size_t j = 0; j < obs_dim; ++j) sd[j] += (o[j] - mean[j]) * (o[j] - mean[j]);
  for (auto& v : sd) v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-6);

  Rng noise_rng = Rng::derive(noise_seed, "ar-eval-noise");
  Rng sample_rng = Rng::derive(noise_seed, "ar-eval-sample");

  ArEval out;
  out.e_k.assign(rollout_len, 0.0);
  for (const auto& tr : eval_trajs) {
    const int len = static_cast<int>(tr.length());
    for (int start = 0; start + m + rollout_len <= len; start += stride) {
      std::vector<Array> hobs, hact, actions;
      for (int t = 0; t < m; ++t) {
        std::vector<double> o = tr.obs[start + t], a = tr.act[start + t];
        if (noise_std > 0.0) observe_noisy(o, a, noise_std, noise_rng);
        Array oa({1, obs_dim});
        oa.data = o;
        Array aa({1, act_dim});
        aa.data = a;
        hobs.push_back(std::move(oa));
        hact.push_back(std::move(aa));
      }
      std::vector<Array> noise_seq;
      for (int k = 0; k < rollout_len; ++k) {
        Array aa({1, act_dim});
        aa.data = tr.act[start + m - 1 + k];
        actions.push_back(std::move(aa));
        if (!deterministic) {
          Array nz({1, obs_dim});
          for (auto& v : nz.data) v = sample_rng.normal();
          noise_seq.push_back(std::move(nz));
        }
      }
      auto preds = rollout(model, hobs, hact, actions, deterministic ? nullptr : &noise_seq,
                           deterministic);
      std::vector<std::vector<double>> ps, ts;
      for (int k = 0; k < rollout_len; ++k) {
        ps.push_back(deterministic ? preds[k].mean_raw.data : preds[k].sample_raw.data);
        ts.push_back(tr.obs[start + m + k]);
      }
      const auto re = relative_error(ps, ts, sd);
      for (int k = 0; k < rollout_len; ++k) out.e_k[k] += re.per_step[k];
      ++out.windows;
    }
  }
  if (out.windows == 0) throw UsageError("ar_eval: no window long enough for the rollout");
  for (auto& v : out.e_k) v /= out.windows;
  double acc = 0.0;
  for (double v : out.e_k) acc += v;
  out.e_mean = acc / rollout_len;
  return out;
}

// --- baseline_compare -------------------------------------------------------------

ResultTable run_baseline_compare(const ExperimentSpec& spec) {
  spec.validate();
  auto env = make_env(spec.env);
  const fs::path root = fs::path(spec.out_dir) / spec.kind / spec.env;
  const std::vector<std::pair<std::string, int>> variants = {
      {"rwm-ar", spec.wm.forecast_horizon}, {"rwm-tf", 1}, {"mlp-ar", spec.wm.forecast_horizon}};

  std::vector<ResultTable> per_seed(spec.seeds.size());
  std::vector<std::function<void()>> tasks;
  for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
    tasks.push_back([&, si] {
      const std::uint64_t seed = spec.seeds[si];
      ResultTable& table = per_seed[si];
      auto train_data =
          experiment_corpus(spec.env, spec.train_episodes, spec.episode_len, seed, "train");
      auto eval_data =
          experiment_corpus(spec.env, spec.eval_episodes, spec.episode_len, seed, "eval");

      const fs::path data_dir = root / "data";
      fs::create_directories(data_dir);
      const fs::path traj_path = data_dir / ("seed" + std::to_string(seed) + ".traj");
      save_traj_file(spec, env->spec(), train_data, seed, traj_path);
      const std::string corpus_hash = hash_file(traj_path.string());

      for (const auto& [variant, n] : variants) {
        const fs::path vdir = root / variant / ("seed" + std::to_string(seed));
        fs::create_directories(vdir / "plots");
        write_config(spec, vdir);
        try {
          auto trained = train_variant(spec, variant, train_data, seed, spec.wm.history_horizon,
                                       n, spec.train_iterations);
          trained.model.save((vdir / "model.ckpt").string(), seed, spec.train_iterations);
          auto ev = ar_eval(trained.model, eval_data, spec.rollout_len, 0.0, seed,
                            spec.eval_stride, spec.deterministic_rollout);
          append_ek_rows(table, spec, variant, seed, "", ev);
          table.add({spec.kind, spec.env, variant, seed, "corpus=" + corpus_hash, -1, "trained",
                     1.0, spec.config_hash});
          // Wall time goes to the timing sidecar, not the summary.
          std::ofstream ts(vdir / "timing.csv");
          ts << "metric,value\ntrain_wall_s," << format_double(trained.wall_seconds) << "\n";
        } catch (const std::exception& e) {
          std::fprintf(stderr, "[baseline_compare] %s seed %llu failed: %s\n", variant.c_str(),
                       static_cast<unsigned long long>(seed), e.what());
          table.add({spec.kind, spec.env, variant, seed, "corpus=" + corpus_hash, -1, "fault",
                     1.0, spec.config_hash});
        }
      }
    });
  }
  std::vector<std::function<void()>> task_refs = std::move(tasks);
  run_parallel(spec.jobs, task_refs);

  ResultTable table;
  for (auto& t : per_seed) table.append(t);
  return table;
}

// --- noise_sweep -------------------------------------------------------------------

ResultTable run_noise_sweep(const ExperimentSpec& spec) {
  spec.validate();
  const fs::path root = fs::path(spec.out_dir) / spec.kind / spec.env;
  const std::vector<std::string> variants = {"rwm-ar", "mlp-ar"};

  std::vector<ResultTable> per_seed(spec.seeds.size());
  std::vector<std::function<void()>> tasks;
  for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
    tasks.push_back([&, si] {
      const std::uint64_t seed = spec.seeds[si];
      ResultTable& table = per_seed[si];
      auto eval_data =
          experiment_corpus(spec.env, spec.eval_episodes, spec.episode_len, seed, "eval");
      std::vector<Trajectory> train_data;
      if (spec.checkpoints_from.empty())
        train_data =
            experiment_corpus(spec.env, spec.train_episodes, spec.episode_len, seed, "train");

      for (const auto& variant : variants) {
        const fs::path vdir = root / variant / ("seed" + std::to_string(seed));
        fs::create_directories(vdir / "plots");
        write_config(spec, vdir);

        WorldModel model = [&]() {
          if (!spec.checkpoints_from.empty()) {
            const fs::path p = fs::path(spec.checkpoints_from) / "baseline_compare" / spec.env /
                               variant / ("seed" + std::to_string(seed)) / "model.ckpt";
            if (!fs::exists(p))
              throw UsageError("noise_sweep: missing checkpoint " + p.string());
            return WorldModel::load(p.string());
          }
          auto trained = train_variant(spec, variant, train_data, seed, spec.wm.history_horizon,
                                       spec.wm.forecast_horizon, spec.train_iterations);
          trained.model.save((vdir / "model.ckpt").string(), seed, spec.train_iterations);
          return std::move(trained.model);
        }();

        for (double noise : spec.noise_grid) {
          auto ev = ar_eval(model, eval_data, spec.rollout_len, noise, seed, spec.eval_stride,
                            spec.deterministic_rollout);
          append_ek_rows(table, spec, variant, seed, grid_noise(noise), ev);
        }
      }
    });
  }
  std::vector<std::function<void()>> task_refs = std::move(tasks);
  run_parallel(spec.jobs, task_refs);

  ResultTable table;
  for (auto& t : per_seed) table.append(t);
  return table;
}

// --- traj_pred ---------------------------------------------------------------------

ResultTable run_traj_pred(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.checkpoint.empty())
    throw UsageError("traj_pred: no trained model checkpoint configured");
  if (!fs::exists(spec.checkpoint))
    throw UsageError("traj_pred: missing checkpoint " + spec.checkpoint);
  WorldModel model = WorldModel::load(spec.checkpoint);
  const int m = model.config().history_horizon;

  ResultTable table;
  const fs::path root = fs::path(spec.out_dir) / spec.kind / spec.env;
  for (std::uint64_t seed : spec.seeds) {
    auto eval_data =
        experiment_corpus(spec.env, spec.eval_episodes, spec.episode_len, seed, "eval");
    const fs::path vdir = root / "rwm-ar" / ("seed" + std::to_string(seed));
    fs::create_directories(vdir / "plots");
    write_config(spec, vdir);

    // Stride-spaced error rows, identical protocol to the noise sweep at 0.
    auto ev = ar_eval(model, eval_data, spec.rollout_len, 0.0, seed, spec.eval_stride,
                      spec.deterministic_rollout);
    append_ek_rows(table, spec, "rwm-ar", seed, "", ev);

    // Full-length deterministic rollout from the head of each trajectory.
    for (std::size_t ti = 0; ti < eval_data.size(); ++ti) {
      const auto& tr = eval_data[ti];
      const int len = static_cast<int>(tr.length());
      if (len < m + 2) continue;
      std::vector<Array> hobs, hact, actions;
      const std::size_t obs_dim = model.config().obs_dim;
      for (int t = 0; t < m; ++t) {
        Array o({1, obs_dim});
        o.data = tr.obs[t];
        Array a({1, static_cast<std::size_t>(model.config().act_dim)});
        a.data = tr.act[t];
        hobs.push_back(std::move(o));
        hact.push_back(std::move(a));
      }
      const int horizon = len - m;
      for (int k = 0; k < horizon; ++k) {
        Array a({1, static_cast<std::size_t>(model.config().act_dim)});
        a.data = tr.act[m - 1 + k];
        actions.push_back(std::move(a));
      }
      auto preds = rollout(model, hobs, hact, actions, nullptr, true);

      std::ofstream os(vdir / ("trajectory" + std::to_string(ti) + ".csv"));
      os << "t";
      for (std::size_t d = 0; d < obs_dim; ++d) os << ",gt_dim" << d;
      for (std::size_t d = 0; d < obs_dim; ++d) os << ",pred_dim" << d;
      os << "\n";
      for (int t = 0; t < len; ++t) {
        os << t;
        for (std::size_t d = 0; d < obs_dim; ++d) os << ',' << format_double(tr.obs[t][d]);
        for (std::size_t d = 0; d < obs_dim; ++d) {
          if (t < m)
            os << ',';  // predictions commence at t = M
          else
            os << ',' << format_double(preds[t - m].mean_raw.at(0, d));
        }
        os << "\n";
      }
      table.add({spec.kind, spec.env, "rwm-ar", seed, "traj=" + std::to_string(ti), -1,
                 "prediction_start", static_cast<double>(m), spec.config_hash});
    }
  }
  return table;
}

// --- horizon_ablation -----------------------------------------------------------------

ResultTable run_horizon_ablation(const ExperimentSpec& spec) {
  spec.validate();
  const fs::path root = fs::path(spec.out_dir) / spec.kind / spec.env;
  ResultTable table;
  // (M, N) cells run sequentially so wall-clock comparisons stay clean even
  // when a jobs budget is configured.
  std::vector<std::vector<double>> err_cells(spec.m_grid.size(),
                                             std::vector<double>(spec.n_grid.size(), 0.0));
  std::vector<std::vector<double>> time_cells = err_cells;
  std::vector<std::vector<std::vector<double>>> err_samples(
      spec.m_grid.size(), std::vector<std::vector<double>>(spec.n_grid.size()));
  auto time_samples = err_samples;

  for (std::uint64_t seed : spec.seeds) {
    auto train_data =
        experiment_corpus(spec.env, spec.train_episodes, spec.episode_len, seed, "train");
    auto eval_data =
        experiment_corpus(spec.env, spec.eval_episodes, spec.episode_len, seed, "eval");
    for (std::size_t mi = 0; mi < spec.m_grid.size(); ++mi) {
      for (std::size_t ni = 0; ni < spec.n_grid.size(); ++ni) {
        const int m = spec.m_grid[mi], n = spec.n_grid[ni];
        const std::string grid = grid_mn(m, n);
        const fs::path vdir =
            root / ("rwm-" + grid) / ("seed" + std::to_string(seed));
        fs::create_directories(vdir);
        write_config(spec, vdir);
        try {
          auto trained = train_variant(spec, "rwm-ar", train_data, seed, m, n,
                                       spec.ablation_iterations);
          auto ev = ar_eval(trained.model, eval_data, spec.rollout_len, 0.0, seed,
                            spec.eval_stride, spec.deterministic_rollout);
          table.add({spec.kind, spec.env, "rwm-ar", seed, grid, spec.rollout_len, "e_k",
                     ev.e_k.back(), spec.config_hash});
          table.add({spec.kind, spec.env, "rwm-ar", seed, grid, -1, "e_mean", ev.e_mean,
                     spec.config_hash});
          err_samples[mi][ni].push_back(ev.e_k.back());
          time_samples[mi][ni].push_back(trained.wall_seconds);
          std::ofstream ts(vdir / "timing.csv");
          ts << "metric,value\ntrain_wall_s," << format_double(trained.wall_seconds) << "\n";
        } catch (const std::exception& e) {
          std::fprintf(stderr, "[horizon_ablation] cell %s seed %llu failed: %s\n", grid.c_str(),
                       static_cast<unsigned long long>(seed), e.what());
          table.add({spec.kind, spec.env, "rwm-ar", seed, grid, -1, "fault", 1.0,
                     spec.config_hash});
        }
      }
    }
  }

  for (std::size_t mi = 0; mi < spec.m_grid.size(); ++mi)
    for (std::size_t ni = 0; ni < spec.n_grid.size(); ++ni) {
      err_cells[mi][ni] = median_of(err_samples[mi][ni]);
      time_cells[mi][ni] = median_of(time_samples[mi][ni]);
    }

  // Matrices and heatmaps (medians across seeds).
  fs::create_directories(root / "plots");
  auto write_matrix = [&](const std::string& name,
                          const std::vector<std::vector<double>>& cells) {
    std::ofstream os(root / (name + ".csv"));
    os << "M\\N";
    for (int n : spec.n_grid) os << ',' << n;
    os << "\n";
    for (std::size_t mi = 0; mi < spec.m_grid.size(); ++mi) {
      os << spec.m_grid[mi];
      for (std::size_t ni = 0; ni < spec.n_grid.size(); ++ni)
        os << ',' << format_double(cells[mi][ni]);
      os << "\n";
    }
  };
  write_matrix("error_matrix", err_cells);
  write_matrix("time_matrix", time_cells);

  SvgHeatmap err_map;
  err_map.title = "autoregressive error at step " + std::to_string(spec.rollout_len);
  err_map.x_label = "forecast horizon N";
  err_map.y_label = "history horizon M";
  for (int n : spec.n_grid) err_map.x_ticks.push_back(std::to_string(n));
  for (int m : spec.m_grid) err_map.y_ticks.push_back(std::to_string(m));
  err_map.cells = err_cells;
  write_text_file((root / "plots" / "error_heatmap.svg").string(), render_heatmap(err_map));
  SvgHeatmap time_map = err_map;
  time_map.title = "training wall time (s)";
  time_map.cells = time_cells;
  write_text_file((root / "plots" / "time_heatmap.svg").string(), render_heatmap(time_map));
  return table;
}

// --- mbpo_curves ------------------------------------------------------------------------

ResultTable run_mbpo_curves(const ExperimentSpec& spec) {
  spec.validate();
  const fs::path root = fs::path(spec.out_dir) / spec.kind / spec.env;
  const std::string preset =
      spec.reward_preset_name.empty() ? default_reward_preset(spec.env) : spec.reward_preset_name;

  std::vector<ResultTable> per_seed(spec.seeds.size());
  std::vector<std::function<void()>> tasks;
  for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
    tasks.push_back([&, si] {
      const std::uint64_t seed = spec.seeds[si];
      ResultTable& table = per_seed[si];
      const fs::path vdir = root / "mbpo-ppo" / ("seed" + std::to_string(seed));
      fs::create_directories(vdir / "plots");
      write_config(spec, vdir);

      auto env = make_env(spec.env);
      WorldModelConfig wc = variant_config(spec, env->spec(), "rwm-ar", spec.wm.history_horizon,
                                           spec.wm.forecast_horizon);
      WorldModel model(wc, Rng::derive(seed, "mbpo-model").next_u64());
      PretrainOptions popt;
      popt.episodes = spec.pretrain_episodes;
      popt.max_len = spec.episode_len;
      popt.iterations = spec.pretrain_iterations;
      popt.seed = Rng::derive(seed, "mbpo-pretrain").next_u64();
      pretrain_world_model(model, spec.env, popt);
      model.save((vdir / "pretrained.ckpt").string(), seed, spec.pretrain_iterations);

      // Random-policy reward baseline under the identical preset.
      auto reward = reward_preset(preset);
      {
        auto renv = make_env(spec.env);
        auto rpolicy = [&](const PolicyContext& ctx) {
          std::vector<double> a(renv->spec().act_dim);
          for (std::size_t j = 0; j < a.size(); ++j)
            a[j] = ctx.rng.uniform(renv->spec().action_bounds[j].first,
                                   renv->spec().action_bounds[j].second);
          return a;
        };
        auto rtrajs = collect_trajectories(
            *renv, rpolicy, 5, spec.ppo.eval_episode_len,
            Rng::derive(seed, "mbpo-random-baseline").next_u64(), &reward);
        double acc = 0.0;
        long n = 0;
        for (const auto& tr : rtrajs)
          for (std::size_t t = 0; t + 1 < tr.length(); ++t) {
            acc += tr.reward[t];
            ++n;
          }
        table.add({spec.kind, spec.env, "random", seed, "", -1, "random_policy_reward",
                   acc / std::max<long>(n, 1), spec.config_hash});
      }

      MbpoRunner runner(spec.env, std::move(model), spec.ppo, reward,
                        Rng::derive(seed, "mbpo-run").next_u64());
      std::ofstream curve(vdir / "report.csv");
      curve << "iteration,real_steps_total,model_error_e,predicted_mean_reward,"
               "ground_truth_mean_reward,kl,lr,clip_fraction,terminations_in_imagination\n";
      try {
        for (int it = 0; it < spec.mbpo_iterations; ++it) {
          auto rep = runner.run_iteration();
          curve << rep.iteration << ',' << rep.real_steps_total << ','
                << format_double(rep.model_error_e) << ','
                << format_double(rep.predicted_mean_reward) << ','
                << format_double(rep.ground_truth_mean_reward) << ',' << format_double(rep.kl)
                << ',' << format_double(rep.lr) << ',' << format_double(rep.clip_fraction) << ','
                << rep.terminations_in_imagination << "\n";
          curve.flush();
          table.add({spec.kind, spec.env, "mbpo-ppo", seed, "", rep.iteration, "model_error_e",
                     rep.model_error_e, spec.config_hash});
          table.add({spec.kind, spec.env, "mbpo-ppo", seed, "", rep.iteration,
                     "predicted_mean_reward", rep.predicted_mean_reward, spec.config_hash});
          table.add({spec.kind, spec.env, "mbpo-ppo", seed, "", rep.iteration,
                     "ground_truth_mean_reward", rep.ground_truth_mean_reward,
                     spec.config_hash});
          table.add({spec.kind, spec.env, "mbpo-ppo", seed, "", rep.iteration,
                     "terminations_in_imagination",
                     static_cast<double>(rep.terminations_in_imagination), spec.config_hash});
        }
      } catch (const std::exception& e) {
        std::fprintf(stderr, "[mbpo_curves] seed %llu failed at iteration boundary: %s\n",
                     static_cast<unsigned long long>(seed), e.what());
        table.add({spec.kind, spec.env, "mbpo-ppo", seed, "", -1, "fault", 1.0,
                   spec.config_hash});
      }
      runner.model().save((vdir / "model.ckpt").string(), seed, spec.mbpo_iterations);
      runner.policy().save((vdir / "policy.ckpt").string(), seed, spec.mbpo_iterations);
    });
  }
  std::vector<std::function<void()>> task_refs = std::move(tasks);
  run_parallel(spec.jobs, task_refs);

  ResultTable table;
  for (auto& t : per_seed) table.append(t);
  return table;
}

// --- plots and dispatch -------------------------------------------------------------------

void render_plots(const ResultTable& table, const ExperimentSpec& spec,
                  const std::string& plot_dir) {
  fs::create_directories(plot_dir);
  if (spec.kind == "baseline_compare" || spec.kind == "traj_pred") {
    SvgChart chart;
    chart.title = spec.env + ": autoregressive prediction error";
    chart.x_label = "forecast step";
    chart.y_label = "relative error e_k";
    const std::vector<std::string> variants = {"rwm-ar", "rwm-tf", "mlp-ar"};
    std::size_t ci = 0;
    for (const auto& v : variants) {
      auto s = seed_band_series(table, v, "", spec.rollout_len, v, palette_color(ci), v == "rwm-tf");
      if (!s.x.empty()) chart.series.push_back(std::move(s));
      ++ci;
    }
    if (!chart.series.empty())
      write_text_file(plot_dir + "/error_curves.svg", render_line_chart(chart));
  } else if (spec.kind == "noise_sweep") {
    for (const std::string v : {"rwm-ar", "mlp-ar"}) {
      SvgChart chart;
      chart.title = spec.env + ": " + v + " error under history noise";
      chart.x_label = "forecast step";
      chart.y_label = "relative error e_k";
      std::size_t ci = 0;
      for (double noise : spec.noise_grid) {
        auto s = seed_band_series(table, v, grid_noise(noise), spec.rollout_len,
                                  grid_noise(noise), palette_color(ci++), v == "mlp-ar");
        if (!s.x.empty()) chart.series.push_back(std::move(s));
      }
      if (!chart.series.empty())
        write_text_file(plot_dir + "/" + v + "_noise.svg", render_line_chart(chart));
    }
    SvgChart summary;
    summary.title = spec.env + ": mean rollout error vs noise";
    summary.x_label = "noise std";
    summary.y_label = "relative error e";
    std::size_t ci = 0;
    for (const std::string v : {"rwm-ar", "mlp-ar"}) {
      SvgSeries s;
      s.label = v;
      s.color = palette_color(ci++);
      s.dashed = v == "mlp-ar";
      for (double noise : spec.noise_grid) {
        auto vals = table.values("e_mean", v, grid_noise(noise));
        if (vals.empty()) continue;
        s.x.push_back(noise);
        s.y.push_back(median_of(vals));
        s.band_lo.push_back(*std::min_element(vals.begin(), vals.end()));
        s.band_hi.push_back(*std::max_element(vals.begin(), vals.end()));
      }
      if (!s.x.empty()) summary.series.push_back(std::move(s));
    }
    if (!summary.series.empty())
      write_text_file(plot_dir + "/noise_summary.svg", render_line_chart(summary));
  } else if (spec.kind == "mbpo_curves") {
    SvgChart rewards;
    rewards.title = spec.env + ": MBPO-PPO rewards";
    rewards.x_label = "iteration";
    rewards.y_label = "mean reward";
    for (const auto& [metric, label, color, dashed] :
         std::vector<std::tuple<std::string, std::string, std::string, bool>>{
             {"ground_truth_mean_reward", "ground truth", palette_color(2), false},
             {"predicted_mean_reward", "predicted", palette_color(0), true}}) {
      SvgSeries s;
      s.label = label;
      s.color = color;
      s.dashed = dashed;
      for (int it = 0; it < spec.mbpo_iterations; ++it) {
        auto vals = table.values(metric, "mbpo-ppo", "", it);
        if (vals.empty()) continue;
        s.x.push_back(it);
        s.y.push_back(median_of(vals));
        s.band_lo.push_back(*std::min_element(vals.begin(), vals.end()));
        s.band_hi.push_back(*std::max_element(vals.begin(), vals.end()));
      }
      if (!s.x.empty()) rewards.series.push_back(std::move(s));
    }
    if (!rewards.series.empty())
      write_text_file(plot_dir + "/rewards.svg", render_line_chart(rewards));

    SvgChart err;
    err.title = spec.env + ": model error during policy optimization";
    err.x_label = "iteration";
    err.y_label = "relative error e";
    SvgSeries s;
    s.label = "model error";
    s.color = palette_color(3);
    for (int it = 0; it < spec.mbpo_iterations; ++it) {
      auto vals = table.values("model_error_e", "mbpo-ppo", "", it);
      if (vals.empty()) continue;
      s.x.push_back(it);
      s.y.push_back(median_of(vals));
      s.band_lo.push_back(*std::min_element(vals.begin(), vals.end()));
      s.band_hi.push_back(*std::max_element(vals.begin(), vals.end()));
    }
    if (!s.x.empty()) {
      err.series.push_back(std::move(s));
      write_text_file(plot_dir + "/model_error.svg", render_line_chart(err));
    }
  }
}

ResultTable run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ResultTable table;
  if (spec.kind == "traj_pred") table = run_traj_pred(spec);
  else if (spec.kind == "noise_sweep") table = run_noise_sweep(spec);
  else if (spec.kind == "baseline_compare") table = run_baseline_compare(spec);
  else if (spec.kind == "horizon_ablation") table = run_horizon_ablation(spec);
  else if (spec.kind == "mbpo_curves") table = run_mbpo_curves(spec);
  else throw ConfigError("experiment: unknown kind " + spec.kind);

  const fs::path root = fs::path(spec.out_dir);
  fs::create_directories(root);
  write_config(spec, root / spec.kind);
  table.save_csv((root / "summary.csv").string());
  render_plots(table, spec, (root / spec.kind / spec.env / "plots").string());
  return table;
}

}  // namespace rwmlab
