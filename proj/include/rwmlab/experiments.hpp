#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rwmlab/policy.hpp"
#include "rwmlab/results.hpp"
#include "rwmlab/world_model.hpp"

namespace rwmlab {

// Declarative description of one experiment run; resolved from the run
// configuration and persisted alongside the outputs.
struct ExperimentSpec {
  std::string kind;  // traj_pred | noise_sweep | baseline_compare | horizon_ablation | mbpo_curves
  std::string env = "pendulum-po";
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<double> noise_grid = {0.0, 0.02, 0.05, 0.1};
  std::vector<int> m_grid = {4, 8, 16, 32};
  std::vector<int> n_grid = {1, 2, 4, 8};
  int rollout_len = 64;
  std::string out_dir = "out";

  int train_episodes = 48;
  int eval_episodes = 12;
  int episode_len = 300;
  int train_iterations = 2500;
  int ablation_iterations = 800;
  int eval_stride = 13;
  bool deterministic_rollout = true;

  // traj_pred consumes an existing checkpoint; noise_sweep can reuse the
  // checkpoints written by a previous baseline_compare run.
  std::string checkpoint;
  std::string checkpoints_from;

  int mbpo_iterations = 200;
  int pretrain_episodes = 60;
  int pretrain_iterations = 2000;

  WorldModelConfig wm;  // dims filled from the environment at run time
  PPOConfig ppo;
  std::string reward_preset_name;  // empty -> per-environment default
  int jobs = 1;
  std::string config_hash = "0";

  void validate() const;
};

ResultTable run_traj_pred(const ExperimentSpec& spec);
ResultTable run_noise_sweep(const ExperimentSpec& spec);
ResultTable run_baseline_compare(const ExperimentSpec& spec);
ResultTable run_horizon_ablation(const ExperimentSpec& spec);
ResultTable run_mbpo_curves(const ExperimentSpec& spec);

// Dispatch on spec.kind; writes summary.csv (and plots) under spec.out_dir.
ResultTable run_experiment(const ExperimentSpec& spec);

// Rendering from tables, exposed for reuse and tests.
void render_plots(const ResultTable& table, const ExperimentSpec& spec,
                  const std::string& plot_dir);

// Shared evaluation helper: autoregressive rollouts from every stride-spaced
// window of the held-out set; optional Gaussian perturbation of the history
// (observations and actions) before burn-in.
struct ArEval {
  std::vector<double> e_k;  // averaged over windows
  double e_mean = 0.0;
  int windows = 0;
};
ArEval ar_eval(const WorldModel& model, const std::vector<Trajectory>& eval_trajs,
               int rollout_len, double noise_std, std::uint64_t noise_seed, int stride,
               bool deterministic);

// Default reward preset bound to each toy environment.
std::string default_reward_preset(const std::string& env_name);

// Deterministic corpus used across experiments: mixture-policy episodes with
// seed-derived streams, plus a held-out evaluation set.
std::vector<Trajectory> experiment_corpus(const std::string& env_name, int episodes,
                                          int episode_len, std::uint64_t seed,
                                          const std::string& role);

// Runs tasks with at most `jobs` worker threads; results must be written into
// preallocated slots so output order stays deterministic.
void run_parallel(int jobs, std::vector<std::function<void()>>& tasks);

}  // namespace rwmlab
