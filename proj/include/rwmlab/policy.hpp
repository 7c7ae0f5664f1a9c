#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "rwmlab/env.hpp"
#include "rwmlab/optim.hpp"
#include "rwmlab/world_model.hpp"

namespace rwmlab {

struct PPOConfig {
  int imagination_envs = 256;   // desk-scale default; the published setup uses 4096
  int imagination_steps = 100;  // T
  int buffer_capacity = 1000;   // trajectory segments
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  int epochs = 5;
  int mini_batches = 4;
  double kl_target = 0.01;
  double gamma = 0.99;
  double clip_eps = 0.2;
  double entropy_coef = 0.005;
  double gae_lambda = 0.95;

  std::vector<int> actor_hidden = {128, 128, 128};
  std::vector<int> critic_hidden = {128, 128, 128};
  double init_log_std = 0.0;
  double lr_min = 1e-5, lr_max = 1e-2;
  double value_coef = 1.0;

  int model_update_steps = 50;  // world-model gradient steps per iteration
  int real_episode_len = 400;
  int eval_episode_len = 400;

  void validate() const;
};

// Gaussian actor plus a value critic. The actor emits actions in a normalized
// frame where the environment bounds map to [-1, 1]; scaling and clipping to
// real bounds happen at the environment boundary only, and log-probs are
// computed on the unclipped Gaussian sample.
class ActorCritic {
 public:
  ActorCritic(int obs_dim, int act_dim, const PPOConfig& cfg, std::uint64_t seed);

  struct ActResult {
    Array action;                  // [batch, act] normalized frame
    std::vector<double> log_prob;  // per row
    std::vector<double> value;     // per row
  };
  ActResult act(const Array& obs_rows, bool deterministic, Rng& rng) const;

  std::vector<double> value(const Array& obs_rows) const;
  // Closed-form diagonal-Gaussian log density of the given actions under the
  // current policy.
  std::vector<double> log_prob(const Array& obs_rows, const Array& actions) const;

  std::vector<Parameter*> parameters();
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  void save(const std::string& path, std::uint64_t seed, long iterations) const;
  void load_values(const std::string& path);

  Mlp actor, critic;
  Parameter log_std;  // state-independent, clamped like the diffcore heads

 private:
  Array clamped_log_std() const;
  int obs_dim_ = 0, act_dim_ = 0;
  double log_std_min_ = -10.0, log_std_max_ = 2.0;
};

// Maps between the normalized action frame and environment bounds.
struct ActionScaler {
  std::vector<double> center, half;
  explicit ActionScaler(const EnvSpec& spec);
  std::vector<double> to_env(const std::vector<double>& u) const;  // scale + clip
  std::vector<double> to_policy(const std::vector<double>& a) const;
};

// Generalized advantage estimation over one agent's transition sequence with
// zero bootstrap at done steps and the supplied value at truncation.
void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<std::uint8_t>& dones, double bootstrap_value, double gamma,
                 double lambda, std::vector<double>& advantages, std::vector<double>& returns);

// Flattened imagination transitions; only alive steps are stored.
struct ImaginationBatch {
  std::vector<std::vector<double>> obs;      // policy observations
  std::vector<std::vector<double>> actions;  // normalized frame
  std::vector<double> log_probs, values, advantages, returns, rewards;
  std::vector<std::uint8_t> dones;
  std::vector<int> agent_of;  // provenance for invariants/tests
  std::vector<int> step_of;
  long terminations = 0;

  std::size_t size() const { return obs.size(); }
};

struct PPOStats {
  double policy_loss = 0.0, value_loss = 0.0, kl = 0.0, clip_fraction = 0.0, lr = 0.0;
  double entropy = 0.0;
  bool skipped = false;
};

struct BufferSegment {
  Trajectory traj;
  std::string env_name;
  long policy_version = 0;
};

// Oldest-first ring of trajectory segments.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
  void push(Trajectory traj, const std::string& env_name, long policy_version);
  const std::deque<BufferSegment>& segments() const { return segments_; }
  std::vector<Trajectory> trajectories() const;
  long total_steps() const;
  std::size_t size() const { return segments_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::deque<BufferSegment> segments_;
  std::size_t capacity_;
};

struct IterationReport {
  int iteration = 0;
  long real_steps_total = 0;
  double model_error_e = 0.0;
  double predicted_mean_reward = 0.0;
  double ground_truth_mean_reward = 0.0;
  double kl = 0.0, lr = 0.0, clip_fraction = 0.0;
  long terminations_in_imagination = 0;
  double model_loss = 0.0;
};

// Policy-observation composition shared by collection, evaluation and
// imagination: [environment observation | command | previous action].
std::vector<double> policy_observation(const std::vector<double>& obs,
                                       const std::vector<double>& command,
                                       const std::vector<double>& prev_action_u);

// Rolls imagination agents seeded from buffer windows: burn-in over M real
// history steps, then alternate policy actions and model predictions for at
// most T steps. Agents whose predicted termination probability exceeds 0.5
// are frozen; their later steps never enter the batch.
ImaginationBatch imagine_rollout(const WorldModel& model, const ActorCritic& policy,
                                 const ReplayBuffer& buffer, const RewardSpec& reward,
                                 const EnvSpec& env_spec, const PPOConfig& cfg, int n_agents,
                                 int steps, Rng& rng);

// Clipped-surrogate PPO over the batch; adapts the learning rate toward the
// KL target by doubling/halving within [lr_min, lr_max].
PPOStats ppo_update(ActorCritic& policy, AdamW& opt, const ImaginationBatch& batch,
                    const PPOConfig& cfg, Rng& rng);

struct PretrainOptions {
  int episodes = 60;
  int max_len = 400;
  int iterations = 1500;
  std::uint64_t seed = 0;
  double heuristic_fraction = 0.5;
  double domain_scale_range = 0.2;  // +/- on mass and damping
  bool verbose = false;
};

// Collects trajectories under the scripted suboptimal controller across mild
// dynamics randomization and trains the model on them.
std::vector<TrainLogRow> pretrain_world_model(WorldModel& model, const std::string& env_name,
                                              const PretrainOptions& opt);
std::vector<Trajectory> collect_pretrain_data(const std::string& env_name,
                                              const PretrainOptions& opt);

// One object per MBPO-PPO run: owns the environment, model, trainer state,
// policy, optimizer and replay buffer, and executes Algorithm-style
// iterations (collect, fine-tune, imagine, update, evaluate).
class MbpoRunner {
 public:
  MbpoRunner(const std::string& env_name, WorldModel model, const PPOConfig& cfg,
             const RewardSpec& reward, std::uint64_t seed);

  IterationReport run_iteration();
  const std::vector<IterationReport>& reports() const { return reports_; }

  ActorCritic& policy() { return *policy_; }
  WorldModel& model() { return model_; }
  ReplayBuffer& buffer() { return buffer_; }
  const EnvSpec& env_spec() const { return env_->spec(); }

  // Ground-truth evaluation episode with the deterministic policy; the
  // simulator is consulted for evaluation only.
  double evaluate_ground_truth(std::uint64_t seed_salt);

  int model_update_steps = -1;  // override; negative uses the config value

 private:
  Trajectory collect_real_episode();
  double model_error_on(const Trajectory& tr);

  std::string env_name_;
  std::unique_ptr<Env> env_;
  WorldModel model_;
  std::unique_ptr<WmTrainer> trainer_;
  PPOConfig cfg_;
  RewardSpec reward_;
  std::unique_ptr<ActorCritic> policy_;
  std::unique_ptr<AdamW> opt_;
  ReplayBuffer buffer_;
  std::uint64_t seed_;
  int iteration_ = 0;
  long real_steps_total_ = 0;
  std::vector<IterationReport> reports_;
};

}  // namespace rwmlab
