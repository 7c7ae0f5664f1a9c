#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rwmlab/reward.hpp"
#include "rwmlab/rng.hpp"

namespace rwmlab {

struct EnvSpec {
  std::string name;
  int obs_dim = 0;
  int act_dim = 0;
  int priv_dim = 0;
  int command_dim = 0;
  double dt = 0.02;
  std::vector<std::pair<double, double>> action_bounds;
  // Privileged channels interpreted as binary flags; the rest are continuous.
  std::vector<int> priv_flag_channels;
  int termination_channel = -1;  // index into priv; -1 when never terminating
};

struct EnvState {
  std::vector<double> x;
  long time_index = 0;
};

struct ResetResult {
  EnvState state;
  std::vector<double> observation;
  std::vector<double> privileged;
  std::vector<double> command;
};

struct StepResult {
  EnvState next_state;
  std::vector<double> observation;
  std::vector<double> privileged;
  double reward = 0.0;
  bool terminated = false;
};

// Dynamics scaling for pretraining randomization plus noise and step-size
// knobs shared by all environments.
struct EnvParams {
  double mass_scale = 1.0;
  double damping_scale = 1.0;
  double process_noise_std = 0.01;  // added to velocity states each step
  double dt = 0.02;
  std::vector<double> fixed_command;  // empty -> environment default
};

// Environments are pure-function steppers over explicit state; reset/step take
// the RNG used for initialization and process noise. A single instance must
// not be stepped concurrently (it keeps a clip-event counter).
class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }
  const EnvParams& params() const { return params_; }

  virtual ResetResult reset(Rng& rng) = 0;
  virtual StepResult step(const EnvState& state, const std::vector<double>& action, Rng& rng) = 0;
  virtual std::vector<double> observe(const EnvState& state) const = 0;
  virtual std::vector<double> privileged(const EnvState& state) const = 0;

  ResetResult reset_seeded(std::uint64_t seed) {
    Rng rng(seed);
    return reset(rng);
  }

  long clip_events() const { return clip_events_; }

 protected:
  std::vector<double> clip_action(const std::vector<double>& action);

  EnvSpec spec_;
  EnvParams params_;
  long clip_events_ = 0;
};

std::unique_ptr<Env> make_env(const std::string& name, const EnvParams& params = {});

// Additive i.i.d. zero-mean Gaussian perturbation on every component.
void observe_noisy(std::vector<double>& observation, std::vector<double>& action,
                   double noise_std, Rng& rng);

// One episode: row t holds the state visited at time t. Rows pair (obs_t,
// act_t); reward_t scores the transition out of row t; done_t marks a terminal
// state (always the final row, with zeroed action).
struct Trajectory {
  std::vector<double> command;
  std::vector<std::vector<double>> obs, act, priv;
  std::vector<double> reward;
  std::vector<std::uint8_t> done;

  std::size_t length() const { return obs.size(); }
};

struct PolicyContext {
  const std::vector<double>& observation;
  const std::vector<double>& command;
  const std::vector<double>& prev_action;
  Rng& rng;
};
using PolicyFn = std::function<std::vector<double>(const PolicyContext&)>;

std::vector<Trajectory> collect_trajectories(Env& env, const PolicyFn& policy, int episodes,
                                             int max_len, std::uint64_t seed,
                                             const RewardSpec* reward = nullptr,
                                             double observation_noise_std = 0.0);

// ".traj" container: header (env name, dims, dt, seed) then per-episode blocks
// of little-endian 32-bit float rows [obs | action | priv | reward | done].
struct TrajFileHeader {
  std::string env_name;
  int obs_dim = 0, act_dim = 0, priv_dim = 0, command_dim = 0;
  double dt = 0.02;
  std::uint64_t seed = 0;
};

void save_trajectories(const std::string& path, const TrajFileHeader& header,
                       const std::vector<Trajectory>& episodes);
std::pair<TrajFileHeader, std::vector<Trajectory>> load_trajectories(const std::string& path);

// Scripted suboptimal controllers (50/50 random/heuristic per step) used for
// data collection and world-model pretraining.
PolicyFn scripted_mixture_policy(const std::string& env_name, double heuristic_fraction = 0.5);

}  // namespace rwmlab
