#pragma once

#include <span>
#include <string>
#include <vector>

#include "rwmlab/errors.hpp"

namespace rwmlab {

// Parametric reward terms evaluated on (observation | privileged | action |
// command) concatenations. The same code path scores real transitions and
// imagined ones, so totals are bit-identical for identical numeric inputs.
enum class RewardKind {
  ExpTracking,      // w * exp(-||cmd - v||^2 / sigma^2)
  QuadraticPenalty, // w * ||v||^2
  L1Deviation,      // w * ||v - reference||_1
  ActionRate,       // w * ||a - a_prev||^2
  AirTime,          // w * accumulated off-contact time, credited on contact
  ContactCount,     // w * count(v >= 0.5)
  FlatOrientation,  // w * ||v||^2 on orientation channels
  Clearance,        // w * sum(v)
};

struct RewardTerm {
  RewardKind kind;
  std::string name;
  double weight = 0.0;
  double sigma = 0.25;             // ExpTracking temperature
  std::vector<int> selector;       // indices into the concatenation
  int command_offset = 0;          // ExpTracking pairs selector[j] with command[offset+j]
  std::vector<double> reference;   // L1Deviation anchors (defaults to zeros)
};

// Per-episode accounting for stateful terms. One accumulator per (term,
// selected flag channel); reset at episode start.
struct RewardState {
  std::vector<std::vector<double>> air_accum;
};

struct RewardInputs {
  std::span<const double> obs;
  std::span<const double> priv;
  std::span<const double> action;
  std::span<const double> prev_action;
  std::span<const double> command;
  double dt = 0.02;
};

struct RewardSpec {
  std::string preset;
  std::vector<RewardTerm> terms;

  RewardState make_state() const;

  // Throws ConfigError naming the offending term when a selector is out of
  // range for the given dimensions.
  void validate(std::size_t obs_dim, std::size_t priv_dim, std::size_t act_dim,
                std::size_t command_dim) const;

  // Total reward is the sum of the per-term outputs.
  double eval(const RewardInputs& in, RewardState* state,
              std::vector<double>* per_term = nullptr) const;
};

double eval_term(const RewardTerm& term, const RewardInputs& in, std::vector<double>* air_accum);

// Named presets. "pendulum-track", "cartpole-swingup" and "hopper-hop" bind to
// the toy environments; "anymal-analog" and "g1-analog" reproduce the robot
// weight tables against a documented synthetic layout and exist as executable
// documentation.
RewardSpec reward_preset(const std::string& name);

}  // namespace rwmlab
