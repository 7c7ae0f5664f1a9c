#include "rwmlab/reward.hpp"

#include <cmath>

namespace rwmlab {

namespace {

double pick(const RewardInputs& in, int idx) {
  std::size_t i = static_cast<std::size_t>(idx);
  if (i < in.obs.size()) return in.obs[i];
  i -= in.obs.size();
  if (i < in.priv.size()) return in.priv[i];
  i -= in.priv.size();
  if (i < in.action.size()) return in.action[i];
  i -= in.action.size();
  return in.command[i];
}

}  // namespace

RewardState RewardSpec::make_state() const {
  RewardState s;
  s.air_accum.resize(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i)
    if (terms[i].kind == RewardKind::AirTime)
      s.air_accum[i].assign(terms[i].selector.size(), 0.0);
  return s;
}

void RewardSpec::validate(std::size_t obs_dim, std::size_t priv_dim, std::size_t act_dim,
                          std::size_t command_dim) const {
  const std::size_t total = obs_dim + priv_dim + act_dim + command_dim;
  for (const auto& t : terms) {
    for (int idx : t.selector) {
      if (idx < 0 || static_cast<std::size_t>(idx) >= total)
        throw ConfigError("reward term '" + t.name + "': selector index " + std::to_string(idx) +
                          " out of range (concat size " + std::to_string(total) + ")");
    }
    if (t.kind == RewardKind::ExpTracking) {
      if (t.sigma <= 0.0) throw ConfigError("reward term '" + t.name + "': sigma must be positive");
      if (t.command_offset + t.selector.size() > command_dim)
        throw ConfigError("reward term '" + t.name + "': command window exceeds command_dim");
    }
    if (t.kind == RewardKind::ActionRate && !t.selector.empty()) {
      for (int idx : t.selector)
        if (static_cast<std::size_t>(idx) >= act_dim)
          throw ConfigError("reward term '" + t.name + "': action selector out of range");
    }
  }
}

double eval_term(const RewardTerm& term, const RewardInputs& in, std::vector<double>* air_accum) {
  switch (term.kind) {
    case RewardKind::ExpTracking: {
      double err2 = 0.0;
      for (std::size_t j = 0; j < term.selector.size(); ++j) {
        const double d = in.command[term.command_offset + j] - pick(in, term.selector[j]);
        err2 += d * d;
      }
      return term.weight * std::exp(-err2 / (term.sigma * term.sigma));
    }
    case RewardKind::QuadraticPenalty:
    case RewardKind::FlatOrientation: {
      double acc = 0.0;
      for (int idx : term.selector) {
        const double v = pick(in, idx);
        acc += v * v;
      }
      return term.weight * acc;
    }
    case RewardKind::L1Deviation: {
      double acc = 0.0;
      for (std::size_t j = 0; j < term.selector.size(); ++j) {
        const double ref = j < term.reference.size() ? term.reference[j] : 0.0;
        acc += std::abs(pick(in, term.selector[j]) - ref);
      }
      return term.weight * acc;
    }
    case RewardKind::ActionRate: {
      double acc = 0.0;
      if (term.selector.empty()) {
        for (std::size_t j = 0; j < in.action.size(); ++j) {
          const double d = in.action[j] - in.prev_action[j];
          acc += d * d;
        }
      } else {
        for (int idx : term.selector) {
          const double d = in.action[idx] - in.prev_action[idx];
          acc += d * d;
        }
      }
      return term.weight * acc;
    }
    case RewardKind::AirTime: {
      // Accumulates off-contact duration per flag channel; the accumulated
      // time is credited at touch-down and the accumulator reset on contact.
      if (!air_accum || air_accum->size() != term.selector.size())
        throw UsageError("reward term '" + term.name + "': air_time requires episode state");
      double credit = 0.0;
      for (std::size_t j = 0; j < term.selector.size(); ++j) {
        const bool contact = pick(in, term.selector[j]) >= 0.5;
        if (contact) {
          credit += (*air_accum)[j];
          (*air_accum)[j] = 0.0;
        } else {
          (*air_accum)[j] += in.dt;
        }
      }
      return term.weight * credit;
    }
    case RewardKind::ContactCount: {
      double count = 0.0;
      for (int idx : term.selector)
        if (pick(in, idx) >= 0.5) count += 1.0;
      return term.weight * count;
    }
    case RewardKind::Clearance: {
      double acc = 0.0;
      for (int idx : term.selector) acc += pick(in, idx);
      return term.weight * acc;
    }
  }
  throw UsageError("eval_term: unknown kind");
}

double RewardSpec::eval(const RewardInputs& in, RewardState* state,
                        std::vector<double>* per_term) const {
  double total = 0.0;
  if (per_term) per_term->assign(terms.size(), 0.0);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    std::vector<double>* accum = nullptr;
    if (terms[i].kind == RewardKind::AirTime) {
      if (!state) throw UsageError("RewardSpec::eval: air_time term requires state");
      accum = &state->air_accum[i];
    }
    const double r = eval_term(terms[i], in, accum);
    if (per_term) (*per_term)[i] = r;
    total += r;
  }
  return total;
}

namespace {

std::vector<int> iota_sel(int lo, int hi) {
  std::vector<int> v;
  for (int i = lo; i < hi; ++i) v.push_back(i);
  return v;
}

RewardSpec pendulum_track() {
  // Concat layout: obs (sin, cos) | priv (|vel|/10, term) | action (1) | command (2).
  RewardSpec s;
  s.preset = "pendulum-track";
  s.terms = {
      {RewardKind::ExpTracking, "track_angle", 1.0, std::sqrt(2.0), {0, 1}, 0, {}},
      {RewardKind::QuadraticPenalty, "spin_penalty", -0.2, 0.25, {2}, 0, {}},
      {RewardKind::ActionRate, "action_rate", -0.0005, 0.25, {}, 0, {}},
  };
  return s;
}

RewardSpec cartpole_swingup() {
  // Concat: obs (x, xdot, sin, cos, veldot) | priv (rail, term) | action (1) | command (2).
  RewardSpec s;
  s.preset = "cartpole-swingup";
  s.terms = {
      {RewardKind::ExpTracking, "track_angle", 1.0, std::sqrt(2.0), {2, 3}, 0, {}},
      {RewardKind::QuadraticPenalty, "center_cart", -0.05, 0.25, {0}, 0, {}},
      {RewardKind::QuadraticPenalty, "spin_penalty", -0.01, 0.25, {4}, 0, {}},
      {RewardKind::ActionRate, "action_rate", -0.01, 0.25, {}, 0, {}},
      {RewardKind::QuadraticPenalty, "rail_proximity", -0.1, 0.25, {5}, 0, {}},
  };
  return s;
}

RewardSpec hopper_hop() {
  // Concat: obs (h, hdot, compression) | priv (contact, foot, term) | action (1) | command (1).
  RewardSpec s;
  s.preset = "hopper-hop";
  s.terms = {
      {RewardKind::ExpTracking, "track_height", 1.0, 0.5, {0}, 0, {}},
      {RewardKind::AirTime, "air_time", 0.5, 0.25, {3}, 0, {}},
      {RewardKind::ActionRate, "action_rate", -0.001, 0.25, {}, 0, {}},
  };
  return s;
}

// Documentation preset against a synthetic layout mirroring the quadruped
// spaces: obs[57] = v 0:3 | w 3:6 | g 6:9 | q 9:21 | qd 21:33 | tau 33:45 |
// qdd 45:57; priv[10] = knee contact 0:4 | foot contact 4:8 | clearance 8:10;
// action[12]; command[3] = vx, vy, wz. Weights follow the published table.
RewardSpec anymal_analog() {
  const int P = 57;  // priv block offset in concat
  RewardSpec s;
  s.preset = "anymal-analog";
  s.terms = {
      {RewardKind::ExpTracking, "lin_vel_tracking", 1.0, 0.25, {0, 1}, 0, {}},
      {RewardKind::ExpTracking, "ang_vel_tracking", 0.5, 0.25, {5}, 2, {}},
      {RewardKind::QuadraticPenalty, "lin_vel_z", -2.0, 0.25, {2}, 0, {}},
      {RewardKind::QuadraticPenalty, "ang_vel_xy", -0.05, 0.25, {3, 4}, 0, {}},
      {RewardKind::QuadraticPenalty, "joint_torque", -2.5e-5, 0.25, iota_sel(33, 45), 0, {}},
      {RewardKind::QuadraticPenalty, "joint_accel", -2.5e-7, 0.25, iota_sel(45, 57), 0, {}},
      {RewardKind::ActionRate, "action_rate", -0.01, 0.25, {}, 0, {}},
      {RewardKind::AirTime, "feet_air_time", 0.5, 0.25, iota_sel(P + 4, P + 8), 0, {}},
      {RewardKind::ContactCount, "undesired_contacts", -1.0, 0.25, iota_sel(P + 0, P + 4), 0, {}},
      {RewardKind::FlatOrientation, "flat_orientation", -5.0, 0.25, {6, 7}, 0, {}},
      {RewardKind::Clearance, "foot_clearance", 0.0, 0.25, iota_sel(P + 8, P + 10), 0, {}},
      {RewardKind::L1Deviation, "joint_deviation", 0.0, 0.25, iota_sel(9, 21), 0,
       std::vector<double>(12, 0.0)},
  };
  return s;
}

// Humanoid counterpart: obs[125] = v 0:3 | w 3:6 | g 6:9 | q 9:38 | qd 38:67 |
// tau 67:96 | qdd 96:125; priv[30] = body contact 0:26 | foot height 26:28 |
// foot velocity 28:30; action[29]; command[3].
RewardSpec g1_analog() {
  const int P = 125;
  RewardSpec s;
  s.preset = "g1-analog";
  s.terms = {
      {RewardKind::ExpTracking, "lin_vel_tracking", 1.0, 0.25, {0, 1}, 0, {}},
      {RewardKind::ExpTracking, "ang_vel_tracking", 0.5, 0.25, {5}, 2, {}},
      {RewardKind::QuadraticPenalty, "lin_vel_z", -2.0, 0.25, {2}, 0, {}},
      {RewardKind::QuadraticPenalty, "ang_vel_xy", -0.05, 0.25, {3, 4}, 0, {}},
      {RewardKind::QuadraticPenalty, "joint_torque", -2.5e-5, 0.25, iota_sel(67, 96), 0, {}},
      {RewardKind::QuadraticPenalty, "joint_accel", -2.5e-7, 0.25, iota_sel(96, 125), 0, {}},
      {RewardKind::ActionRate, "action_rate", -0.05, 0.25, {}, 0, {}},
      {RewardKind::AirTime, "feet_air_time", 0.0, 0.25, iota_sel(P + 26, P + 28), 0, {}},
      {RewardKind::ContactCount, "undesired_contacts", -1.0, 0.25, iota_sel(P + 0, P + 26), 0, {}},
      {RewardKind::FlatOrientation, "flat_orientation", -5.0, 0.25, {6, 7}, 0, {}},
      {RewardKind::Clearance, "foot_clearance", 1.0, 0.25, iota_sel(P + 26, P + 28), 0, {}},
      {RewardKind::L1Deviation, "joint_deviation", -1.0, 0.25, iota_sel(9, 38), 0,
       std::vector<double>(29, 0.0)},
  };
  return s;
}

}  // namespace

RewardSpec reward_preset(const std::string& name) {
  if (name == "pendulum-track") return pendulum_track();
  if (name == "cartpole-swingup") return cartpole_swingup();
  if (name == "hopper-hop") return hopper_hop();
  if (name == "anymal-analog") return anymal_analog();
  if (name == "g1-analog") return g1_analog();
  if (name == "none" || name.empty()) return RewardSpec{};
  throw ConfigError("unknown reward preset: " + name);
}

}  // namespace rwmlab
