#include "rwmlab/env.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "rwmlab/errors.hpp"

namespace rwmlab {

namespace {
constexpr double kGravity = 9.81;
}

std::vector<double> Env::clip_action(const std::vector<double>& action) {
  if (action.size() != spec_.action_bounds.size())
    throw ConfigError(spec_.name + ": action dim " + std::to_string(action.size()) +
                      " != " + std::to_string(spec_.action_bounds.size()));
  std::vector<double> a = action;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto [lo, hi] = spec_.action_bounds[i];
    if (a[i] < lo || a[i] > hi) {
      a[i] = a[i] < lo ? lo : hi;
      ++clip_events_;
    }
  }
  return a;
}

void observe_noisy(std::vector<double>& observation, std::vector<double>& action,
                   double noise_std, Rng& rng) {
  if (noise_std < 0.0) throw ConfigError("observe_noisy: noise_std must be nonnegative");
  if (noise_std == 0.0) return;
  for (auto& v : observation) v += noise_std * rng.normal();
  for (auto& v : action) v += noise_std * rng.normal();
}

// --- pendulum-po -------------------------------------------------------------
// State (angle, angular velocity), angle zero pointing down. Only (sin, cos)
// is observed, which hides the velocity. Never terminates.
class PendulumEnv final : public Env {
 public:
  explicit PendulumEnv(const EnvParams& p) {
    params_ = p;
    spec_.name = "pendulum-po";
    spec_.obs_dim = 2;
    spec_.act_dim = 1;
    spec_.priv_dim = 2;
    spec_.command_dim = 2;
    spec_.dt = p.dt;
    spec_.action_bounds = {{-12.0, 12.0}};
    spec_.priv_flag_channels = {1};
    spec_.termination_channel = 1;
    mass_ = 1.0 * p.mass_scale;
    damping_ = 0.05 * p.damping_scale;
  }

  ResetResult reset(Rng& rng) override {
    EnvState s;
    s.x = {rng.uniform(-M_PI, M_PI), rng.uniform(-0.5, 0.5)};
    std::vector<double> cmd = params_.fixed_command.empty()
                                  ? std::vector<double>{0.0, -1.0}  // upright target
                                  : params_.fixed_command;
    return {s, observe(s), privileged(s), cmd};
  }

  StepResult step(const EnvState& state, const std::vector<double>& action, Rng& rng) override {
    const auto a = clip_action(action);
    const double theta = state.x[0];
    double vel = state.x[1];
    const double accel =
        -(kGravity / length_) * std::sin(theta) - damping_ * vel + a[0] / (mass_ * length_ * length_);
    vel += spec_.dt * accel;
    if (params_.process_noise_std > 0.0) vel += params_.process_noise_std * rng.normal();
    double angle = theta + spec_.dt * vel;
    angle = std::remainder(angle, 2.0 * M_PI);

    EnvState next;
    next.x = {angle, vel};
    next.time_index = state.time_index + 1;
    if (!std::isfinite(angle) || !std::isfinite(vel))
      throw SimulationFault("pendulum-po: non-finite state");
    return {next, observe(next), privileged(next), 0.0, false};
  }

  std::vector<double> observe(const EnvState& s) const override {
    return {std::sin(s.x[0]), std::cos(s.x[0])};
  }

  std::vector<double> privileged(const EnvState& s) const override {
    return {std::min(std::abs(s.x[1]) / 10.0, 1.0), 0.0};
  }

 private:
  double mass_ = 1.0, length_ = 1.0, damping_ = 0.05;
};

// --- cartpole-swingup ---------------------------------------------------------
// Angle zero pointing down (matches the pendulum convention). Fully observed.
// Terminates when the cart leaves the rail.
class CartpoleEnv final : public Env {
 public:
  explicit CartpoleEnv(const EnvParams& p) {
    params_ = p;
    spec_.name = "cartpole-swingup";
    spec_.obs_dim = 5;
    spec_.act_dim = 1;
    spec_.priv_dim = 2;
    spec_.command_dim = 2;
    spec_.dt = p.dt;
    spec_.action_bounds = {{-10.0, 10.0}};
    spec_.priv_flag_channels = {1};
    spec_.termination_channel = 1;
    mass_cart_ = 1.0 * p.mass_scale;
    mass_pole_ = 0.1 * p.mass_scale;
  }

  ResetResult reset(Rng& rng) override {
    EnvState s;
    s.x = {rng.uniform(-0.5, 0.5), rng.uniform(-0.1, 0.1), rng.uniform(-M_PI, M_PI),
           rng.uniform(-0.5, 0.5)};
    std::vector<double> cmd = params_.fixed_command.empty()
                                  ? std::vector<double>{0.0, -1.0}
                                  : params_.fixed_command;
    return {s, observe(s), privileged(s), cmd};
  }

  StepResult step(const EnvState& state, const std::vector<double>& action, Rng& rng) override {
    const auto a = clip_action(action);
    const double force = a[0];
    double x = state.x[0], xdot = state.x[1], phi = state.x[2], phidot = state.x[3];
    const double total = mass_cart_ + mass_pole_;
    const double sin_p = std::sin(phi), cos_p = std::cos(phi);
    const double denom = half_len_ * (4.0 / 3.0 - mass_pole_ * cos_p * cos_p / total);
    const double phi_acc =
        (-kGravity * sin_p + (force * cos_p - mass_pole_ * half_len_ * phidot * phidot * sin_p * cos_p) / total) /
        denom;
    const double x_acc =
        (force + mass_pole_ * half_len_ * (-phidot * phidot * sin_p + phi_acc * cos_p)) / total;

    xdot += spec_.dt * x_acc;
    phidot += spec_.dt * phi_acc;
    if (params_.process_noise_std > 0.0) {
      xdot += params_.process_noise_std * rng.normal();
      phidot += params_.process_noise_std * rng.normal();
    }
    x += spec_.dt * xdot;
    phi = std::remainder(phi + spec_.dt * phidot, 2.0 * M_PI);

    EnvState next;
    next.x = {x, xdot, phi, phidot};
    next.time_index = state.time_index + 1;
    for (double v : next.x)
      if (!std::isfinite(v)) throw SimulationFault("cartpole-swingup: non-finite state");
    const bool term = std::abs(x) > rail_limit_;
    return {next, observe(next), privileged(next), 0.0, term};
  }

  std::vector<double> observe(const EnvState& s) const override {
    return {s.x[0], s.x[1], std::sin(s.x[2]), std::cos(s.x[2]), s.x[3]};
  }

  std::vector<double> privileged(const EnvState& s) const override {
    const double prox = std::min(std::abs(s.x[0]) / rail_limit_, 1.0);
    return {prox, std::abs(s.x[0]) > rail_limit_ ? 1.0 : 0.0};
  }

 private:
  double mass_cart_ = 1.0, mass_pole_ = 0.1, half_len_ = 0.5, rail_limit_ = 2.4;
};

// --- hopper1d -----------------------------------------------------------------
// Point body on a massless springy leg. Thrust acts only through ground
// contact, so the dynamics switch discontinuously between flight and stance.
// Terminates when the body drops below 0.3 m.
class HopperEnv final : public Env {
 public:
  explicit HopperEnv(const EnvParams& p) {
    params_ = p;
    spec_.name = "hopper1d";
    spec_.obs_dim = 3;
    spec_.act_dim = 1;
    spec_.priv_dim = 3;
    spec_.command_dim = 1;
    spec_.dt = p.dt;
    spec_.action_bounds = {{0.0, 20.0}};
    spec_.priv_flag_channels = {0, 2};
    spec_.termination_channel = 2;
    mass_ = 1.0 * p.mass_scale;
    damping_ = 10.0 * p.damping_scale;
  }

  ResetResult reset(Rng& rng) override {
    EnvState s;
    const double h = rng.uniform(0.8, 1.2);
    const double hdot = rng.uniform(-0.1, 0.1);
    s.x = {h, hdot, compression(h), 0.0};
    std::vector<double> cmd =
        params_.fixed_command.empty() ? std::vector<double>{1.0} : params_.fixed_command;
    return {s, observe(s), privileged(s), cmd};
  }

  StepResult step(const EnvState& state, const std::vector<double>& action, Rng& rng) override {
    const auto a = clip_action(action);
    double h = state.x[0], hdot = state.x[1];
    const bool contact = h <= leg_len_;
    double accel = -kGravity;
    if (contact) {
      const double s = compression(h);
      accel += (stiffness_ * s - damping_ * hdot + a[0]) / mass_;
    }
    hdot += spec_.dt * accel;
    if (params_.process_noise_std > 0.0) hdot += params_.process_noise_std * rng.normal();
    h += spec_.dt * hdot;

    EnvState next;
    const bool next_contact = h <= leg_len_;
    next.x = {h, hdot, compression(h), next_contact ? -hdot : 0.0};
    next.time_index = state.time_index + 1;
    for (double v : next.x)
      if (!std::isfinite(v)) throw SimulationFault("hopper1d: non-finite state");
    const bool term = h < min_height_;
    return {next, observe(next), privileged(next), 0.0, term};
  }

  std::vector<double> observe(const EnvState& s) const override {
    return {s.x[0], s.x[1], s.x[2]};
  }

  std::vector<double> privileged(const EnvState& s) const override {
    const double foot = std::max(s.x[0] - leg_len_, 0.0);
    return {foot <= 0.0 ? 1.0 : 0.0, foot, s.x[0] < min_height_ ? 1.0 : 0.0};
  }

 private:
  double compression(double h) const {
    return std::min(std::max(leg_len_ - h, 0.0), max_compression_);
  }

  double mass_ = 1.0, leg_len_ = 0.5, stiffness_ = 200.0, damping_ = 10.0;
  double max_compression_ = 0.5, min_height_ = 0.3;
};

std::unique_ptr<Env> make_env(const std::string& name, const EnvParams& params) {
  if (name == "pendulum-po") return std::make_unique<PendulumEnv>(params);
  if (name == "cartpole-swingup") return std::make_unique<CartpoleEnv>(params);
  if (name == "hopper1d") return std::make_unique<HopperEnv>(params);
  throw ConfigError("unknown environment: " + name);
}

// --- collection ----------------------------------------------------------------

std::vector<Trajectory> collect_trajectories(Env& env, const PolicyFn& policy, int episodes,
                                             int max_len, std::uint64_t seed,
                                             const RewardSpec* reward,
                                             double observation_noise_std) {
  if (episodes < 1) throw UsageError("collect_trajectories: episodes must be >= 1");
  if (max_len < 1) throw UsageError("collect_trajectories: max_len must be >= 1");
  const auto& spec = env.spec();
  if (reward)
    reward->validate(spec.obs_dim, spec.priv_dim, spec.act_dim, spec.command_dim);

  std::vector<Trajectory> out;
  out.reserve(episodes);
  for (int ep = 0; ep < episodes; ++ep) {
    const std::string tag = "ep" + std::to_string(ep);
    Rng env_rng = Rng::derive(seed, "env/" + tag);
    Rng pol_rng = Rng::derive(seed, "policy/" + tag);
    Rng noise_rng = Rng::derive(seed, "obsnoise/" + tag);

    Trajectory traj;
    try {
      ResetResult rr = env.reset(env_rng);
      traj.command = rr.command;
      RewardState rstate = reward ? reward->make_state() : RewardState{};

      auto record_obs = rr.observation;
      if (observation_noise_std > 0.0) {
        std::vector<double> dummy(spec.act_dim, 0.0);
        observe_noisy(record_obs, dummy, observation_noise_std, noise_rng);
      }
      traj.obs.push_back(record_obs);
      traj.priv.push_back(rr.privileged);
      traj.act.emplace_back(spec.act_dim, 0.0);
      traj.reward.push_back(0.0);
      traj.done.push_back(0);

      EnvState state = rr.state;
      std::vector<double> obs = rr.observation;
      std::vector<double> prev_action(spec.act_dim, 0.0);
      for (int t = 0; t < max_len; ++t) {
        PolicyContext ctx{obs, traj.command, prev_action, pol_rng};
        std::vector<double> action = policy(ctx);
        StepResult sr = env.step(state, action, env_rng);

        double r = 0.0;
        if (reward) {
          RewardInputs in{sr.observation, sr.privileged, action, prev_action, traj.command,
                          spec.dt};
          r = reward->eval(in, &rstate);
        }
        // Close out the row we acted from, then open the next one.
        traj.act.back() = action;
        traj.reward.back() = r;

        auto rec = sr.observation;
        if (observation_noise_std > 0.0) {
          auto rec_act = traj.act.back();
          observe_noisy(rec, rec_act, observation_noise_std, noise_rng);
          traj.act.back() = rec_act;
        }
        traj.obs.push_back(rec);
        traj.priv.push_back(sr.privileged);
        traj.act.emplace_back(spec.act_dim, 0.0);
        traj.reward.push_back(0.0);
        traj.done.push_back(sr.terminated ? 1 : 0);

        if (sr.terminated) break;
        state = sr.next_state;
        obs = sr.observation;
        prev_action = traj.act[traj.act.size() - 2];
      }
    } catch (const SimulationFault& f) {
      throw SimulationFault(std::string(f.what()) + " (episode " + std::to_string(ep) + ")", ep);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

// --- .traj container -------------------------------------------------------------

namespace {

constexpr char kTrajMagic[8] = {'R', 'W', 'M', 'T', 'R', 'A', 'J', '1'};

static_assert(std::endian::native == std::endian::little, "traj io assumes little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw ConfigError("traj file: truncated");
  return v;
}

}  // namespace

void save_trajectories(const std::string& path, const TrajFileHeader& h,
                       const std::vector<Trajectory>& episodes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("traj file: cannot open for write: " + path);
  os.write(kTrajMagic, sizeof kTrajMagic);
  put<std::uint64_t>(os, h.env_name.size());
  os.write(h.env_name.data(), static_cast<std::streamsize>(h.env_name.size()));
  put<std::uint32_t>(os, h.obs_dim);
  put<std::uint32_t>(os, h.act_dim);
  put<std::uint32_t>(os, h.priv_dim);
  put<std::uint32_t>(os, h.command_dim);
  put<double>(os, h.dt);
  put<std::uint64_t>(os, h.seed);
  put<std::uint32_t>(os, episodes.size());
  for (const auto& ep : episodes) {
    put<std::uint32_t>(os, ep.length());
    for (int c = 0; c < h.command_dim; ++c)
      put<float>(os, c < static_cast<int>(ep.command.size()) ? ep.command[c] : 0.0f);
    for (std::size_t t = 0; t < ep.length(); ++t) {
      for (double v : ep.obs[t]) put<float>(os, static_cast<float>(v));
      for (double v : ep.act[t]) put<float>(os, static_cast<float>(v));
      for (double v : ep.priv[t]) put<float>(os, static_cast<float>(v));
      put<float>(os, static_cast<float>(ep.reward[t]));
      put<float>(os, static_cast<float>(ep.done[t]));
    }
  }
  if (!os) throw ConfigError("traj file: write failed: " + path);
}

std::pair<TrajFileHeader, std::vector<Trajectory>> load_trajectories(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("traj file: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kTrajMagic, sizeof kTrajMagic) != 0)
    throw ConfigError("traj file: bad magic in " + path);
  TrajFileHeader h;
  const auto name_len = get<std::uint64_t>(is);
  h.env_name.resize(name_len);
  is.read(h.env_name.data(), static_cast<std::streamsize>(name_len));
  h.obs_dim = get<std::uint32_t>(is);
  h.act_dim = get<std::uint32_t>(is);
  h.priv_dim = get<std::uint32_t>(is);
  h.command_dim = get<std::uint32_t>(is);
  h.dt = get<double>(is);
  h.seed = get<std::uint64_t>(is);
  const auto n_eps = get<std::uint32_t>(is);
  std::vector<Trajectory> eps(n_eps);
  for (auto& ep : eps) {
    const auto len = get<std::uint32_t>(is);
    ep.command.resize(h.command_dim);
    for (auto& c : ep.command) c = get<float>(is);
    ep.obs.resize(len);
    ep.act.resize(len);
    ep.priv.resize(len);
    ep.reward.resize(len);
    ep.done.resize(len);
    for (std::uint32_t t = 0; t < len; ++t) {
      ep.obs[t].resize(h.obs_dim);
      for (auto& v : ep.obs[t]) v = get<float>(is);
      ep.act[t].resize(h.act_dim);
      for (auto& v : ep.act[t]) v = get<float>(is);
      ep.priv[t].resize(h.priv_dim);
      for (auto& v : ep.priv[t]) v = get<float>(is);
      ep.reward[t] = get<float>(is);
      ep.done[t] = static_cast<std::uint8_t>(get<float>(is));
    }
  }
  return {h, std::move(eps)};
}

// --- scripted controllers ---------------------------------------------------------

PolicyFn scripted_mixture_policy(const std::string& env_name, double heuristic_fraction) {
  if (env_name == "pendulum-po") {
    return [heuristic_fraction](const PolicyContext& ctx) -> std::vector<double> {
      if (ctx.rng.uniform01() >= heuristic_fraction) return {ctx.rng.uniform(-2.0, 2.0)};
      // Drive toward the inverted target with gravity-aware shaping; velocity
      // is hidden, so the controller relies on position feedback and damping.
      const double sin_t = ctx.observation[0], cos_t = ctx.observation[1];
      double u = 12.0 * (sin_t >= 0.0 ? 1.0 : -1.0);
      if (cos_t < -0.5) u = -14.0 * sin_t;
      return {std::clamp(u + 1.5 * ctx.rng.normal(), -12.0, 12.0)};
    };
  }
  if (env_name == "cartpole-swingup") {
    return [heuristic_fraction](const PolicyContext& ctx) -> std::vector<double> {
      if (ctx.rng.uniform01() >= heuristic_fraction) return {ctx.rng.uniform(-10.0, 10.0)};
      const double x = ctx.observation[0], xdot = ctx.observation[1];
      const double phidot = ctx.observation[4];
      const double f = 4.0 * (phidot >= 0.0 ? 1.0 : -1.0) - 1.0 * x - 0.5 * xdot;
      return {f + 1.0 * ctx.rng.normal()};
    };
  }
  if (env_name == "hopper1d") {
    return [heuristic_fraction](const PolicyContext& ctx) -> std::vector<double> {
      if (ctx.rng.uniform01() >= heuristic_fraction) return {ctx.rng.uniform(0.0, 20.0)};
      // Thrust while the leg is loaded, coast in flight.
      const double compression = ctx.observation[2];
      const double u = compression > 0.0 ? 18.0 : 0.0;
      return {std::clamp(u + 2.0 * ctx.rng.normal(), 0.0, 20.0)};
    };
  }
  throw ConfigError("scripted_mixture_policy: unknown environment " + env_name);
}

}  // namespace rwmlab
