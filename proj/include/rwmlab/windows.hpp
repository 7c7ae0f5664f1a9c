#pragma once

#include <cstdint>
#include <vector>

#include "rwmlab/array.hpp"
#include "rwmlab/env.hpp"

namespace rwmlab {

// Per-dimension standardization fitted on a trajectory buffer and frozen for
// the duration of a training round. Stds are floored so the round trip
// normalize -> denormalize is exact.
struct Normalizer {
  std::vector<double> obs_mean, obs_std, act_mean, act_std;

  static Normalizer fit(const std::vector<Trajectory>& trajs);
  static Normalizer identity(int obs_dim, int act_dim);

  void normalize_obs(std::vector<double>& o) const;
  void denormalize_obs(std::vector<double>& o) const;
  void normalize_act(std::vector<double>& a) const;

  void normalize_obs_rows(Array& rows) const;
  void normalize_act_rows(Array& rows) const;
  void denormalize_obs_rows(Array& rows) const;
};

// Length-(M+N) slices of trajectories: M-step history context plus N-step
// forecast targets. Stored step-major; mask row b of step t is 1 when the row
// holds real data. Windows never cross a termination boundary.
struct WindowBatch {
  std::vector<Array> obs;   // M+N entries of [batch, obs_dim]
  std::vector<Array> act;   // [batch, act_dim]
  std::vector<Array> priv;  // [batch, priv_dim]
  std::vector<Array> mask;  // [batch, 1]
  std::size_t batch = 0;
  int history = 0, forecast = 0;
};

struct WindowIndex {
  int traj = 0;
  int start = 0;
  int valid_rows = 0;  // real rows in the window, in [M+1, M+N]
};

struct WindowSet {
  std::vector<WindowIndex> windows;
  int history = 0, forecast = 0;
  long skipped_short = 0;  // episodes shorter than M+1 rows
};

// Emits every maximal in-episode window at the given stride. Episodes shorter
// than a full window but long enough to cover the history contribute one
// padded, masked window; shorter episodes are counted and skipped.
WindowSet make_windows(const std::vector<Trajectory>& trajs, int history, int forecast,
                       int stride = 1);

// Materializes the picked windows, normalizing observations and actions when a
// normalizer is given. Privileged rows stay raw.
WindowBatch gather_windows(const std::vector<Trajectory>& trajs, const WindowSet& set,
                           const std::vector<std::size_t>& picks, const Normalizer* norm);

}  // namespace rwmlab
