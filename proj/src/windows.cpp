#include "rwmlab/windows.hpp"

#include <cmath>

#include "rwmlab/errors.hpp"

namespace rwmlab {

namespace {
constexpr double kStdFloor = 1e-6;

void fit_channel(const std::vector<const std::vector<double>*>& rows, std::vector<double>& mean,
                 std::vector<double>& std) {
  if (rows.empty()) throw UsageError("Normalizer::fit: empty buffer");
  const std::size_t dim = rows.front()->size();
  mean.assign(dim, 0.0);
  std.assign(dim, 0.0);
  for (const auto* r : rows)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += (*r)[j];
  for (auto& m : mean) m /= static_cast<double>(rows.size());
  for (const auto* r : rows)
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = (*r)[j] - mean[j];
      std[j] += d * d;
    }
  for (auto& s : std) s = std::max(std::sqrt(s / static_cast<double>(rows.size())), kStdFloor);
}

}  // namespace

Normalizer Normalizer::fit(const std::vector<Trajectory>& trajs) {
  std::vector<const std::vector<double>*> obs_rows, act_rows;
  for (const auto& tr : trajs)
    for (std::size_t t = 0; t < tr.length(); ++t) {
      obs_rows.push_back(&tr.obs[t]);
      act_rows.push_back(&tr.act[t]);
    }
  Normalizer n;
  fit_channel(obs_rows, n.obs_mean, n.obs_std);
  fit_channel(act_rows, n.act_mean, n.act_std);
  return n;
}

Normalizer Normalizer::identity(int obs_dim, int act_dim) {
  Normalizer n;
  n.obs_mean.assign(obs_dim, 0.0);
  n.obs_std.assign(obs_dim, 1.0);
  n.act_mean.assign(act_dim, 0.0);
  n.act_std.assign(act_dim, 1.0);
  return n;
}

void Normalizer::normalize_obs(std::vector<double>& o) const {
  for (std::size_t j = 0; j < o.size(); ++j) o[j] = (o[j] - obs_mean[j]) / obs_std[j];
}

void Normalizer::denormalize_obs(std::vector<double>& o) const {
  for (std::size_t j = 0; j < o.size(); ++j) o[j] = o[j] * obs_std[j] + obs_mean[j];
}

void Normalizer::normalize_act(std::vector<double>& a) const {
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = (a[j] - act_mean[j]) / act_std[j];
}

void Normalizer::normalize_obs_rows(Array& rows) const {
  const std::size_t cols = rows.cols();
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t j = 0; j < cols; ++j)
      rows.data[i * cols + j] = (rows.data[i * cols + j] - obs_mean[j]) / obs_std[j];
}

void Normalizer::normalize_act_rows(Array& rows) const {
  const std::size_t cols = rows.cols();
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t j = 0; j < cols; ++j)
      rows.data[i * cols + j] = (rows.data[i * cols + j] - act_mean[j]) / act_std[j];
}

void Normalizer::denormalize_obs_rows(Array& rows) const {
  const std::size_t cols = rows.cols();
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t j = 0; j < cols; ++j)
      rows.data[i * cols + j] = rows.data[i * cols + j] * obs_std[j] + obs_mean[j];
}

WindowSet make_windows(const std::vector<Trajectory>& trajs, int history, int forecast,
                       int stride) {
  if (trajs.empty()) throw UsageError("make_windows: no trajectories");
  if (history < 1 || forecast < 1 || stride < 1)
    throw ConfigError("make_windows: history, forecast and stride must be >= 1");
  WindowSet set;
  set.history = history;
  set.forecast = forecast;
  const int full = history + forecast;
  for (std::size_t ti = 0; ti < trajs.size(); ++ti) {
    const int len = static_cast<int>(trajs[ti].length());
    if (len < history + 1) {
      ++set.skipped_short;
      continue;
    }
    if (len >= full) {
      for (int start = 0; start + full <= len; start += stride)
        set.windows.push_back({static_cast<int>(ti), start, full});
    } else {
      set.windows.push_back({static_cast<int>(ti), 0, len});
    }
    // Termination may only sit on the final row of an episode, so no window
    // can contain a mid-window done flag.
    for (int t = 0; t + 1 < len; ++t)
      if (trajs[ti].done[t])
        throw UsageError("make_windows: mid-episode termination flag in trajectory " +
                         std::to_string(ti));
  }
  return set;
}

WindowBatch gather_windows(const std::vector<Trajectory>& trajs, const WindowSet& set,
                           const std::vector<std::size_t>& picks, const Normalizer* norm) {
  if (picks.empty()) throw UsageError("gather_windows: empty pick list");
  const int full = set.history + set.forecast;
  const std::size_t batch = picks.size();
  const auto& first = trajs[set.windows[picks[0]].traj];
  const std::size_t obs_dim = first.obs[0].size();
  const std::size_t act_dim = first.act[0].size();
  const std::size_t priv_dim = first.priv[0].size();

  WindowBatch wb;
  wb.batch = batch;
  wb.history = set.history;
  wb.forecast = set.forecast;
  wb.obs.assign(full, Array::zeros({batch, obs_dim}));
  wb.act.assign(full, Array::zeros({batch, act_dim}));
  wb.priv.assign(full, Array::zeros({batch, priv_dim}));
  wb.mask.assign(full, Array::zeros({batch, 1}));

  for (std::size_t b = 0; b < batch; ++b) {
    const WindowIndex& w = set.windows.at(picks[b]);
    const Trajectory& tr = trajs[w.traj];
    for (int t = 0; t < w.valid_rows; ++t) {
      const int row = w.start + t;
      for (std::size_t j = 0; j < obs_dim; ++j) wb.obs[t].at(b, j) = tr.obs[row][j];
      for (std::size_t j = 0; j < act_dim; ++j) wb.act[t].at(b, j) = tr.act[row][j];
      for (std::size_t j = 0; j < priv_dim; ++j) wb.priv[t].at(b, j) = tr.priv[row][j];
      wb.mask[t].at(b, 0) = 1.0;
    }
  }
  if (norm) {
    for (int t = 0; t < full; ++t) {
      norm->normalize_obs_rows(wb.obs[t]);
      norm->normalize_act_rows(wb.act[t]);
    }
  }
  return wb;
}

}  // namespace rwmlab
