#include "rwmlab/world_model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "rwmlab/checkpoint.hpp"
#include "rwmlab/errors.hpp"

namespace rwmlab {

using nlohmann::json;

void WorldModelConfig::validate() const {
  if (history_horizon < 1) throw ConfigError("world model: history_horizon must be >= 1");
  if (forecast_horizon < 1) throw ConfigError("world model: forecast_horizon must be >= 1");
  if (forecast_decay <= 0.0 || forecast_decay > 1.0)
    throw ConfigError("world model: forecast_decay must be in (0, 1]");
  if (obs_dim < 1 || act_dim < 1) throw ConfigError("world model: obs/act dims unset");
  if (batch_size < 1) throw ConfigError("world model: batch_size must be >= 1");
  if (variant != "rwm" && variant != "mlp")
    throw ConfigError("world model: unknown variant '" + variant + "'");
  for (int c : priv_flag_channels)
    if (c < 0 || c >= priv_dim) throw ConfigError("world model: flag channel out of range");
}

WorldModel::WorldModel(WorldModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = Rng::derive(seed, "wm-init/" + cfg_.variant);
  const int in_dim = cfg_.obs_dim + cfg_.act_dim;
  int feature_dim = 0;
  if (cfg_.variant == "rwm") {
    int prev = in_dim;
    for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
      gru_.emplace_back("wm.gru" + std::to_string(i), prev, cfg_.hidden[i], rng);
      prev = cfg_.hidden[i];
    }
    feature_dim = prev;
  } else {
    if (cfg_.mlp_hidden.size() < 1) throw ConfigError("world model: mlp_hidden empty");
    std::vector<int> body(cfg_.mlp_hidden.begin(), cfg_.mlp_hidden.end() - 1);
    mlp_body_ = Mlp("wm.body", cfg_.history_horizon * in_dim, body, cfg_.mlp_hidden.back(),
                    Activation::Relu, rng);
    feature_dim = cfg_.mlp_hidden.back();
  }
  head_trunk_ = AffineLayer("wm.head.trunk", feature_dim, cfg_.head_hidden, rng);
  head_mean_ = AffineLayer("wm.head.mean", cfg_.head_hidden, cfg_.obs_dim, rng);
  head_log_std_ = AffineLayer("wm.head.log_std", cfg_.head_hidden, cfg_.obs_dim, rng);
  head_priv_ = AffineLayer("wm.head.priv", cfg_.head_hidden, std::max(cfg_.priv_dim, 1), rng);
  norm_ = Normalizer::identity(cfg_.obs_dim, cfg_.act_dim);
}

WorldModel::State WorldModel::init_state(std::size_t batch) const {
  State s;
  s.batch = batch;
  if (cfg_.variant == "rwm")
    for (int h : cfg_.hidden) s.hidden.push_back(Array::zeros({batch, static_cast<std::size_t>(h)}));
  return s;
}

namespace {

Array normalized_copy(const Array& rows, const std::vector<double>& mean,
                      const std::vector<double>& std) {
  Array out = rows;
  const std::size_t cols = out.cols();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out.data[i * cols + j] = (out.data[i * cols + j] - mean[j]) / std[j];
  return out;
}

Array concat_rows(const Array& a, const Array& b) {
  const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols();
  Array out({rows, ca + cb});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out.data[i * (ca + cb) + j] = a.data[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out.data[i * (ca + cb) + ca + j] = b.data[i * cb + j];
  }
  return out;
}

}  // namespace

void WorldModel::observe(State& s, const Array& obs_raw, const Array& act_raw) const {
  const Array obs = normalized_copy(obs_raw, norm_.obs_mean, norm_.obs_std);
  const Array act = normalized_copy(act_raw, norm_.act_mean, norm_.act_std);
  if (cfg_.variant == "rwm") {
    Array x = concat_rows(obs, act);
    for (std::size_t l = 0; l < gru_.size(); ++l) {
      Array h_new;
      gru_[l].forward_raw(x, s.hidden[l], h_new);
      s.hidden[l] = std::move(h_new);
      x = s.hidden[l];
    }
  } else {
    s.ring.emplace_back(obs, act);
    while (s.ring.size() > static_cast<std::size_t>(cfg_.history_horizon - 1)) s.ring.pop_front();
  }
}

GaussianPrediction WorldModel::predict(State& s, const Array& obs_in_raw, const Array& act_raw,
                                       const Array* noise, bool deterministic) const {
  const Array obs = normalized_copy(obs_in_raw, norm_.obs_mean, norm_.obs_std);
  const Array act = normalized_copy(act_raw, norm_.act_mean, norm_.act_std);
  const std::size_t batch = obs.rows();

  Array feature;
  if (cfg_.variant == "rwm") {
    Array x = concat_rows(obs, act);
    for (std::size_t l = 0; l < gru_.size(); ++l) {
      Array h_new;
      gru_[l].forward_raw(x, s.hidden[l], h_new);
      s.hidden[l] = std::move(h_new);
      x = s.hidden[l];
    }
    feature = s.hidden.back();
  } else {
    const std::size_t m1 = static_cast<std::size_t>(cfg_.history_horizon - 1);
    if (s.ring.size() != m1)
      throw UsageError("mlp world model: predict needs exactly M-1 prior pairs, have " +
                       std::to_string(s.ring.size()));
    const std::size_t pair_dim = cfg_.obs_dim + cfg_.act_dim;
    Array window({batch, static_cast<std::size_t>(cfg_.history_horizon) * pair_dim});
    std::size_t off = 0;
    auto put_pair = [&](const Array& o, const Array& a) {
      for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < o.cols(); ++j)
          window.data[i * window.cols() + off + j] = o.data[i * o.cols() + j];
        for (std::size_t j = 0; j < a.cols(); ++j)
          window.data[i * window.cols() + off + o.cols() + j] = a.data[i * a.cols() + j];
      }
      off += pair_dim;
    };
    for (const auto& [o, a] : s.ring) put_pair(o, a);
    put_pair(obs, act);
    feature = mlp_body_.forward_raw(window);
    for (auto& v : feature.data) v = v > 0.0 ? v : 0.0;
    // Shift: the oldest pair leaves the window.
    s.ring.emplace_back(obs, act);
    s.ring.pop_front();
  }

  Array trunk;
  head_trunk_.forward_raw(feature, trunk);
  for (auto& v : trunk.data) v = v > 0.0 ? v : 0.0;
  Array mean_n, log_std, priv;
  head_mean_.forward_raw(trunk, mean_n);
  head_log_std_.forward_raw(trunk, log_std);
  head_priv_.forward_raw(trunk, priv);
  if (cfg_.predict_delta)
    for (std::size_t i = 0; i < mean_n.size(); ++i) mean_n.data[i] += obs.data[i];
  for (auto& v : log_std.data) v = std::clamp(v, cfg_.log_std_min, cfg_.log_std_max);

  GaussianPrediction out;
  out.mean_raw = mean_n;
  norm_.denormalize_obs_rows(out.mean_raw);
  out.std_raw = Array({batch, static_cast<std::size_t>(cfg_.obs_dim)});
  for (std::size_t i = 0; i < batch; ++i)
    for (int j = 0; j < cfg_.obs_dim; ++j)
      out.std_raw.at(i, j) = std::exp(log_std.at(i, j)) * norm_.obs_std[j];

  out.priv = Array({batch, static_cast<std::size_t>(std::max(cfg_.priv_dim, 1))});
  for (std::size_t i = 0; i < batch; ++i)
    for (int j = 0; j < cfg_.priv_dim; ++j) {
      const bool flag = std::find(cfg_.priv_flag_channels.begin(), cfg_.priv_flag_channels.end(),
                                  j) != cfg_.priv_flag_channels.end();
      const double v = priv.at(i, j);
      out.priv.at(i, j) = flag ? 1.0 / (1.0 + std::exp(-v)) : v;
    }

  if (deterministic || noise == nullptr) {
    out.sample_raw = out.mean_raw;
  } else {
    require_same_shape(out.mean_raw, *noise, "predict noise");
    out.sample_raw = out.mean_raw;
    for (std::size_t i = 0; i < out.sample_raw.size(); ++i)
      out.sample_raw.data[i] += out.std_raw.data[i] * noise->data[i];
  }
  if (!out.mean_raw.all_finite() || !out.std_raw.all_finite() || !out.priv.all_finite())
    throw ModelFault("world model: non-finite prediction");
  return out;
}

WorldModel::State WorldModel::burn_in(const std::vector<Array>& history_obs_raw,
                                      const std::vector<Array>& history_act_raw) const {
  if (history_obs_raw.empty() || history_obs_raw.size() != history_act_raw.size())
    throw UsageError("burn_in: history obs/act lengths mismatch");
  State s = init_state(history_obs_raw[0].rows());
  for (std::size_t t = 0; t < history_obs_raw.size(); ++t)
    observe(s, history_obs_raw[t], history_act_raw[t]);
  return s;
}

std::vector<GaussianPrediction> rollout(const WorldModel& model,
                                        const std::vector<Array>& history_obs,
                                        const std::vector<Array>& history_act,
                                        const std::vector<Array>& actions,
                                        const std::vector<Array>* noise, bool deterministic) {
  const int m = model.config().history_horizon;
  if (static_cast<int>(history_obs.size()) != m)
    throw UsageError("rollout: history must hold exactly M steps");
  if (actions.empty()) throw UsageError("rollout: need at least one forecast action");
  if (noise && noise->size() < actions.size())
    throw UsageError("rollout: noise sequence shorter than the forecast");

  WorldModel::State s = model.init_state(history_obs[0].rows());
  for (int t = 0; t + 1 < m; ++t) model.observe(s, history_obs[t], history_act[t]);

  std::vector<GaussianPrediction> preds;
  Array obs_in = history_obs.back();  // first step consumes the last real observation
  for (std::size_t k = 0; k < actions.size(); ++k) {
    GaussianPrediction p;
    try {
      p = model.predict(s, obs_in, actions[k], noise ? &(*noise)[k] : nullptr, deterministic);
    } catch (const ModelFault& f) {
      throw ModelFault(std::string(f.what()) + " at forecast step " + std::to_string(k + 1),
                       static_cast<long>(k + 1));
    }
    obs_in = p.sample_raw;
    preds.push_back(std::move(p));
  }
  return preds;
}

// --- training graph ------------------------------------------------------------

WorldModel::ForwardGraph WorldModel::build_training_graph(Tape& t, const WindowBatch& batch,
                                                          const std::vector<Array>& noise,
                                                          const GraphOptions& opt) {
  const int m = cfg_.history_horizon, n = cfg_.forecast_horizon;
  if (batch.history != m || batch.forecast != n)
    throw UsageError("build_training_graph: batch horizons do not match the config");
  if (static_cast<int>(noise.size()) < n)
    throw UsageError("build_training_graph: need one noise array per forecast step");
  const bool feed_sample = opt.feedback_sampled.value_or(cfg_.feedback_sampled);
  const std::size_t bsz = batch.batch;

  ForwardGraph fg;

  // Bind parameters once.
  std::vector<GruParamVars> gru_vars;
  for (auto& g : gru_) gru_vars.push_back(g.bind(t));
  Var trunk_w = t.param(head_trunk_.w), trunk_b = t.param(head_trunk_.b);
  Var mean_w = t.param(head_mean_.w), mean_b = t.param(head_mean_.b);
  Var ls_w = t.param(head_log_std_.w), ls_b = t.param(head_log_std_.b);
  Var priv_w = t.param(head_priv_.w), priv_b = t.param(head_priv_.b);

  std::vector<Var> hidden;
  std::deque<std::pair<Var, Var>> ring;
  if (cfg_.variant == "rwm") {
    for (int h : cfg_.hidden)
      hidden.push_back(t.constant(Array::zeros({bsz, static_cast<std::size_t>(h)})));
  }

  auto advance = [&](Var obs_v, Var act_v) -> Var {  // returns feature var
    if (cfg_.variant == "rwm") {
      Var x = t.concat_cols({obs_v, act_v});
      for (std::size_t l = 0; l < gru_.size(); ++l) {
        hidden[l] = t.gru_cell(x, hidden[l], gru_vars[l]);
        x = hidden[l];
      }
      return hidden.back();
    }
    ring.emplace_back(obs_v, act_v);
    std::vector<Var> parts;
    for (const auto& [o, a] : ring) {
      parts.push_back(o);
      parts.push_back(a);
    }
    Var window = t.concat_cols(parts);
    ring.pop_front();
    Var f = window;
    for (std::size_t i = 0; i < mlp_body_.layers.size(); ++i) {
      f = mlp_body_.layers[i].forward(t, f);
      if (i + 1 < mlp_body_.layers.size()) f = t.relu(f);
    }
    return t.relu(f);
  };

  // Inner autoregression over the history; the last pair is consumed by the
  // first forecast step below.
  for (int step = 0; step + 1 < m; ++step) {
    Var obs_v = t.constant(batch.obs[step]);
    Var act_v = t.constant(batch.act[step]);
    if (cfg_.variant == "rwm") {
      Var x = t.concat_cols({obs_v, act_v});
      for (std::size_t l = 0; l < gru_.size(); ++l) {
        hidden[l] = t.gru_cell(x, hidden[l], gru_vars[l]);
        x = hidden[l];
      }
    } else {
      ring.emplace_back(obs_v, act_v);
      while (ring.size() > static_cast<std::size_t>(m - 1)) ring.pop_front();
    }
  }

  Var obs_in = t.constant(batch.obs[m - 1]);
  Var decayed_sum;
  double alpha_pow = 1.0;
  for (int k = 1; k <= n; ++k) {
    Var act_v = t.constant(batch.act[m - 2 + k]);
    Var feature = advance(obs_in, act_v);
    Var trunk = t.relu(t.affine(feature, trunk_w, trunk_b));
    Var mean = t.affine(trunk, mean_w, mean_b);
    if (cfg_.predict_delta) mean = t.add(mean, obs_in);
    Var log_std = t.clamp(t.affine(trunk, ls_w, ls_b), cfg_.log_std_min, cfg_.log_std_max);
    Var priv = t.affine(trunk, priv_w, priv_b);
    fg.means.push_back(mean);
    fg.log_stds.push_back(log_std);

    const int target_row = m - 1 + k;
    const Array& target_obs = batch.obs[target_row];
    const Array& target_priv = batch.priv[target_row];
    const Array& mask = batch.mask[target_row];
    double cnt = 0.0;
    for (double v : mask.data) cnt += v;

    if (cnt > 0.0) {
      Var per_elem = cfg_.mse_only ? t.square(t.sub(mean, t.constant(target_obs)))
                                   : t.gaussian_nll(mean, log_std, target_obs);
      Var per_row = t.row_sum(per_elem);
      for (int c = 0; c < cfg_.priv_dim; ++c) {
        Var col = t.slice_cols(priv, c, c + 1);
        Array tgt({bsz, 1});
        for (std::size_t i = 0; i < bsz; ++i) tgt.at(i, 0) = target_priv.at(i, c);
        const bool flag = std::find(cfg_.priv_flag_channels.begin(),
                                    cfg_.priv_flag_channels.end(), c) !=
                          cfg_.priv_flag_channels.end();
        Var col_loss = flag ? t.bce_logits(col, tgt) : t.square(t.sub(col, t.constant(tgt)));
        per_row = t.add(per_row, col_loss);
      }
      Var masked = t.mul_const(per_row, mask);
      Var step_loss = t.scale(t.sum(masked), 1.0 / cnt);
      fg.step_losses.push_back(step_loss);
      fg.step_loss_values.push_back(t.value(step_loss).data[0]);
      fg.step_valid.push_back(true);
      ++fg.valid_steps;
      alpha_pow *= cfg_.forecast_decay;
      Var weighted = t.scale(step_loss, alpha_pow);
      decayed_sum = decayed_sum.valid() ? t.add(decayed_sum, weighted) : weighted;
    } else {
      fg.step_losses.push_back(Var{});
      fg.step_loss_values.push_back(0.0);
      fg.step_valid.push_back(false);
      alpha_pow *= cfg_.forecast_decay;
    }

    if (k < n) {
      Var next_in = feed_sample ? t.reparam_sample(mean, log_std, noise[k - 1]) : mean;
      obs_in = opt.detach_feedback ? t.detach(next_in) : next_in;
    }
  }

  if (fg.valid_steps == 0) throw UsageError("multistep loss: all steps masked");
  fg.loss = t.scale(decayed_sum, 1.0 / static_cast<double>(fg.valid_steps));
  return fg;
}

std::vector<Parameter*> WorldModel::parameters() {
  std::vector<Parameter*> ps;
  if (cfg_.variant == "rwm") {
    for (auto& g : gru_)
      for (auto* p : g.params()) ps.push_back(p);
  } else {
    for (auto* p : mlp_body_.params()) ps.push_back(p);
  }
  for (auto* l : {&head_trunk_, &head_mean_, &head_log_std_, &head_priv_}) {
    ps.push_back(&l->w);
    ps.push_back(&l->b);
  }
  return ps;
}

double decayed_total(const std::vector<double>& step_losses, const std::vector<bool>& step_valid,
                     double alpha) {
  double acc = 0.0, alpha_pow = 1.0;
  int valid = 0;
  for (std::size_t k = 0; k < step_losses.size(); ++k) {
    alpha_pow *= alpha;
    if (step_valid[k]) {
      acc += alpha_pow * step_losses[k];
      ++valid;
    }
  }
  if (valid == 0) throw UsageError("multistep loss: all steps masked");
  return acc / static_cast<double>(valid);
}

RelativeError relative_error(const std::vector<std::vector<double>>& predicted,
                             const std::vector<std::vector<double>>& target,
                             const std::vector<double>& normalizer_std) {
  if (predicted.size() != target.size())
    throw UsageError("relative_error: sequence length mismatch");
  RelativeError out;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    if (predicted[k].size() != normalizer_std.size())
      throw UsageError("relative_error: dimension mismatch");
    double acc = 0.0;
    for (std::size_t j = 0; j < predicted[k].size(); ++j) {
      const double denom = std::max(normalizer_std[j], 1e-6);
      acc += std::abs(predicted[k][j] - target[k][j]) / denom;
    }
    out.per_step.push_back(acc / static_cast<double>(predicted[k].size()));
  }
  double mean = 0.0;
  for (double v : out.per_step) mean += v;
  out.mean = out.per_step.empty() ? 0.0 : mean / static_cast<double>(out.per_step.size());
  return out;
}

// --- persistence -----------------------------------------------------------------

void WorldModel::save(const std::string& path, std::uint64_t seed, long iterations) const {
  auto& self = const_cast<WorldModel&>(*this);
  save_params(path, self.parameters());
  json meta;
  meta["config"] = {{"history_horizon", cfg_.history_horizon},
                    {"forecast_horizon", cfg_.forecast_horizon},
                    {"forecast_decay", cfg_.forecast_decay},
                    {"hidden", cfg_.hidden},
                    {"head_hidden", cfg_.head_hidden},
                    {"learning_rate", cfg_.learning_rate},
                    {"weight_decay", cfg_.weight_decay},
                    {"batch_size", cfg_.batch_size},
                    {"obs_dim", cfg_.obs_dim},
                    {"act_dim", cfg_.act_dim},
                    {"priv_dim", cfg_.priv_dim},
                    {"log_std_min", cfg_.log_std_min},
                    {"log_std_max", cfg_.log_std_max},
                    {"feedback_sampled", cfg_.feedback_sampled},
                    {"mse_only", cfg_.mse_only},
                    {"predict_delta", cfg_.predict_delta},
                    {"grad_clip", cfg_.grad_clip},
                    {"variant", cfg_.variant},
                    {"mlp_hidden", cfg_.mlp_hidden},
                    {"priv_flag_channels", cfg_.priv_flag_channels}};
  meta["normalizer"] = {{"obs_mean", norm_.obs_mean},
                        {"obs_std", norm_.obs_std},
                        {"act_mean", norm_.act_mean},
                        {"act_std", norm_.act_std}};
  meta["normalizer_fitted"] = norm_fitted_;
  meta["iterations"] = iterations;
  meta["seed"] = seed;
  std::ofstream os(path + ".json");
  if (!os) throw ConfigError("world model: cannot write sidecar for " + path);
  os << meta.dump(2) << "\n";
}

WorldModel WorldModel::load(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw ConfigError("world model: missing sidecar " + path + ".json");
  json meta = json::parse(is);
  const auto& jc = meta.at("config");
  WorldModelConfig cfg;
  cfg.history_horizon = jc.at("history_horizon");
  cfg.forecast_horizon = jc.at("forecast_horizon");
  cfg.forecast_decay = jc.at("forecast_decay");
  cfg.hidden = jc.at("hidden").get<std::vector<int>>();
  cfg.head_hidden = jc.at("head_hidden");
  cfg.learning_rate = jc.at("learning_rate");
  cfg.weight_decay = jc.at("weight_decay");
  cfg.batch_size = jc.at("batch_size");
  cfg.obs_dim = jc.at("obs_dim");
  cfg.act_dim = jc.at("act_dim");
  cfg.priv_dim = jc.at("priv_dim");
  cfg.log_std_min = jc.at("log_std_min");
  cfg.log_std_max = jc.at("log_std_max");
  cfg.feedback_sampled = jc.at("feedback_sampled");
  cfg.mse_only = jc.at("mse_only");
  cfg.predict_delta = jc.at("predict_delta");
  cfg.grad_clip = jc.at("grad_clip");
  cfg.variant = jc.at("variant");
  cfg.mlp_hidden = jc.at("mlp_hidden").get<std::vector<int>>();
  cfg.priv_flag_channels = jc.at("priv_flag_channels").get<std::vector<int>>();

  WorldModel model(cfg, meta.at("seed").get<std::uint64_t>());
  load_params(path, model.parameters());
  Normalizer n;
  n.obs_mean = meta.at("normalizer").at("obs_mean").get<std::vector<double>>();
  n.obs_std = meta.at("normalizer").at("obs_std").get<std::vector<double>>();
  n.act_mean = meta.at("normalizer").at("act_mean").get<std::vector<double>>();
  n.act_std = meta.at("normalizer").at("act_std").get<std::vector<double>>();
  model.set_normalizer(n);
  if (meta.value("normalizer_fitted", false)) model.mark_normalizer_fitted();
  model.trained_iterations = meta.at("iterations").get<long>();
  return model;
}

// --- trainer ---------------------------------------------------------------------

WmTrainer::WmTrainer(WorldModel& model)
    : model_(model),
      opt_(model.parameters(), model.config().learning_rate, model.config().weight_decay) {}

std::vector<TrainLogRow> WmTrainer::run(const std::vector<Trajectory>& data,
                                        const TrainOptions& opt) {
  const auto& cfg = model_.config();
  WindowSet set = make_windows(data, cfg.history_horizon, cfg.forecast_horizon);
  if (set.windows.empty()) throw UsageError("train_world_model: no usable windows in buffer");

  if (!model_.normalizer_fitted()) {
    model_.set_normalizer(Normalizer::fit(data));
    model_.mark_normalizer_fitted();
  }

  Rng rng = Rng::derive(opt.seed, "wm-train");
  std::vector<TrainLogRow> log;
  std::vector<Array> snapshot;
  auto params = model_.parameters();

  for (int iter = 0; iter < opt.iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    snapshot.clear();
    for (const auto* p : params) snapshot.push_back(p->value);

    std::vector<std::size_t> picks(cfg.batch_size);
    for (auto& p : picks) p = rng.below(set.windows.size());
    WindowBatch batch = gather_windows(data, set, picks, &model_.normalizer());

    std::vector<Array> noise;
    for (int k = 0; k < cfg.forecast_horizon; ++k) {
      Array nz({batch.batch, static_cast<std::size_t>(cfg.obs_dim)});
      for (auto& v : nz.data) v = rng.normal();
      noise.push_back(std::move(nz));
    }

    Tape tape;
    auto fg = model_.build_training_graph(tape, batch, noise, opt.graph);
    const double loss = tape.value(fg.loss).data[0];
    if (!std::isfinite(loss)) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
      throw ModelFault("train_world_model: non-finite loss at iteration " + std::to_string(iter));
    }
    opt_.zero_grad();
    tape.backward(fg.loss);
    const double gnorm = clip_grad_norm(params, cfg.grad_clip);
    opt_.step();

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    TrainLogRow row{iter, loss, gnorm, ms, fg.step_loss_values};
    if (opt.verbose && (iter % 100 == 0 || iter + 1 == opt.iterations))
      std::fprintf(stderr, "[wm %s] iter %d loss %.6f grad %.3f %.1f ms\n", cfg.variant.c_str(),
                   iter, loss, gnorm, ms);
    log.push_back(std::move(row));
    ++model_.trained_iterations;
    ++total_iterations_;
  }
  return log;
}

std::vector<TrainLogRow> train_world_model(WorldModel& model, const std::vector<Trajectory>& data,
                                           const TrainOptions& opt) {
  WmTrainer trainer(model);
  return trainer.run(data, opt);
}

}  // namespace rwmlab
