#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rwmlab/nn.hpp"
#include "rwmlab/optim.hpp"
#include "rwmlab/windows.hpp"

namespace rwmlab {

struct WorldModelConfig {
  int history_horizon = 32;   // M
  int forecast_horizon = 8;   // N
  double forecast_decay = 1.0;
  std::vector<int> hidden = {256, 256};  // recurrent stack
  int head_hidden = 128;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  int batch_size = 1024;
  int obs_dim = 0, act_dim = 0, priv_dim = 0;

  double log_std_min = -10.0, log_std_max = 2.0;
  bool feedback_sampled = true;  // outer loop feeds the reparameterized sample (else the mean)
  bool mse_only = false;         // ablation: squared error instead of the Gaussian NLL
  bool predict_delta = false;    // option: parametrize the mean as a residual on the input observation
  double grad_clip = 1.0;
  std::string variant = "rwm";           // "rwm" | "mlp"
  std::vector<int> mlp_hidden = {256, 256};
  std::vector<int> priv_flag_channels;   // binary channels trained with BCE

  void validate() const;
};

struct GaussianPrediction {
  Array mean_raw;    // raw observation space
  Array std_raw;
  Array priv;        // sigmoid probabilities on flag channels, raw values elsewhere
  Array sample_raw;  // mean + std * noise (equals mean when deterministic)
};

// Recurrent world model with the dual-autoregressive step convention: the
// recurrent state advances once per (obs, action) pair, and the heads read the
// state right after consuming a pair to predict the following observation.
// Forecast step 1 therefore consumes the last real observation; later steps
// consume the model's own fed-back predictions. The flattened-window
// feed-forward baseline hides behind the same interface.
class WorldModel {
 public:
  WorldModel(WorldModelConfig cfg, std::uint64_t seed);

  const WorldModelConfig& config() const { return cfg_; }
  const Normalizer& normalizer() const { return norm_; }
  void set_normalizer(Normalizer n) { norm_ = std::move(n); }
  bool normalizer_fitted() const { return norm_fitted_; }
  void mark_normalizer_fitted() { norm_fitted_ = true; }

  // --- Inference ------------------------------------------------------------
  struct State {
    std::vector<Array> hidden;                 // rwm: one [batch, h] per layer
    std::deque<std::pair<Array, Array>> ring;  // mlp: last M-1 (obs, act) pairs, normalized
    std::size_t batch = 0;
  };

  State init_state(std::size_t batch) const;
  // Inner autoregression: advance with one real (obs, action) pair.
  void observe(State& s, const Array& obs_raw, const Array& act_raw) const;
  // Advance with (obs_in, action) and emit the heads. noise may be null when
  // deterministic.
  GaussianPrediction predict(State& s, const Array& obs_in_raw, const Array& act_raw,
                             const Array* noise, bool deterministic) const;

  // Full history pass: feeds (obs_t, act_t) for every supplied step.
  State burn_in(const std::vector<Array>& history_obs_raw,
                const std::vector<Array>& history_act_raw) const;

  // --- Training graph ---------------------------------------------------------
  struct GraphOptions {
    bool detach_feedback = false;
    std::optional<bool> feedback_sampled;  // override of the config switch
  };
  struct ForwardGraph {
    Var loss;                      // decayed masked total, scalar
    std::vector<Var> step_losses;  // per-step masked means (pre-decay)
    std::vector<Var> means, log_stds;  // per forecast step (normalized space)
    std::vector<double> step_loss_values;
    std::vector<bool> step_valid;
    int valid_steps = 0;
  };
  // batch must be normalized. noise holds forecast_horizon arrays [batch, obs].
  ForwardGraph build_training_graph(Tape& t, const WindowBatch& batch,
                                    const std::vector<Array>& noise, const GraphOptions& opt);
  ForwardGraph build_training_graph(Tape& t, const WindowBatch& batch,
                                    const std::vector<Array>& noise) {
    return build_training_graph(t, batch, noise, GraphOptions());
  }

  std::vector<Parameter*> parameters();

  // --- Persistence -----------------------------------------------------------
  // Checkpoint container plus a JSON sidecar (config, normalization, counters).
  void save(const std::string& path, std::uint64_t seed, long iterations) const;
  static WorldModel load(const std::string& path);

  long trained_iterations = 0;

 private:
  WorldModelConfig cfg_;
  Normalizer norm_;
  bool norm_fitted_ = false;

  std::vector<GruLayer> gru_;  // rwm variant
  Mlp mlp_body_;               // mlp variant
  AffineLayer head_trunk_, head_mean_, head_log_std_, head_priv_;
};

// Decayed multi-step total exactly as the training objective combines it:
// sum_k alpha^k * l_k over valid steps, divided by the valid-step count.
double decayed_total(const std::vector<double>& step_losses, const std::vector<bool>& step_valid,
                     double alpha);

// Per-step relative error of a predicted sequence: per-dimension absolute
// error scaled by a per-dimension std, averaged over dimensions.
struct RelativeError {
  std::vector<double> per_step;
  double mean = 0.0;
};
RelativeError relative_error(const std::vector<std::vector<double>>& predicted,
                             const std::vector<std::vector<double>>& target,
                             const std::vector<double>& normalizer_std);

// Deterministic or sampled autoregressive rollout from a real history.
// history_* hold M steps; actions holds one action per forecast step, the
// first being the action taken at the last history step.
std::vector<GaussianPrediction> rollout(const WorldModel& model,
                                        const std::vector<Array>& history_obs,
                                        const std::vector<Array>& history_act,
                                        const std::vector<Array>& actions,
                                        const std::vector<Array>* noise, bool deterministic);

struct TrainLogRow {
  int iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  std::vector<double> per_step;
};

struct TrainOptions {
  int iterations = 2500;
  std::uint64_t seed = 0;
  bool verbose = false;
  WorldModel::GraphOptions graph;
};

// Holds the optimizer state so fine-tuning rounds keep their moments.
class WmTrainer {
 public:
  explicit WmTrainer(WorldModel& model);
  std::vector<TrainLogRow> run(const std::vector<Trajectory>& data, const TrainOptions& opt);

 private:
  WorldModel& model_;
  AdamW opt_;
  long total_iterations_ = 0;
};

std::vector<TrainLogRow> train_world_model(WorldModel& model,
                                           const std::vector<Trajectory>& data,
                                           const TrainOptions& opt);

}  // namespace rwmlab
