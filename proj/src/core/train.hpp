#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "core/model.hpp"
#include "core/tensor.hpp"
#include "core/timeseries.hpp"

namespace mohets {

struct TrainConfig {
  double max_lr = 3.2e-3;
  double min_lr = 1.2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double warmup_fraction = 0.10;  // of total steps, floor
  int64_t epochs = 10;
  int64_t batch_size = 32;  // target rows; rounded up to whole multivariate windows
  double huber_delta = 2.0;
  double balance_alpha = 0.02;
  int64_t patience = 5;  // consecutive non-improving epochs before stopping
  uint64_t seed = 0;
  double grad_clip = 1.0;           // global-norm ceiling; <= 0 disables
  bool balance_mean_layers = true;  // mean over MoHE layers (sum when false)

  void validate() const;  // throws ErrorCode::usage naming the offending field
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& json_text);

// ---- losses --------------------------------------------------------------------

// Router balance penalty: per layer N * sum_i f_i * r_i, where f_i is the
// constant selection fraction and r_i the mean softmax score (Eqs. 15-16);
// aggregated across layers by mean (default) or sum. 1.0 under perfectly
// uniform routing.
Tensor balance_loss(const std::vector<RouterAssignment>& routing, bool mean_layers = true);

struct LossParts {
  double huber = 0.0;
  double balance = 0.0;
  double total = 0.0;
};

// Huber(pred, target; delta) + alpha * balance. `parts` (optional) receives
// the separately-logged components.
Tensor total_loss(const Tensor& pred, const Tensor& target,
                  const std::vector<RouterAssignment>& routing, const TrainConfig& config,
                  LossParts* parts = nullptr);

// ---- optimizer -----------------------------------------------------------------

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

// Whether a parameter receives weight decay: norm scales, biases, and router
// matrices are excluded.
bool decayable(const std::string& name);

struct AdamWState {
  int64_t step = 0;  // completed updates
  std::vector<Tensor> m, v;
};

AdamWState init_adamw(const NamedParams& params);

// Euclidean norm over every gradient jointly; when it exceeds `max_norm` all
// gradients are scaled down to meet it. Returns the pre-clip norm.
double clip_gradients(const NamedParams& params, double max_norm);

// One decoupled-weight-decay Adam update with bias-corrected moments. Decay is
// applied directly to decayable parameters. If any gradient is non-finite the
// step is rejected: parameters and state stay untouched and an
// ErrorCode::numeric error names the offending parameter.
void adamw_step(const NamedParams& params, AdamWState& state, double lr,
                const TrainConfig& config);

// Linear warmup from 0 to max_lr over the first floor(warmup_fraction * total)
// steps, then cosine from max_lr to min_lr; defined for 0 <= step <= total.
double lr_schedule(int64_t step, int64_t total_steps, const TrainConfig& config);

// ---- training loop ---------------------------------------------------------------

struct StepRecord {
  int64_t step = 0;  // 1-based global step
  double lr = 0.0;
  double huber = 0.0;
  double balance = 0.0;
  double total = 0.0;
  std::vector<double> expert_fraction;  // mean f_i across layers, N entries
};

struct EpochRecord {
  int64_t epoch = 0;  // 0-based
  double val_mse = 0.0;
  bool improved = false;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  bool diverged = false;
  std::string abort_reason;  // empty unless diverged
  int64_t best_epoch = -1;
  double best_val_mse = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  ModelParams params;       // state after the last completed update
  ModelParams best_params;  // best-on-validation snapshot
  TrainHistory history;
};

// Direct H_o-step prediction MSE over a segment (evaluation stride = H_o),
// computed with inference-mode forwards in manageable window chunks.
double validation_mse(const Segment& segment, const ModelConfig& model_config,
                      ModelParams& params, const CovariateSpec& cov, int64_t batch_windows);

// Trains fresh parameters on `train_seg`, validating on `val_seg` after every
// epoch. Early-stops after `patience` consecutive non-improving epochs, keeps
// the best-on-validation snapshot, and aborts with the last-good parameters if
// the loss or a gradient turns non-finite. When `step_log` is given, one JSON
// line per step is appended: {step, lr, huber, balance, total, f_histogram}.
TrainResult train(const Segment& train_seg, const Segment& val_seg,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const CovariateSpec& cov, std::ostream* step_log = nullptr);

}  // namespace mohets
