#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "core/model.hpp"
#include "core/tensor.hpp"
#include "core/timeseries.hpp"

namespace mohets {

// ---- rolling forecast ------------------------------------------------------------

// One autoregressive forecast over an arbitrary horizon, plus metrics when
// ground truth was supplied.
struct ForecastResult {
  Tensor predictions;  // [D, H]
  Tensor truth;        // [D, H]; undefined when unavailable

  // Lead-time metrics (H entries) and their horizon-then-variate averages;
  // empty/NaN without ground truth.
  std::vector<double> mse_by_step;
  std::vector<double> mae_by_step;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();

  int64_t iterations = 0;       // ceil(H / H_o) forward passes
  double seconds = 0.0;         // wall clock for the rollout
  bool per_chunk_norm = true;   // which normalization policy produced this
};

// Rolls the model forward ceil(H / H_o) times: each pass appends H_o
// predictions to the sliding buffer and drops the oldest H_o points, and the
// concatenated chunks are truncated to exactly H.  `window` is the [D, L]
// history ending at the forecast origin; `timestamps` must cover the window
// plus the full horizon (L + H entries) whenever the model consumes
// covariates.  By default instance statistics are recomputed on every chunk's
// buffer; `per_chunk_norm = false` freezes the initial window's statistics
// instead.  Passing `truth` ([D, H]) fills in the metric fields.
//
// Errors: window/truth shape mismatch -> data; covariate source exhausted
// before L + H -> data.
ForecastResult rollout(const ModelConfig& config, ModelParams& params, const Tensor& window,
                       const std::vector<int64_t>& timestamps, const CovariateSpec& cov,
                       int64_t horizon, const Tensor& truth = Tensor(),
                       bool per_chunk_norm = true);

// ---- metrics ---------------------------------------------------------------------

// Mean over the horizon, then over variates (equal-weight either way, but the
// reduction order is the published one).  Shapes must match exactly.
double mse(const Tensor& y, const Tensor& y_hat);
double mae(const Tensor& y, const Tensor& y_hat);

// ---- benchmark evaluation ----------------------------------------------------------

struct HorizonMetrics {
  int64_t horizon = 0;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
  int64_t windows = 0;   // aligned evaluation windows averaged over
  bool skipped = false;  // segment too short for this horizon
};

struct HorizonReport {
  std::vector<HorizonMetrics> rows;  // one per requested horizon, input order
  // Averages over the rows that were actually evaluated; NaN if none were.
  double avg_mse = std::numeric_limits<double>::quiet_NaN();
  double avg_mae = std::numeric_limits<double>::quiet_NaN();
};

// Rolling-forecast metrics per requested horizon over every aligned window of
// the segment.  `stride` spaces the window origins; 0 means the model's own
// output chunk H_o (non-overlapping rollouts).  A horizon the segment cannot
// fit is reported as a skipped row rather than an error.
HorizonReport evaluate_horizons(const Segment& segment, const ModelConfig& config,
                                ModelParams& params, const CovariateSpec& cov,
                                const std::vector<int64_t>& horizons = {96, 192, 336, 720},
                                int64_t stride = 0, bool per_chunk_norm = true);

// ---- naive baselines ----------------------------------------------------------------

// Season length implied by the sampling interval: points per day when the
// interval divides a day cleanly (hourly -> 24, 15-minute -> 96), else 24.
int64_t seasonal_period(int64_t frequency_seconds);

struct BaselineReport {
  HorizonReport repeat_last;     // flat continuation of the last observation
  HorizonReport seasonal_naive;  // repeat of the final season
  int64_t period = 0;
};

// Sanity floors evaluated through the same windowing and metric pipeline as
// the model.  `stride` as in evaluate_horizons, except 0 means the horizon
// itself.  Seasonal-naive requires lookback >= one period.
BaselineReport naive_baselines(const Segment& segment, int64_t lookback,
                               const std::vector<int64_t>& horizons = {96, 192, 336, 720},
                               int64_t stride = 0);

}  // namespace mohets
