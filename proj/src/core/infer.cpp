#include "core/infer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <string>

#include "core/error.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"

namespace mohets {

namespace {

// Copies columns [start, start + length) of a [D, T] value matrix.
Tensor columns(const Tensor& values, int64_t start, int64_t length) {
  const int64_t variates = values.dim(0);
  const int64_t total = values.dim(1);
  require(start >= 0 && start + length <= total, ErrorCode::internal,
          "column slice out of range");
  Tensor out({variates, length});
  for (int64_t d = 0; d < variates; ++d)
    std::memcpy(out.data() + d * length, values.data() + d * total + start,
                static_cast<size_t>(length) * sizeof(float));
  return out;
}

// [C, L] covariate block replicated once per variate row -> [D, C, L].
Tensor replicate_covariates(const Tensor& block, int64_t variates) {
  const int64_t rows = block.dim(0), cols = block.dim(1);
  Tensor out({variates, rows, cols});
  for (int64_t d = 0; d < variates; ++d)
    std::memcpy(out.data() + d * rows * cols, block.data(),
                static_cast<size_t>(rows * cols) * sizeof(float));
  return out;
}

// (x - mean) / (std + eps) with externally supplied row statistics.
Tensor normalize_with(const Tensor& x, const InstanceStats& stats) {
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor out({rows, cols});
  for (int64_t r = 0; r < rows; ++r) {
    const float mean = stats.mean.data()[r];
    const float inv = 1.0f / (stats.std.data()[r] + kInstanceNormEps);
    for (int64_t c = 0; c < cols; ++c)
      out.data()[r * cols + c] = (x.data()[r * cols + c] - mean) * inv;
  }
  return out;
}

void fill_metrics(ForecastResult& result) {
  const int64_t variates = result.predictions.dim(0);
  const int64_t horizon = result.predictions.dim(1);
  result.mse = mse(result.truth, result.predictions);
  result.mae = mae(result.truth, result.predictions);
  result.mse_by_step.assign(static_cast<size_t>(horizon), 0.0);
  result.mae_by_step.assign(static_cast<size_t>(horizon), 0.0);
  for (int64_t t = 0; t < horizon; ++t) {
    double sq = 0.0, ab = 0.0;
    for (int64_t d = 0; d < variates; ++d) {
      const double diff = double(result.predictions.data()[d * horizon + t]) -
                          double(result.truth.data()[d * horizon + t]);
      sq += diff * diff;
      ab += std::abs(diff);
    }
    result.mse_by_step[static_cast<size_t>(t)] = sq / double(variates);
    result.mae_by_step[static_cast<size_t>(t)] = ab / double(variates);
  }
}

}  // namespace

// ---- rolling forecast ------------------------------------------------------------

ForecastResult rollout(const ModelConfig& config, ModelParams& params, const Tensor& window,
                       const std::vector<int64_t>& timestamps, const CovariateSpec& cov,
                       int64_t horizon, const Tensor& truth, bool per_chunk_norm) {
  config.validate();
  require(horizon >= 1, ErrorCode::usage, "forecast horizon must be at least 1");
  require(window.rank() == 2 && window.dim(0) == config.variates &&
              window.dim(1) == config.lookback,
          ErrorCode::data,
          "rollout window must be [" + std::to_string(config.variates) + ", " +
              std::to_string(config.lookback) + "]");
  require(cov.count() == config.covariates, ErrorCode::usage,
          "covariate spec provides " + std::to_string(cov.count()) +
              " components but the model expects " + std::to_string(config.covariates));
  if (config.covariates_enabled())
    require(static_cast<int64_t>(timestamps.size()) >= config.lookback + horizon,
            ErrorCode::data,
            "covariate source exhausted: need timestamps through step " +
                std::to_string(config.lookback + horizon) + " but only " +
                std::to_string(timestamps.size()) + " are available");
  if (truth.defined())
    require(truth.rank() == 2 && truth.dim(0) == config.variates && truth.dim(1) == horizon,
            ErrorCode::data, "ground truth must be [variates, horizon]");

  const auto started = std::chrono::steady_clock::now();
  const int64_t chunk = config.horizon;
  const int64_t chunks = (horizon + chunk - 1) / chunk;

  ForecastResult result;
  result.iterations = chunks;
  result.per_chunk_norm = per_chunk_norm;

  Rng rng(0, "rollout");
  Tensor buffer = columns(window, 0, config.lookback);  // private copy
  InstanceStats frozen;
  std::vector<Tensor> pieces;
  for (int64_t c = 0; c < chunks; ++c) {
    Tensor inputs;
    InstanceStats stats;
    if (per_chunk_norm || c == 0) {
      auto normalized = instance_normalize(buffer);
      inputs = normalized.first;
      stats = normalized.second;
      if (c == 0) frozen = stats;
    } else {
      inputs = normalize_with(buffer, frozen);
      stats = frozen;
    }

    Tensor covariates;
    if (config.covariates_enabled()) {
      const auto first = timestamps.begin() + c * chunk;
      std::vector<int64_t> span(first, first + config.lookback);
      covariates = replicate_covariates(calendar_covariates(span, cov), config.variates);
    }

    ForwardResult step = model_forward(inputs, covariates, stats, config, params,
                                       /*training=*/false, rng);
    pieces.push_back(step.predictions);
    if (c + 1 < chunks) {
      // Append the chunk and keep the trailing L points (works even when a
      // chunk is longer than the look-back window).
      Tensor extended = concat(std::vector<Tensor>{buffer, step.predictions}, 1);
      buffer = columns(extended, extended.dim(1) - config.lookback, config.lookback);
    }
  }

  Tensor joined = pieces.size() == 1 ? pieces.front() : concat(pieces, 1);
  result.predictions = columns(joined, 0, horizon);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (truth.defined()) {
    result.truth = truth;
    fill_metrics(result);
  }
  return result;
}

// ---- metrics ---------------------------------------------------------------------

namespace {

double reduce_metric(const Tensor& y, const Tensor& y_hat, bool squared) {
  require(y.shape() == y_hat.shape(), ErrorCode::data,
          "metric inputs must have identical shapes");
  require(y.rank() >= 1 && y.size() > 0, ErrorCode::data, "metric inputs must be non-empty");
  const int64_t horizon = y.dim(y.rank() - 1);
  const int64_t rows = y.size() / horizon;
  double over_rows = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    double over_steps = 0.0;
    for (int64_t t = 0; t < horizon; ++t) {
      const double diff =
          double(y.data()[r * horizon + t]) - double(y_hat.data()[r * horizon + t]);
      over_steps += squared ? diff * diff : std::abs(diff);
    }
    over_rows += over_steps / double(horizon);
  }
  return over_rows / double(rows);
}

}  // namespace

double mse(const Tensor& y, const Tensor& y_hat) { return reduce_metric(y, y_hat, true); }
double mae(const Tensor& y, const Tensor& y_hat) { return reduce_metric(y, y_hat, false); }

// ---- benchmark evaluation ----------------------------------------------------------

namespace {

void finish_report(HorizonReport& report) {
  double sum_mse = 0.0, sum_mae = 0.0;
  int64_t evaluated = 0;
  for (const HorizonMetrics& row : report.rows) {
    if (row.skipped) continue;
    sum_mse += row.mse;
    sum_mae += row.mae;
    ++evaluated;
  }
  if (evaluated > 0) {
    report.avg_mse = sum_mse / double(evaluated);
    report.avg_mae = sum_mae / double(evaluated);
  }
}

}  // namespace

HorizonReport evaluate_horizons(const Segment& segment, const ModelConfig& config,
                                ModelParams& params, const CovariateSpec& cov,
                                const std::vector<int64_t>& horizons, int64_t stride,
                                bool per_chunk_norm) {
  require(segment.frame != nullptr, ErrorCode::internal, "evaluate_horizons: empty segment");
  require(!horizons.empty(), ErrorCode::usage, "no evaluation horizons requested");
  const int64_t step = stride > 0 ? stride : config.horizon;
  const TimeSeriesFrame& frame = *segment.frame;

  HorizonReport report;
  for (int64_t horizon : horizons) {
    HorizonMetrics row;
    row.horizon = horizon;
    const int64_t windows = window_count(segment, config.lookback, horizon, step);
    if (windows == 0) {
      row.skipped = true;
      report.rows.push_back(row);
      continue;
    }
    double sum_mse = 0.0, sum_mae = 0.0;
    for (int64_t w = 0; w < windows; ++w) {
      const int64_t start = segment.begin + w * step;
      Tensor window = columns(frame.values, start, config.lookback);
      Tensor truth = columns(frame.values, start + config.lookback, horizon);
      std::vector<int64_t> span(frame.timestamps.begin() + start,
                                frame.timestamps.begin() + start + config.lookback + horizon);
      ForecastResult fc =
          rollout(config, params, window, span, cov, horizon, truth, per_chunk_norm);
      sum_mse += fc.mse;
      sum_mae += fc.mae;
    }
    row.mse = sum_mse / double(windows);
    row.mae = sum_mae / double(windows);
    row.windows = windows;
    report.rows.push_back(row);
  }
  finish_report(report);
  return report;
}

// ---- naive baselines ----------------------------------------------------------------

int64_t seasonal_period(int64_t frequency_seconds) {
  if (frequency_seconds > 0 && 86400 % frequency_seconds == 0) return 86400 / frequency_seconds;
  return 24;
}

BaselineReport naive_baselines(const Segment& segment, int64_t lookback,
                               const std::vector<int64_t>& horizons, int64_t stride) {
  require(segment.frame != nullptr, ErrorCode::internal, "naive_baselines: empty segment");
  require(lookback >= 1, ErrorCode::usage, "lookback must be at least 1");
  const TimeSeriesFrame& frame = *segment.frame;
  const int64_t variates = frame.variates();

  BaselineReport report;
  report.period = seasonal_period(frame.frequency_seconds);
  require(lookback >= report.period, ErrorCode::data,
          "seasonal-naive needs a look-back of at least one period (" +
              std::to_string(report.period) + " points)");

  for (int64_t horizon : horizons) {
    const int64_t step = stride > 0 ? stride : horizon;
    HorizonMetrics last_row, season_row;
    last_row.horizon = season_row.horizon = horizon;
    const int64_t windows = window_count(segment, lookback, horizon, step);
    if (windows == 0) {
      last_row.skipped = season_row.skipped = true;
      report.repeat_last.rows.push_back(last_row);
      report.seasonal_naive.rows.push_back(season_row);
      continue;
    }
    double last_mse = 0.0, last_mae = 0.0, season_mse = 0.0, season_mae = 0.0;
    for (int64_t w = 0; w < windows; ++w) {
      const int64_t start = segment.begin + w * step;
      Tensor window = columns(frame.values, start, lookback);
      Tensor truth = columns(frame.values, start + lookback, horizon);

      Tensor flat({variates, horizon});
      Tensor seasonal({variates, horizon});
      for (int64_t d = 0; d < variates; ++d) {
        const float last = window.data()[d * lookback + lookback - 1];
        for (int64_t t = 0; t < horizon; ++t) {
          flat.data()[d * horizon + t] = last;
          const int64_t offset = lookback - report.period + t % report.period;
          seasonal.data()[d * horizon + t] = window.data()[d * lookback + offset];
        }
      }
      last_mse += mse(truth, flat);
      last_mae += mae(truth, flat);
      season_mse += mse(truth, seasonal);
      season_mae += mae(truth, seasonal);
    }
    last_row.mse = last_mse / double(windows);
    last_row.mae = last_mae / double(windows);
    last_row.windows = windows;
    season_row.mse = season_mse / double(windows);
    season_row.mae = season_mae / double(windows);
    season_row.windows = windows;
    report.repeat_last.rows.push_back(last_row);
    report.seasonal_naive.rows.push_back(season_row);
  }
  finish_report(report.repeat_last);
  finish_report(report.seasonal_naive);
  return report;
}

}  // namespace mohets
