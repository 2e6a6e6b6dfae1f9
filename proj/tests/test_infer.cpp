// Inference tests: rollout chunking and truncation, buffer composition,
// normalization policy, covariate exhaustion, metric oracles and symmetry,
// multi-horizon evaluation, and the naive baselines.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/infer.hpp"
#include "core/model.hpp"
#include "core/ops.hpp"
#include "core/tensor.hpp"
#include "core/timeseries.hpp"

using namespace mohets;

namespace {

// Hourly frame mixing incommensurate waves; deterministic and aperiodic.
TimeSeriesFrame wave_frame(int64_t length, int64_t variates = 1) {
  TimeSeriesFrame frame;
  frame.frequency_seconds = 3600;
  const int64_t t0 = days_from_civil(2016, 7, 1) * 86400;
  std::vector<float> values(static_cast<size_t>(variates * length));
  for (int64_t d = 0; d < variates; ++d) {
    frame.variate_names.push_back("v" + std::to_string(d));
    for (int64_t t = 0; t < length; ++t) {
      const double x = static_cast<double>(t + 11 * d);
      values[static_cast<size_t>(d * length + t)] =
          static_cast<float>(std::sin(2.0 * 3.14159265358979323846 * x / 24.0) +
                             0.6 * std::sin(2.0 * 3.14159265358979323846 * x / 91.0));
    }
  }
  for (int64_t t = 0; t < length; ++t) frame.timestamps.push_back(t0 + t * 3600);
  frame.values = Tensor::from({variates, length}, values);
  return frame;
}

// Exactly 24-periodic frame: values come from a lookup table so period-24
// shifts are bitwise identical.
TimeSeriesFrame periodic_frame(int64_t length) {
  TimeSeriesFrame frame;
  frame.variate_names = {"cycle"};
  frame.frequency_seconds = 3600;
  const int64_t t0 = days_from_civil(2016, 7, 1) * 86400;
  std::array<float, 24> table{};
  for (int i = 0; i < 24; ++i)
    table[static_cast<size_t>(i)] =
        std::sin(2.0f * 3.14159265f * static_cast<float>(i) / 24.0f);
  std::vector<float> values(static_cast<size_t>(length));
  for (int64_t t = 0; t < length; ++t) {
    frame.timestamps.push_back(t0 + t * 3600);
    values[static_cast<size_t>(t)] = table[static_cast<size_t>(t % 24)];
  }
  frame.values = Tensor::from({1, length}, values);
  return frame;
}

ModelConfig loop_config() {
  ModelConfig c;
  c.blocks = 2;
  c.q_heads = 2;
  c.kv_heads = 1;
  c.experts = 4;
  c.active_experts = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.patch_len = 8;
  c.horizon = 24;
  c.lookback = 96;
  c.variates = 1;
  c.covariates = 0;
  c.dropout = 0.0;
  c.drop_path_max = 0.0;
  c.validate();
  return c;
}

Tensor head_columns(const Tensor& values, int64_t start, int64_t length) {
  const int64_t variates = values.dim(0), total = values.dim(1);
  REQUIRE(start + length <= total);
  Tensor out({variates, length});
  for (int64_t d = 0; d < variates; ++d)
    std::memcpy(out.data() + d * length, values.data() + d * total + start,
                static_cast<size_t>(length) * sizeof(float));
  return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

// ---- rollout ----------------------------------------------------------------------

TEST_CASE("rollout iteration count is the chunk ceiling and output is truncated") {
  ModelConfig config = loop_config();
  ModelParams params = init_params<float>(config, 2);
  TimeSeriesFrame frame = wave_frame(120);
  Tensor window = head_columns(frame.values, 0, 96);

  ForecastResult h96 = rollout(config, params, window, {}, CovariateSpec::none(), 96);
  CHECK(h96.iterations == 4);
  CHECK(h96.predictions.dim(0) == 1);
  CHECK(h96.predictions.dim(1) == 96);

  ForecastResult h720 = rollout(config, params, window, {}, CovariateSpec::none(), 720);
  CHECK(h720.iterations == 30);
  CHECK(h720.predictions.dim(1) == 720);

  ForecastResult h20 = rollout(config, params, window, {}, CovariateSpec::none(), 20);
  CHECK(h20.iterations == 1);
  CHECK(h20.predictions.dim(1) == 20);

  // The truncated forecast is the prefix of the full first chunk.
  ForecastResult h24 = rollout(config, params, window, {}, CovariateSpec::none(), 24);
  CHECK(bitwise_equal(h20.predictions, head_columns(h24.predictions, 0, 20)));

  // Without ground truth there are no metrics.
  CHECK(std::isnan(h96.mse));
  CHECK(std::isnan(h96.mae));
  CHECK(h96.mse_by_step.empty());
  CHECK(h96.seconds >= 0.0);
}

TEST_CASE("rollout over k chunks equals k chained single-chunk rollouts") {
  ModelConfig config = loop_config();
  ModelParams params = init_params<float>(config, 9);
  TimeSeriesFrame frame = wave_frame(120);
  Tensor window = head_columns(frame.values, 0, 96);

  ForecastResult whole = rollout(config, params, window, {}, CovariateSpec::none(), 72);
  CHECK(whole.iterations == 3);

  Tensor buffer = window;
  std::vector<Tensor> chunks;
  for (int step = 0; step < 3; ++step) {
    ForecastResult one = rollout(config, params, buffer, {}, CovariateSpec::none(), 24);
    chunks.push_back(one.predictions);
    Tensor extended = concat(std::vector<Tensor>{buffer, one.predictions}, 1);
    buffer = head_columns(extended, extended.dim(1) - 96, 96);
  }
  CHECK(bitwise_equal(whole.predictions, concat(chunks, 1)));
}

TEST_CASE("rollout normalization policy is per-chunk by default and frozen on demand") {
  ModelConfig config = loop_config();
  ModelParams params = init_params<float>(config, 4);
  TimeSeriesFrame frame = wave_frame(120);
  Tensor window = head_columns(frame.values, 0, 96);

  ForecastResult fresh = rollout(config, params, window, {}, CovariateSpec::none(), 48);
  ForecastResult frozen =
      rollout(config, params, window, {}, CovariateSpec::none(), 48, Tensor(), false);
  CHECK(fresh.per_chunk_norm);
  CHECK_FALSE(frozen.per_chunk_norm);

  // The first chunk sees identical statistics either way; the second diverges.
  CHECK(bitwise_equal(head_columns(fresh.predictions, 0, 24),
                      head_columns(frozen.predictions, 0, 24)));
  CHECK_FALSE(bitwise_equal(head_columns(fresh.predictions, 24, 24),
                            head_columns(frozen.predictions, 24, 24)));
}

TEST_CASE("rollout demands timestamps through the whole horizon when covariates are on") {
  ModelConfig config = loop_config();
  config.covariates = 2;
  config.validate();
  CovariateSpec cov = CovariateSpec::none();
  cov.hour_of_day = true;
  cov.day_of_week = true;

  ModelParams params = init_params<float>(config, 5);
  TimeSeriesFrame frame = wave_frame(200);
  Tensor window = head_columns(frame.values, 0, 96);

  std::vector<int64_t> enough(frame.timestamps.begin(), frame.timestamps.begin() + 96 + 48);
  ForecastResult ok = rollout(config, params, window, enough, cov, 48);
  CHECK(ok.predictions.dim(1) == 48);

  std::vector<int64_t> short_by_one(frame.timestamps.begin(),
                                    frame.timestamps.begin() + 96 + 47);
  try {
    rollout(config, params, window, short_by_one, cov, 48);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::data);
    CHECK(std::string(e.what()).find("covariate source exhausted") != std::string::npos);
  }
}

TEST_CASE("rollout fills metrics exactly when truth matches its own forecast") {
  ModelConfig config = loop_config();
  ModelParams params = init_params<float>(config, 6);
  TimeSeriesFrame frame = wave_frame(250);
  Tensor window = head_columns(frame.values, 0, 96);
  Tensor truth = head_columns(frame.values, 96, 48);

  ForecastResult with_truth =
      rollout(config, params, window, {}, CovariateSpec::none(), 48, truth);
  REQUIRE(with_truth.mse_by_step.size() == 48);
  REQUIRE(with_truth.mae_by_step.size() == 48);
  CHECK(with_truth.mse > 0.0);
  CHECK(with_truth.mse == mse(truth, with_truth.predictions));
  CHECK(with_truth.mae == mae(truth, with_truth.predictions));

  // Identical rollouts are deterministic, so feeding the forecast back as
  // truth zeroes every metric.
  ForecastResult self = rollout(config, params, window, {}, CovariateSpec::none(), 48,
                                with_truth.predictions);
  CHECK(self.mse == 0.0);
  CHECK(self.mae == 0.0);
  for (double v : self.mse_by_step) CHECK(v == 0.0);

  Tensor bad({1, 47});
  CHECK_THROWS_AS(rollout(config, params, window, {}, CovariateSpec::none(), 48, bad), Error);
}

TEST_CASE("rollout validates the window shape") {
  ModelConfig config = loop_config();
  ModelParams params = init_params<float>(config, 1);
  Tensor wrong({1, 95});
  CHECK_THROWS_AS(rollout(config, params, wrong, {}, CovariateSpec::none(), 24), Error);
  Tensor two_variates({2, 96});
  CHECK_THROWS_AS(rollout(config, params, two_variates, {}, CovariateSpec::none(), 24), Error);
}

// ---- metrics ----------------------------------------------------------------------

TEST_CASE("mse and mae match their closed-form examples") {
  Tensor y0 = Tensor::from({1, 2}, {0.0f, 0.0f});
  Tensor y0_hat = Tensor::from({1, 2}, {1.0f, -1.0f});
  CHECK(mse(y0, y0_hat) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mae(y0, y0_hat) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor y1 = Tensor::from({1, 3}, {1.0f, 2.0f, 3.0f});
  Tensor y1_hat = Tensor::from({1, 3}, {2.0f, 2.0f, 2.0f});
  CHECK(mse(y1, y1_hat) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(mae(y1, y1_hat) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));

  CHECK(mse(y1, y1) == 0.0);
  CHECK(mae(y1, y1) == 0.0);

  // Horizon first, then variates: rows of unequal error average evenly.
  Tensor y2 = Tensor::from({2, 2}, {0.0f, 0.0f, 0.0f, 0.0f});
  Tensor y2_hat = Tensor::from({2, 2}, {1.0f, 1.0f, 3.0f, 3.0f});
  CHECK(mse(y2, y2_hat) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(mae(y2, y2_hat) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("metrics are symmetric and reject mismatched shapes") {
  TimeSeriesFrame frame = wave_frame(64, 3);
  Tensor a = head_columns(frame.values, 0, 32);
  Tensor b = head_columns(frame.values, 32, 32);
  CHECK(mse(a, b) == mse(b, a));
  CHECK(mae(a, b) == mae(b, a));

  Tensor c({3, 31});
  CHECK_THROWS_AS(mse(a, c), Error);
  CHECK_THROWS_AS(mae(a, c), Error);
  try {
    mse(a, c);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::data);
  }
}

// ---- evaluate_horizons ---------------------------------------------------------------

TEST_CASE("evaluate_horizons walks aligned windows and skips oversized horizons") {
  TimeSeriesFrame frame = wave_frame(400);
  auto segments = chronological_split(frame, SplitSpec{200, 100, 100}, 96);
  const Segment& test_seg = segments[2];

  ModelConfig config = loop_config();
  ModelParams params = init_params<float>(config, 12);
  CovariateSpec cov = CovariateSpec::none();

  HorizonReport report = evaluate_horizons(test_seg, config, params, cov, {24, 96, 192});
  REQUIRE(report.rows.size() == 3);

  // length 196, L = 96, stride = H_o = 24: floor(76/24)+1 = 4 windows at
  // horizon 24, one window at horizon 96, nothing at 192.
  CHECK(report.rows[0].horizon == 24);
  CHECK(report.rows[0].windows == 4);
  CHECK_FALSE(report.rows[0].skipped);
  CHECK(report.rows[1].horizon == 96);
  CHECK(report.rows[1].windows == 1);
  CHECK(report.rows[2].horizon == 192);
  CHECK(report.rows[2].skipped);
  CHECK(std::isnan(report.rows[2].mse));

  CHECK(report.avg_mse ==
        doctest::Approx(0.5 * (report.rows[0].mse + report.rows[1].mse)).epsilon(1e-12));
  CHECK(report.avg_mae ==
        doctest::Approx(0.5 * (report.rows[0].mae + report.rows[1].mae)).epsilon(1e-12));

  // The single horizon-96 window is the rollout starting at the segment head.
  Tensor window = head_columns(frame.values, test_seg.begin, 96);
  Tensor truth = head_columns(frame.values, test_seg.begin + 96, 96);
  ForecastResult direct = rollout(config, params, window, {}, cov, 96, truth);
  CHECK(report.rows[1].mse == doctest::Approx(direct.mse).epsilon(1e-12));
  CHECK(report.rows[1].mae == doctest::Approx(direct.mae).epsilon(1e-12));

  // Inference is deterministic: a second pass reproduces the table bitwise.
  HorizonReport again = evaluate_horizons(test_seg, config, params, cov, {24, 96, 192});
  CHECK(again.rows[0].mse == report.rows[0].mse);
  CHECK(again.avg_mse == report.avg_mse);

  // Stride 1 evaluates every offset.
  HorizonReport dense = evaluate_horizons(test_seg, config, params, cov, {24}, 1);
  CHECK(dense.rows[0].windows == 77);
}

// ---- naive baselines -----------------------------------------------------------------

TEST_CASE("seasonal period follows the sampling interval") {
  CHECK(seasonal_period(3600) == 24);
  CHECK(seasonal_period(900) == 96);
  CHECK(seasonal_period(7200) == 12);
  CHECK(seasonal_period(0) == 24);
  CHECK(seasonal_period(100000) == 24);  // does not divide a day
}

TEST_CASE("baselines are exact on their degenerate series") {
  // Constant series: both baselines reproduce the truth.
  TimeSeriesFrame flat;
  flat.variate_names = {"flat"};
  flat.frequency_seconds = 3600;
  const int64_t t0 = days_from_civil(2016, 7, 1) * 86400;
  std::vector<float> values(300, 2.5f);
  for (int64_t t = 0; t < 300; ++t) flat.timestamps.push_back(t0 + t * 3600);
  flat.values = Tensor::from({1, 300}, values);

  Segment whole{&flat, 0, 0, 300};
  BaselineReport report = naive_baselines(whole, 96, {24, 48});
  CHECK(report.period == 24);
  for (const HorizonMetrics& row : report.repeat_last.rows) CHECK(row.mse == 0.0);
  for (const HorizonMetrics& row : report.seasonal_naive.rows) CHECK(row.mse == 0.0);
  CHECK(report.repeat_last.avg_mse == 0.0);

  // A pure 24-periodic series: seasonal-naive is exact, repeat-last is not.
  TimeSeriesFrame cycle = periodic_frame(300);
  Segment cycle_whole{&cycle, 0, 0, 300};
  BaselineReport cyc = naive_baselines(cycle_whole, 96, {24, 48}, 24);
  for (const HorizonMetrics& row : cyc.seasonal_naive.rows) {
    CHECK(row.mse == 0.0);
    CHECK(row.mae == 0.0);
  }
  for (const HorizonMetrics& row : cyc.repeat_last.rows) CHECK(row.mse > 0.0);
}

TEST_CASE("baselines share the evaluation window accounting") {
  TimeSeriesFrame frame = wave_frame(400);
  auto segments = chronological_split(frame, SplitSpec{200, 100, 100}, 96);
  BaselineReport report = naive_baselines(segments[2], 96, {24, 96, 192}, 24);

  REQUIRE(report.repeat_last.rows.size() == 3);
  CHECK(report.repeat_last.rows[0].windows == 4);
  CHECK(report.repeat_last.rows[1].windows == 1);
  CHECK(report.repeat_last.rows[2].skipped);
  CHECK(report.seasonal_naive.rows[0].windows == 4);
  CHECK(report.seasonal_naive.rows[2].skipped);

  // Non-degenerate data: both baselines have real error.
  CHECK(report.repeat_last.rows[0].mse > 0.0);
  CHECK(report.seasonal_naive.rows[0].mse > 0.0);
}

TEST_CASE("seasonal-naive refuses a look-back shorter than one period") {
  TimeSeriesFrame frame = wave_frame(300);
  Segment whole{&frame, 0, 0, 300};
  try {
    naive_baselines(whole, 12, {24});
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::data);
    CHECK(std::string(e.what()).find("period") != std::string::npos);
  }
}
