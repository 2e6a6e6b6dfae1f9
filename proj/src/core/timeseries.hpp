#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace mohets {

// ---- civil time ----------------------------------------------------------------
//
// Proleptic-Gregorian day arithmetic (Howard Hinnant's algorithms).  Timestamps
// are held as Unix epoch seconds; no time zones, no leap seconds.

int64_t days_from_civil(int64_t y, int m, int d);
void civil_from_days(int64_t z, int64_t& y, int& m, int& d);

struct CalendarFields {
  int64_t year;
  int month;        // 1..12
  int day;          // 1..31
  int hour;         // 0..23
  int minute;       // 0..59
  int second;       // 0..59
  int day_of_week;  // Monday = 0 .. Sunday = 6
  int day_of_year;  // 1..366
};

CalendarFields calendar_fields(int64_t epoch_seconds);

// Parses "YYYY-MM-DD HH:MM:SS" (a 'T' separator and omitted time are accepted).
// Returns nullopt on malformed input.
std::optional<int64_t> parse_timestamp(const std::string& text);
std::string format_timestamp(int64_t epoch_seconds);

// ---- frames and splits ---------------------------------------------------------

// A regularly sampled multivariate series.  Values are variate-major [D, T].
struct TimeSeriesFrame {
  std::vector<std::string> variate_names;  // D
  Tensor values;                           // [D, T]
  std::vector<int64_t> timestamps;         // T epoch seconds, constant spacing
  int64_t frequency_seconds = 0;

  int64_t variates() const { return static_cast<int64_t>(variate_names.size()); }
  int64_t length() const { return static_cast<int64_t>(timestamps.size()); }
};

// Reads a header + rows CSV whose first column holds timestamps.  Spacing is
// inferred from the first two rows and enforced on the rest; any cell that does
// not parse to a finite number fails with its row and column.
TimeSeriesFrame load_csv(const std::string& path, const std::string& timestamp_column = "date");

struct SplitSpec {
  int64_t train = 0;
  int64_t val = 0;
  int64_t test = 0;
};

// Benchmark split lengths for known dataset names; everything else gets a
// 70/10/20 chronological split.
SplitSpec default_split_for(const std::string& dataset_name, int64_t total_length);

// A contiguous view [begin, end) of a frame.  For val/test, [begin, own_begin)
// is look-back context borrowed from earlier data: windows may read it but
// every emitted target lies in [own_begin, end).
struct Segment {
  const TimeSeriesFrame* frame = nullptr;
  int64_t begin = 0;
  int64_t own_begin = 0;
  int64_t end = 0;

  int64_t length() const { return end - begin; }
};

// Chronological train/val/test views; val and test are extended leftward by
// `context` points so length-L windows can be formed at their starts.
std::array<Segment, 3> chronological_split(const TimeSeriesFrame& frame, const SplitSpec& spec,
                                           int64_t context);

// ---- normalization -------------------------------------------------------------

inline constexpr float kInstanceNormEps = 1e-5f;

template <typename T>
struct InstanceStatsT {
  TensorT<T> mean;  // [R]
  TensorT<T> std;   // [R] population standard deviation
};
using InstanceStats = InstanceStatsT<float>;

// Row-wise (x - mean) / (std + eps) over the last axis of a [R, L] tensor.
// Constant rows come out all-zero.  Not recorded on the tape.
std::pair<Tensor, InstanceStats> instance_normalize(const Tensor& x);

// Exact inverse, applied to model outputs [R, H]; differentiable.
template <typename T>
TensorT<T> instance_denormalize(const TensorT<T>& pred, const InstanceStatsT<T>& stats);

// ---- per-variate standardization -------------------------------------------------

// z-score statistics fit on the leading `fit_length` points of each variate —
// the training split — then applied to the whole series, so losses and metrics
// live in the scaled space benchmark tables report.
struct GlobalScaler {
  std::vector<double> mean;  // D
  std::vector<double> std;   // D, population, floored at 1e-8
};

GlobalScaler fit_scaler(const TimeSeriesFrame& frame, int64_t fit_length);
void apply_scaler(TimeSeriesFrame& frame, const GlobalScaler& scaler);  // in place
double unscale_value(const GlobalScaler& scaler, int64_t variate, double value);

// ---- patching ------------------------------------------------------------------

// [..., L] -> [..., S, P] with S = ceil(L/P); a ragged final patch repeats the
// last observed value.  Built from slice/concat/reshape, so it participates in
// autodiff when the input does.
template <typename T>
TensorT<T> patchify(const TensorT<T>& series, int64_t P);

// ---- calendar covariates -------------------------------------------------------

struct CovariateSpec {
  bool minute_of_hour = true;
  bool hour_of_day = true;
  bool day_of_week = true;
  bool day_of_month = true;
  bool day_of_year = true;
  bool month_of_year = true;

  int64_t count() const {
    return int64_t(minute_of_hour) + hour_of_day + day_of_week + day_of_month + day_of_year +
           month_of_year;
  }
  static CovariateSpec none() { return {false, false, false, false, false, false}; }
};

// [C, L] matrix of calendar components, each mapped affinely into [-0.5, 0.5].
// Component order: minute, hour, day-of-week, day-of-month, day-of-year, month.
Tensor calendar_covariates(const std::vector<int64_t>& timestamps, const CovariateSpec& spec);

// Timestamps continuing a frame past its end: last + (k+1) * frequency.
std::vector<int64_t> future_timestamps(const TimeSeriesFrame& frame, int64_t count);

// ---- windowing -----------------------------------------------------------------

// Rows are ordered window-major: all D variates of one window position are
// adjacent, so whole multivariate windows occupy contiguous row blocks.
struct WindowBatch {
  Tensor inputs;      // [R, L] instance-normalized
  Tensor targets;     // [R, H_o] unnormalized
  Tensor covariates;  // [R, C, L]; empty tensor when C = 0
  InstanceStats stats;
  std::vector<int64_t> variate;   // [R] variate index of each row
  std::vector<int64_t> position;  // [R] frame index of the last input point
  int64_t window_count = 0;       // rows / D
};

// Number of length-(L+H_o) windows a segment yields per variate.
int64_t window_count(const Segment& segment, int64_t L, int64_t H_o, int64_t stride = 1);

// Materializes windows from a segment.  `subset` selects window ordinals
// (0 .. window_count-1) to emit; empty means all.
WindowBatch make_windows(const Segment& segment, int64_t L, int64_t H_o, int64_t stride = 1,
                         const CovariateSpec& cov = CovariateSpec::none(),
                         const std::vector<int64_t>& subset = {});

}  // namespace mohets
