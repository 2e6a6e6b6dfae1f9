#include "core/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "core/error.hpp"
#include "core/ops.hpp"

namespace mohets {

// ---- civil time ----------------------------------------------------------------

int64_t days_from_civil(int64_t y, int m, int d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const int64_t yoe = y - era * 400;                                          // [0, 399]
  const int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;         // [0, 365]
  const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;                  // [0, 146096]
  return era * 146097 + doe - 719468;
}

void civil_from_days(int64_t z, int64_t& y, int& m, int& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const int64_t doe = z - era * 146097;                                       // [0, 146096]
  const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;  // [0, 399]
  const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);                // [0, 365]
  const int64_t mp = (5 * doy + 2) / 153;                                     // [0, 11]
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = yoe + era * 400 + (m <= 2);
}

namespace {

int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
}

int64_t floor_mod(int64_t a, int64_t b) { return a - floor_div(a, b) * b; }

}  // namespace

CalendarFields calendar_fields(int64_t epoch_seconds) {
  const int64_t days = floor_div(epoch_seconds, 86400);
  const int64_t secs = floor_mod(epoch_seconds, 86400);
  CalendarFields f{};
  civil_from_days(days, f.year, f.month, f.day);
  f.hour = static_cast<int>(secs / 3600);
  f.minute = static_cast<int>((secs / 60) % 60);
  f.second = static_cast<int>(secs % 60);
  // 1970-01-01 was a Thursday; shift so Monday = 0.
  f.day_of_week = static_cast<int>(floor_mod(days + 3, 7));
  f.day_of_year = static_cast<int>(days - days_from_civil(f.year, 1, 1) + 1);
  return f;
}

std::optional<int64_t> parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
  if (n != 3 && n != 7) return std::nullopt;
  if (n == 7 && sep != ' ' && sep != 'T') return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
  if (h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59) return std::nullopt;
  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(int64_t epoch_seconds) {
  CalendarFields f = calendar_fields(epoch_seconds);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld-%02d-%02d %02d:%02d:%02d",
                static_cast<long long>(f.year), f.month, f.day, f.hour, f.minute, f.second);
  return buf;
}

// ---- CSV ingestion -------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

TimeSeriesFrame load_csv(const std::string& path, const std::string& timestamp_column) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open " + path);

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::data, path + ": empty file");
  std::vector<std::string> header = split_fields(line);
  require(header.size() >= 2, ErrorCode::data,
          path + ": need a timestamp column and at least one variate");
  require(header[0] == timestamp_column, ErrorCode::data,
          path + ": first column is '" + header[0] + "', expected '" + timestamp_column + "'");

  const int64_t D = static_cast<int64_t>(header.size()) - 1;
  std::vector<int64_t> timestamps;
  std::vector<std::vector<float>> columns(D);  // variate-major accumulation

  int64_t file_row = 1;  // header was row 1
  while (std::getline(in, line)) {
    ++file_row;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> fields = split_fields(line);
    require(static_cast<int64_t>(fields.size()) == D + 1, ErrorCode::data,
            path + ": row " + std::to_string(file_row) + " has " +
                std::to_string(fields.size()) + " fields, expected " + std::to_string(D + 1));
    auto ts = parse_timestamp(fields[0]);
    require(ts.has_value(), ErrorCode::data,
            path + ": row " + std::to_string(file_row) + ": bad timestamp '" + fields[0] + "'");
    timestamps.push_back(*ts);
    for (int64_t c = 0; c < D; ++c) {
      const std::string& cell = fields[c + 1];
      char* endp = nullptr;
      double v = std::strtod(cell.c_str(), &endp);
      bool parsed = endp != cell.c_str() && *endp == '\0' && !cell.empty();
      require(parsed && std::isfinite(v), ErrorCode::data,
              path + ": row " + std::to_string(file_row) + ", column '" + header[c + 1] +
                  "': cannot read '" + cell + "' as a finite number");
      columns[c].push_back(static_cast<float>(v));
    }
  }

  const int64_t T = static_cast<int64_t>(timestamps.size());
  require(T >= 2, ErrorCode::data, path + ": need at least two data rows");
  const int64_t freq = timestamps[1] - timestamps[0];
  require(freq > 0, ErrorCode::data, path + ": timestamps do not increase at row 3");
  for (int64_t i = 1; i < T; ++i) {
    require(timestamps[i] - timestamps[i - 1] == freq, ErrorCode::data,
            path + ": row " + std::to_string(i + 2) + ": spacing " +
                std::to_string(timestamps[i] - timestamps[i - 1]) + "s breaks the inferred " +
                std::to_string(freq) + "s frequency");
  }

  TimeSeriesFrame frame;
  frame.variate_names.assign(header.begin() + 1, header.end());
  frame.timestamps = std::move(timestamps);
  frame.frequency_seconds = freq;
  frame.values = Tensor({D, T});
  for (int64_t c = 0; c < D; ++c)
    std::copy(columns[c].begin(), columns[c].end(), frame.values.data() + c * T);
  return frame;
}

SplitSpec default_split_for(const std::string& dataset_name, int64_t total_length) {
  if (dataset_name == "ETTh1" || dataset_name == "ETTh2") return {8545, 2881, 2881};
  if (dataset_name == "ETTm1" || dataset_name == "ETTm2") return {34465, 11521, 11521};
  if (dataset_name == "Weather" || dataset_name == "weather") return {36792, 5271, 10540};
  if (dataset_name == "ECL" || dataset_name == "electricity") return {18317, 2633, 5261};
  if (dataset_name == "Traffic" || dataset_name == "traffic") return {12185, 1757, 3509};
  int64_t train = total_length * 7 / 10;
  int64_t val = total_length / 10;
  return {train, val, total_length - train - val};
}

std::array<Segment, 3> chronological_split(const TimeSeriesFrame& frame, const SplitSpec& spec,
                                           int64_t context) {
  require(spec.train > 0 && spec.val > 0 && spec.test > 0, ErrorCode::data,
          "split lengths must be positive");
  const int64_t total = spec.train + spec.val + spec.test;
  require(total <= frame.length(), ErrorCode::data,
          "split lengths sum to " + std::to_string(total) + " but the series has " +
              std::to_string(frame.length()) + " points");
  require(context <= spec.train, ErrorCode::data,
          "look-back context " + std::to_string(context) + " exceeds the train length " +
              std::to_string(spec.train));
  const int64_t b1 = spec.train;
  const int64_t b2 = spec.train + spec.val;
  Segment train{&frame, 0, 0, b1};
  Segment val{&frame, b1 - context, b1, b2};
  Segment test{&frame, b2 - context, b2, b2 + spec.test};
  return {train, val, test};
}

// ---- normalization -------------------------------------------------------------

std::pair<Tensor, InstanceStats> instance_normalize(const Tensor& x) {
  require(x.rank() == 2, ErrorCode::internal,
          "instance_normalize: expects [rows, length], got " + shape_str(x.shape()));
  const int64_t R = x.dim(0), L = x.dim(1);
  require(L >= 2, ErrorCode::internal, "instance_normalize: window length must be >= 2");
  Tensor out(x.shape());
  InstanceStats stats{Tensor({R}), Tensor({R})};
  for (int64_t r = 0; r < R; ++r) {
    const float* row = x.data() + r * L;
    double mean = 0;
    for (int64_t i = 0; i < L; ++i) mean += row[i];
    mean /= L;
    double var = 0;
    for (int64_t i = 0; i < L; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= L;
    const double sd = std::sqrt(var);
    const double inv = 1.0 / (sd + kInstanceNormEps);
    stats.mean.data()[r] = static_cast<float>(mean);
    stats.std.data()[r] = static_cast<float>(sd);
    float* dst = out.data() + r * L;
    for (int64_t i = 0; i < L; ++i) dst[i] = static_cast<float>((row[i] - mean) * inv);
  }
  return {out, stats};
}

template <typename T>
TensorT<T> instance_denormalize(const TensorT<T>& pred, const InstanceStatsT<T>& stats) {
  require(pred.rank() == 2, ErrorCode::internal,
          "instance_denormalize: expects [rows, horizon], got " + shape_str(pred.shape()));
  const int64_t R = pred.dim(0);
  require(stats.mean.size() == R && stats.std.size() == R, ErrorCode::internal,
          "instance_denormalize: stats rows do not match predictions");
  TensorT<T> scale = add_scalar(stats.std, T(kInstanceNormEps)).reshape({R, 1});
  TensorT<T> shift = stats.mean.reshape({R, 1});
  return add(mul(pred, scale), shift);
}

template Tensor instance_denormalize(const Tensor&, const InstanceStatsT<float>&);
template TensorT<double> instance_denormalize(const TensorT<double>&,
                                              const InstanceStatsT<double>&);

// ---- per-variate standardization -------------------------------------------------

GlobalScaler fit_scaler(const TimeSeriesFrame& frame, int64_t fit_length) {
  require(fit_length >= 2 && fit_length <= frame.length(), ErrorCode::data,
          "scaler fit length " + std::to_string(fit_length) + " outside [2, " +
              std::to_string(frame.length()) + "]");
  const int64_t D = frame.variates(), T = frame.length();
  const float* v = frame.values.data();
  GlobalScaler s;
  s.mean.reserve(D);
  s.std.reserve(D);
  for (int64_t d = 0; d < D; ++d) {
    double sum = 0.0;
    for (int64_t t = 0; t < fit_length; ++t) sum += v[d * T + t];
    const double mean = sum / double(fit_length);
    double sq = 0.0;
    for (int64_t t = 0; t < fit_length; ++t) {
      const double c = v[d * T + t] - mean;
      sq += c * c;
    }
    s.mean.push_back(mean);
    s.std.push_back(std::max(std::sqrt(sq / double(fit_length)), 1e-8));
  }
  return s;
}

void apply_scaler(TimeSeriesFrame& frame, const GlobalScaler& scaler) {
  const int64_t D = frame.variates(), T = frame.length();
  require(int64_t(scaler.mean.size()) == D && int64_t(scaler.std.size()) == D, ErrorCode::data,
          "scaler was fit on " + std::to_string(scaler.mean.size()) + " variates, frame has " +
              std::to_string(D));
  float* v = frame.values.data();
  for (int64_t d = 0; d < D; ++d)
    for (int64_t t = 0; t < T; ++t)
      v[d * T + t] = float((v[d * T + t] - scaler.mean[d]) / scaler.std[d]);
}

double unscale_value(const GlobalScaler& scaler, int64_t variate, double value) {
  return value * scaler.std[size_t(variate)] + scaler.mean[size_t(variate)];
}

// ---- patching ------------------------------------------------------------------

template <typename T>
TensorT<T> patchify(const TensorT<T>& series, int64_t P) {
  require(P >= 1, ErrorCode::internal, "patchify: patch length must be >= 1");
  const int64_t L = series.dim(-1);
  require(P <= L, ErrorCode::internal, "patchify: patch length " + std::to_string(P) +
                                           " exceeds series length " + std::to_string(L));
  const int64_t S = (L + P - 1) / P;
  const int64_t pad = S * P - L;
  Shape lead(series.shape().begin(), series.shape().end() - 1);
  int64_t rows = series.size() / L;
  TensorT<T> flat = series.reshape({rows, L});
  if (pad > 0) {
    TensorT<T> last = slice(flat, 1, L - 1, 1);  // [rows, 1]
    std::vector<TensorT<T>> parts = {flat};
    for (int64_t i = 0; i < pad; ++i) parts.push_back(last);
    flat = concat(parts, 1);
  }
  Shape out = lead;
  out.push_back(S);
  out.push_back(P);
  return flat.reshape(out);
}

template Tensor patchify(const Tensor&, int64_t);
template TensorT<double> patchify(const TensorT<double>&, int64_t);

// ---- calendar covariates -------------------------------------------------------

Tensor calendar_covariates(const std::vector<int64_t>& timestamps, const CovariateSpec& spec) {
  const int64_t C = spec.count();
  const int64_t L = static_cast<int64_t>(timestamps.size());
  Tensor out({C, L});
  for (int64_t t = 0; t < L; ++t) {
    CalendarFields f = calendar_fields(timestamps[t]);
    int64_t c = 0;
    auto put = [&](double v) { out.data()[c++ * L + t] = static_cast<float>(v); };
    if (spec.minute_of_hour) put(f.minute / 59.0 - 0.5);
    if (spec.hour_of_day) put(f.hour / 23.0 - 0.5);
    if (spec.day_of_week) put(f.day_of_week / 6.0 - 0.5);
    if (spec.day_of_month) put((f.day - 1) / 30.0 - 0.5);
    if (spec.day_of_year) put((f.day_of_year - 1) / 365.0 - 0.5);
    if (spec.month_of_year) put((f.month - 1) / 11.0 - 0.5);
  }
  return out;
}

std::vector<int64_t> future_timestamps(const TimeSeriesFrame& frame, int64_t count) {
  std::vector<int64_t> out(count);
  int64_t last = frame.timestamps.back();
  for (int64_t k = 0; k < count; ++k) out[k] = last + (k + 1) * frame.frequency_seconds;
  return out;
}

// ---- windowing -----------------------------------------------------------------

int64_t window_count(const Segment& segment, int64_t L, int64_t H_o, int64_t stride) {
  const int64_t usable = segment.length() - L - H_o;
  return usable < 0 ? 0 : usable / stride + 1;
}

WindowBatch make_windows(const Segment& segment, int64_t L, int64_t H_o, int64_t stride,
                         const CovariateSpec& cov, const std::vector<int64_t>& subset) {
  require(segment.frame != nullptr, ErrorCode::internal, "make_windows: empty segment view");
  require(stride >= 1, ErrorCode::internal, "make_windows: stride must be >= 1");
  const int64_t have = segment.length();
  require(have >= L + H_o, ErrorCode::data,
          "segment of " + std::to_string(have) + " points cannot form a window; need at least " +
              std::to_string(L + H_o));
  const TimeSeriesFrame& frame = *segment.frame;
  const int64_t D = frame.variates();
  const int64_t T = frame.length();
  const int64_t total = window_count(segment, L, H_o, stride);

  std::vector<int64_t> picks;
  if (subset.empty()) {
    picks.resize(total);
    for (int64_t i = 0; i < total; ++i) picks[i] = i;
  } else {
    picks = subset;
    for (int64_t w : picks)
      require(w >= 0 && w < total, ErrorCode::internal,
              "make_windows: window ordinal " + std::to_string(w) + " out of range [0, " +
                  std::to_string(total) + ")");
  }

  const int64_t W = static_cast<int64_t>(picks.size());
  const int64_t R = W * D;
  const int64_t C = cov.count();
  WindowBatch batch;
  batch.window_count = W;
  Tensor raw({R, L});
  batch.targets = Tensor({R, H_o});
  batch.covariates = C > 0 ? Tensor({R, C, L}) : Tensor();
  batch.variate.resize(R);
  batch.position.resize(R);

  std::vector<int64_t> ts(L);
  for (int64_t wi = 0; wi < W; ++wi) {
    const int64_t start = segment.begin + picks[wi] * stride;  // first input point
    Tensor cov_block;
    if (C > 0) {
      for (int64_t i = 0; i < L; ++i) ts[i] = frame.timestamps[start + i];
      cov_block = calendar_covariates(ts, cov);
    }
    for (int64_t v = 0; v < D; ++v) {
      const int64_t r = wi * D + v;
      const float* src = frame.values.data() + v * T;
      std::copy(src + start, src + start + L, raw.data() + r * L);
      std::copy(src + start + L, src + start + L + H_o, batch.targets.data() + r * H_o);
      if (C > 0)
        std::copy(cov_block.data(), cov_block.data() + C * L,
                  batch.covariates.data() + r * C * L);
      batch.variate[r] = v;
      batch.position[r] = start + L - 1;
    }
  }
  auto [normalized, stats] = instance_normalize(raw);
  batch.inputs = normalized;
  batch.stats = stats;
  return batch;
}

}  // namespace mohets
