// Data pipeline tests: CSV ingestion, chronological splits, windowing,
// instance normalization, patching, and calendar covariates.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"
#include "core/timeseries.hpp"

using namespace mohets;

namespace {

std::string write_file(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  return path.string();
}

// Hourly frame whose variate d holds value d*1000 + t at step t; handy for
// checking exactly which frame cells a window touched.
TimeSeriesFrame ramp_frame(int64_t D, int64_t T, int64_t freq = 3600) {
  TimeSeriesFrame f;
  f.values = Tensor({D, T});
  for (int64_t d = 0; d < D; ++d) {
    f.variate_names.push_back("v" + std::to_string(d));
    for (int64_t t = 0; t < T; ++t) f.values.data()[d * T + t] = float(d * 1000 + t);
  }
  const int64_t base = days_from_civil(2016, 7, 1) * 86400;
  for (int64_t t = 0; t < T; ++t) f.timestamps.push_back(base + t * freq);
  f.frequency_seconds = freq;
  return f;
}

std::string thrown_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("civil time arithmetic") {
  CHECK(days_from_civil(1970, 1, 1) == 0);
  CHECK(days_from_civil(1970, 1, 2) == 1);
  CHECK(days_from_civil(1969, 12, 31) == -1);

  // Round trip across a broad range, including leap days.
  Rng rng(11, "civil");
  for (int i = 0; i < 200; ++i) {
    const int64_t z = int64_t(rng.uniform(-200000.0, 200000.0));
    int64_t y;
    int m, d;
    civil_from_days(z, y, m, d);
    CHECK(days_from_civil(y, m, d) == z);
  }

  // 2016-07-01 was a Friday; 2016 is a leap year so July 1 is day 183.
  CalendarFields f = calendar_fields(days_from_civil(2016, 7, 1) * 86400);
  CHECK(f.year == 2016);
  CHECK(f.month == 7);
  CHECK(f.day == 1);
  CHECK(f.hour == 0);
  CHECK(f.day_of_week == 4);
  CHECK(f.day_of_year == 183);

  // 2018-07-02 was a Monday; 2018 is not a leap year so it is day 183 again.
  CalendarFields g = calendar_fields(days_from_civil(2018, 7, 2) * 86400 + 12 * 3600 + 34 * 60 + 5);
  CHECK(g.day_of_week == 0);
  CHECK(g.day_of_year == 183);
  CHECK(g.hour == 12);
  CHECK(g.minute == 34);
  CHECK(g.second == 5);
}

TEST_CASE("timestamp parsing and formatting") {
  auto ts = parse_timestamp("2016-07-01 02:00:00");
  REQUIRE(ts.has_value());
  CHECK(*ts == days_from_civil(2016, 7, 1) * 86400 + 2 * 3600);
  CHECK(format_timestamp(*ts) == "2016-07-01 02:00:00");

  CHECK(parse_timestamp("2016-07-01T02:00:00") == ts);
  CHECK(parse_timestamp("2016-07-01") == days_from_civil(2016, 7, 1) * 86400);

  CHECK_FALSE(parse_timestamp("").has_value());
  CHECK_FALSE(parse_timestamp("yesterday").has_value());
  CHECK_FALSE(parse_timestamp("2016/07/01").has_value());
}

TEST_CASE("load_csv reads an hourly multivariate file") {
  const std::string path = write_file(
      "mohets_ok.csv",
      "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\r\n"
      "2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.34,30.531\r\n"
      "\r\n"  // blank line is skipped
      "2016-07-01 01:00:00,5.693,2.076,1.492,0.426,4.142,1.371,27.787\r\n"
      "2016-07-01 02:00:00,5.157,1.741,1.279,0.355,3.777,1.218,27.787\r\n"
      "2016-07-01 03:00:00,5.09,1.942,1.279,0.391,3.807,1.279,25.044\r\n");
  TimeSeriesFrame f = load_csv(path);
  CHECK(f.variates() == 7);
  CHECK(f.length() == 4);
  CHECK(f.frequency_seconds == 3600);
  CHECK(f.variate_names[0] == "HUFL");
  CHECK(f.variate_names[6] == "OT");
  // Values are variate-major [D, T].
  CHECK(f.values.dim(0) == 7);
  CHECK(f.values.dim(1) == 4);
  CHECK(f.values.data()[0 * 4 + 0] == doctest::Approx(5.827));
  CHECK(f.values.data()[0 * 4 + 3] == doctest::Approx(5.09));
  CHECK(f.values.data()[6 * 4 + 0] == doctest::Approx(30.531));
  CHECK(f.timestamps[1] - f.timestamps[0] == 3600);
}

TEST_CASE("load_csv infers sub-hourly frequency") {
  const std::string path = write_file("mohets_15min.csv",
                                      "date,OT\n"
                                      "2016-07-01 00:00:00,1.0\n"
                                      "2016-07-01 00:15:00,2.0\n");
  TimeSeriesFrame f = load_csv(path);
  CHECK(f.frequency_seconds == 900);
}

TEST_CASE("load_csv failure modes name the offending location") {
  CHECK_THROWS_AS(load_csv("/nonexistent/nowhere.csv"), Error);
  try {
    load_csv("/nonexistent/nowhere.csv");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
  }

  const std::string wrong_col = write_file("mohets_col.csv", "timestamp,OT\n2016-07-01,1\n2016-07-02,2\n");
  CHECK(thrown_message([&] { load_csv(wrong_col); }).find("'timestamp'") != std::string::npos);

  const std::string short_row = write_file("mohets_short.csv",
                                           "date,A,B\n"
                                           "2016-07-01 00:00:00,1,2\n"
                                           "2016-07-01 01:00:00,1\n");
  std::string msg = thrown_message([&] { load_csv(short_row); });
  CHECK(msg.find("row 3") != std::string::npos);

  const std::string bad_cell = write_file("mohets_cell.csv",
                                          "date,A,B\n"
                                          "2016-07-01 00:00:00,1,2\n"
                                          "2016-07-01 01:00:00,1,oops\n");
  msg = thrown_message([&] { load_csv(bad_cell); });
  CHECK(msg.find("row 3") != std::string::npos);
  CHECK(msg.find("'B'") != std::string::npos);
  CHECK(msg.find("oops") != std::string::npos);

  // "nan" parses as a double but is not finite; it must be rejected too.
  const std::string nan_cell = write_file("mohets_nan.csv",
                                          "date,A\n"
                                          "2016-07-01 00:00:00,nan\n"
                                          "2016-07-01 01:00:00,1\n");
  msg = thrown_message([&] { load_csv(nan_cell); });
  CHECK(msg.find("'A'") != std::string::npos);

  const std::string gap = write_file("mohets_gap.csv",
                                     "date,A\n"
                                     "2016-07-01 00:00:00,1\n"
                                     "2016-07-01 01:00:00,2\n"
                                     "2016-07-01 03:00:00,3\n");
  msg = thrown_message([&] { load_csv(gap); });
  CHECK(msg.find("row 4") != std::string::npos);
  CHECK(msg.find("3600") != std::string::npos);

  const std::string one_row = write_file("mohets_one.csv", "date,A\n2016-07-01 00:00:00,1\n");
  CHECK_THROWS_AS(load_csv(one_row), Error);

  const std::string bad_ts = write_file("mohets_badts.csv",
                                        "date,A\n"
                                        "2016-07-01 00:00:00,1\n"
                                        "junk,2\n");
  msg = thrown_message([&] { load_csv(bad_ts); });
  CHECK(msg.find("junk") != std::string::npos);
}

TEST_CASE("default splits match the benchmark protocol") {
  SplitSpec s = default_split_for("ETTh1", 17420);
  CHECK(s.train == 8545);
  CHECK(s.val == 2881);
  CHECK(s.test == 2881);

  s = default_split_for("ETTm2", 69680);
  CHECK(s.train == 34465);
  CHECK(s.val == 11521);
  CHECK(s.test == 11521);

  s = default_split_for("weather", 52696);
  CHECK(s.train == 36792);
  CHECK(s.val == 5271);
  CHECK(s.test == 10540);

  s = default_split_for("electricity", 26304);
  CHECK(s.train == 18317);
  CHECK(s.val == 2633);
  CHECK(s.test == 5261);

  s = default_split_for("traffic", 17544);
  CHECK(s.train == 12185);
  CHECK(s.val == 1757);
  CHECK(s.test == 3509);

  // Unknown datasets fall back to a 70/10/20 chronological split.
  s = default_split_for("mystery", 20);
  CHECK(s.train == 14);
  CHECK(s.val == 2);
  CHECK(s.test == 4);
  s = default_split_for("mystery", 10);
  CHECK(s.train == 7);
  CHECK(s.val == 1);
  CHECK(s.test == 2);
}

TEST_CASE("chronological_split boundaries and context") {
  TimeSeriesFrame f = ramp_frame(1, 20);
  auto segs = chronological_split(f, SplitSpec{10, 5, 5}, 4);
  const Segment& train = segs[0];
  const Segment& val = segs[1];
  const Segment& test = segs[2];

  CHECK(train.begin == 0);
  CHECK(train.own_begin == 0);
  CHECK(train.end == 10);

  CHECK(val.begin == 6);  // extended leftward by context=4
  CHECK(val.own_begin == 10);
  CHECK(val.end == 15);

  CHECK(test.begin == 11);
  CHECK(test.own_begin == 15);
  CHECK(test.end == 20);

  CHECK(val.length() == 9);
  CHECK(test.length() == 9);

  CHECK_THROWS_AS(chronological_split(f, SplitSpec{11, 5, 5}, 0), Error);   // exceeds T
  CHECK_THROWS_AS(chronological_split(f, SplitSpec{10, 0, 5}, 0), Error);   // empty split
  CHECK_THROWS_AS(chronological_split(f, SplitSpec{10, 5, 5}, 11), Error);  // context > train
}

TEST_CASE("window_count oracle values and closed form") {
  Segment seg;
  seg.begin = 0;
  seg.own_begin = 0;

  seg.end = 700;
  CHECK(window_count(seg, 672, 24) == 5);
  seg.end = 695;
  CHECK(window_count(seg, 672, 24) == 0);
  seg.end = 696;
  CHECK(window_count(seg, 672, 24) == 1);

  // Closed form vs. brute force over random (length, L, H, stride) triples.
  Rng rng(3, "window-count");
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t len = int64_t(rng.uniform(0.0, 200.0));
    const int64_t L = 1 + int64_t(rng.uniform(0.0, 50.0));
    const int64_t H = 1 + int64_t(rng.uniform(0.0, 30.0));
    const int64_t stride = 1 + int64_t(rng.uniform(0.0, 7.0));
    int64_t brute = 0;
    while (brute * stride + L + H <= len) ++brute;
    seg.end = len;
    CHECK(window_count(seg, L, H, stride) == brute);
  }
}

TEST_CASE("make_windows materializes the right cells in window-major order") {
  TimeSeriesFrame f = ramp_frame(2, 12);
  Segment seg{&f, 0, 0, 12};

  WindowBatch b = make_windows(seg, 4, 2);
  // 7 window positions x 2 variates.
  CHECK(b.window_count == 7);
  CHECK(b.inputs.dim(0) == 14);
  CHECK(b.inputs.dim(1) == 4);
  CHECK(b.targets.dim(1) == 2);
  CHECK_FALSE(b.covariates.defined());

  // Window-major: rows [w0v0, w0v1, w1v0, w1v1, ...].
  CHECK(b.variate[0] == 0);
  CHECK(b.variate[1] == 1);
  CHECK(b.variate[2] == 0);
  CHECK(b.position[0] == 3);
  CHECK(b.position[1] == 3);
  CHECK(b.position[2] == 4);

  // Targets stay in the frame's scale: window 1 of variate 1 covers inputs
  // 1001..1004 and targets 1005, 1006.
  CHECK(b.targets.data()[3 * 2 + 0] == doctest::Approx(1005.0f));
  CHECK(b.targets.data()[3 * 2 + 1] == doctest::Approx(1006.0f));

  // Inputs are instance-normalized; stats recover the raw window.
  CHECK(b.stats.mean.data()[3] == doctest::Approx(1002.5f));

  // Subset selection picks specific window ordinals only.
  WindowBatch sub = make_windows(seg, 4, 2, 1, CovariateSpec::none(), {1, 6});
  CHECK(sub.window_count == 2);
  CHECK(sub.inputs.dim(0) == 4);
  CHECK(sub.position[0] == 4);
  CHECK(sub.position[2] == 9);
  CHECK(sub.targets.data()[0] == doctest::Approx(5.0f));

  // Stride > 1 spaces window starts.
  WindowBatch strided = make_windows(seg, 4, 2, 3);
  CHECK(strided.window_count == 3);  // starts 0, 3, 6
  CHECK(strided.position[0] == 3);
  CHECK(strided.position[2] == 6);
  CHECK(strided.position[4] == 9);

  // Too-short segment refuses outright.
  Segment tiny{&f, 0, 0, 5};
  CHECK_THROWS_AS(make_windows(tiny, 4, 2), Error);

  // Out-of-range subset ordinal refuses.
  CHECK_THROWS_AS(make_windows(seg, 4, 2, 1, CovariateSpec::none(), {7}), Error);
}

TEST_CASE("val and test windows never leak targets across split boundaries") {
  TimeSeriesFrame f = ramp_frame(2, 200);
  const int64_t L = 20, H = 5;
  auto segs = chronological_split(f, SplitSpec{100, 40, 60}, L);

  for (int si = 1; si <= 2; ++si) {
    const Segment& seg = segs[si];
    WindowBatch b = make_windows(seg, L, H);
    CHECK(b.window_count == seg.end - seg.own_begin - H + 1);
    for (size_t r = 0; r < b.position.size(); ++r) {
      const int64_t first_target = b.position[r] + 1;
      CHECK(first_target >= seg.own_begin);
      CHECK(first_target + H <= seg.end);
    }
    // The very first window really does read borrowed context.
    CHECK(b.position[0] + 1 - L < seg.own_begin);
  }

  // Train windows keep their targets inside the train range too.
  WindowBatch tb = make_windows(segs[0], L, H);
  for (size_t r = 0; r < tb.position.size(); ++r) CHECK(tb.position[r] + H < segs[0].end);
}

TEST_CASE("instance normalization oracles") {
  // Constant row: mean 5, std 0, normalized all zeros.
  auto [z, zs] = instance_normalize(Tensor::from({1, 4}, {5, 5, 5, 5}));
  for (float v : z.to_vector()) CHECK(v == 0.0f);
  CHECK(zs.mean.data()[0] == doctest::Approx(5.0f));
  CHECK(zs.std.data()[0] == doctest::Approx(0.0f));

  // Two-point row: population std = 1, so values map near -1 and 1.
  auto [u, us] = instance_normalize(Tensor::from({1, 2}, {1, 3}));
  CHECK(us.mean.data()[0] == doctest::Approx(2.0f));
  CHECK(us.std.data()[0] == doctest::Approx(1.0f));
  CHECK(u.data()[0] == doctest::Approx(-1.0f).epsilon(1e-4));
  CHECK(u.data()[1] == doctest::Approx(1.0f).epsilon(1e-4));

  // Round trip: denormalize(normalize(x)) == x, including near-constant rows.
  Rng rng(5, "roundtrip");
  Tensor x({8, 32});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = float(rng.normal() * 40.0 + 7.0);
  for (int64_t j = 0; j < 32; ++j) x.data()[2 * 32 + j] = 3.0f + float(rng.normal() * 1e-7);
  for (int64_t j = 0; j < 32; ++j) x.data()[5 * 32 + j] = -123.0f;
  auto [n, st] = instance_normalize(x);
  Tensor back = instance_denormalize(n, st);
  auto xv = x.to_vector();
  auto bv = back.to_vector();
  for (size_t i = 0; i < xv.size(); ++i) CHECK(bv[i] == doctest::Approx(xv[i]).epsilon(1e-5));

  // Windows emitted by make_windows are normalized per row.
  TimeSeriesFrame f = ramp_frame(2, 40);
  // Break the ramp so windows are not constant after normalization edge cases.
  Rng noise(9, "noise");
  for (int64_t i = 0; i < f.values.size(); ++i) f.values.data()[i] += float(noise.normal());
  WindowBatch b = make_windows(Segment{&f, 0, 0, 40}, 16, 2);
  for (int64_t r = 0; r < b.inputs.dim(0); ++r) {
    double mean = 0, var = 0;
    for (int64_t j = 0; j < 16; ++j) mean += b.inputs.data()[r * 16 + j];
    mean /= 16;
    for (int64_t j = 0; j < 16; ++j) {
      const double c = b.inputs.data()[r * 16 + j] - mean;
      var += c * c;
    }
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::sqrt(var / 16) == doctest::Approx(1.0).epsilon(1e-3));
  }

  // Mismatched stats refuse.
  CHECK_THROWS_AS(instance_denormalize(Tensor({3, 4}), us), Error);
}

TEST_CASE("patchify splits, pads, and backpropagates") {
  // Exact division is a pure reshape.
  Tensor exact = patchify(Tensor::from({1, 6}, {1, 2, 3, 4, 5, 6}), 3);
  CHECK(exact.shape() == Shape{1, 2, 3});
  CHECK(exact.to_vector() == std::vector<float>{1, 2, 3, 4, 5, 6});

  // Ragged tail repeats the last observed value.
  Tensor ragged = patchify(Tensor::from({1, 6}, {1, 2, 3, 4, 5, 6}), 4);
  CHECK(ragged.shape() == Shape{1, 2, 4});
  CHECK(ragged.to_vector() == std::vector<float>{1, 2, 3, 4, 5, 6, 6, 6});

  // A patch longer than the series is refused: padding exists to square off a
  // ragged tail, not to invent data.
  CHECK_THROWS_AS(patchify(Tensor::from({1, 3}, {1, 2, 3}), 8), Error);

  // Batched input keeps leading axes.
  Tensor batched = patchify(Tensor({5, 12}), 4);
  CHECK(batched.shape() == Shape{5, 3, 4});

  // Padding participates in autodiff: the repeated element accumulates the
  // gradient of every copy.
  Tensor x = Tensor::from({1, 6}, {1, 2, 3, 4, 5, 6});
  x.ensure_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum_all(patchify(x, 4));
    backward(loss, tape);
  }
  CHECK(x.grad()[4] == doctest::Approx(1.0f));
  CHECK(x.grad()[5] == doctest::Approx(3.0f));
}

TEST_CASE("calendar covariates map fields into [-0.5, 0.5]") {
  // Frozen sextet for 2018-07-02 12:00:00 (a Monday, day 183 of a common year):
  // minute 0, hour 12, dow 0, dom 2, doy 183, month 7.
  const int64_t ts = days_from_civil(2018, 7, 2) * 86400 + 12 * 3600;
  CovariateSpec all;
  Tensor c = calendar_covariates({ts}, all);
  CHECK(c.shape() == Shape{6, 1});
  CHECK(c.data()[0] == doctest::Approx(-0.5));                   // minute
  CHECK(c.data()[1] == doctest::Approx(12.0 / 23.0 - 0.5));      // hour = 0.021739
  CHECK(c.data()[2] == doctest::Approx(-0.5));                   // Monday
  CHECK(c.data()[3] == doctest::Approx(1.0 / 30.0 - 0.5));       // day 2
  CHECK(c.data()[4] == doctest::Approx(182.0 / 365.0 - 0.5));    // doy 183
  CHECK(c.data()[5] == doctest::Approx(6.0 / 11.0 - 0.5));       // July

  // Endpoint checks: the affine maps hit exactly +-0.5 at their extremes.
  const int64_t sunday_end = days_from_civil(2016, 12, 31) * 86400 + 23 * 3600 + 59 * 60;
  // 2016-12-31: Saturday, day 366 of a leap year, minute 59, hour 23, dom 31.
  Tensor e = calendar_covariates({sunday_end}, all);
  CHECK(e.data()[0] == doctest::Approx(0.5));   // minute 59
  CHECK(e.data()[1] == doctest::Approx(0.5));   // hour 23
  CHECK(e.data()[3] == doctest::Approx(0.5));   // day 31
  CHECK(e.data()[4] == doctest::Approx(0.5));   // day 366 (leap year)
  CHECK(e.data()[5] == doctest::Approx(0.5));   // December

  const int64_t sunday = days_from_civil(2018, 7, 8) * 86400;  // a Sunday
  CHECK(calendar_covariates({sunday}, all).data()[2] == doctest::Approx(0.5));

  // Bounds hold over arbitrary timestamps.
  Rng rng(17, "calendar");
  std::vector<int64_t> many;
  for (int i = 0; i < 1000; ++i) many.push_back(int64_t(rng.uniform(0.0, 4e9)));
  Tensor m = calendar_covariates(many, all);
  CHECK(m.shape() == Shape{6, 1000});
  for (float v : m.to_vector()) {
    CHECK(v >= -0.5f);
    CHECK(v <= 0.5f);
  }

  // Component subsetting preserves the canonical order.
  CovariateSpec two = CovariateSpec::none();
  two.hour_of_day = true;
  two.day_of_week = true;
  CHECK(two.count() == 2);
  Tensor t2 = calendar_covariates({ts}, two);
  CHECK(t2.shape() == Shape{2, 1});
  CHECK(t2.data()[0] == doctest::Approx(12.0 / 23.0 - 0.5));
  CHECK(t2.data()[1] == doctest::Approx(-0.5));
}

TEST_CASE("future timestamps continue the frame's spacing") {
  TimeSeriesFrame f = ramp_frame(1, 5, 900);
  std::vector<int64_t> fut = future_timestamps(f, 3);
  REQUIRE(fut.size() == 3);
  CHECK(fut[0] == f.timestamps.back() + 900);
  CHECK(fut[1] == f.timestamps.back() + 1800);
  CHECK(fut[2] == f.timestamps.back() + 2700);
}

TEST_CASE("per-variate scaler standardizes on the train prefix") {
  TimeSeriesFrame f = ramp_frame(2, 6);
  // Variate 1 constant: std must be floored, not zero.
  for (int64_t t = 0; t < 6; ++t) f.values.data()[1 * 6 + t] = 4.0f;

  GlobalScaler s = fit_scaler(f, 4);
  CHECK(s.mean[0] == doctest::Approx(1.5));
  CHECK(s.std[0] == doctest::Approx(std::sqrt(1.25)));
  CHECK(s.mean[1] == doctest::Approx(4.0));
  CHECK(s.std[1] > 0.0);

  apply_scaler(f, s);
  // Train prefix of variate 0 has mean 0, std 1.
  double m = 0;
  for (int64_t t = 0; t < 4; ++t) m += f.values.data()[t];
  CHECK(std::abs(m / 4) < 1e-6);
  CHECK(f.values.data()[0 * 6 + 5] == doctest::Approx((5.0 - 1.5) / std::sqrt(1.25)));
  // Constant variate stays finite.
  for (int64_t t = 0; t < 6; ++t) CHECK(std::isfinite(f.values.data()[1 * 6 + t]));

  // unscale inverts the transform.
  CHECK(unscale_value(s, 0, f.values.data()[5]) == doctest::Approx(5.0));

  CHECK_THROWS_AS(fit_scaler(f, 1), Error);
  CHECK_THROWS_AS(fit_scaler(f, 99), Error);
  TimeSeriesFrame g = ramp_frame(3, 6);
  CHECK_THROWS_AS(apply_scaler(g, s), Error);
}
