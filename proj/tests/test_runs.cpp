// Run-artifact tests: manifests, metric and forecast CSVs, SVG plots,
// checkpoint save/load round trips, the synthetic dataset generator, and the
// CSV writer's round trip through the loader.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/infer.hpp"
#include "core/model.hpp"
#include "core/runs.hpp"
#include "core/tensor.hpp"
#include "core/timeseries.hpp"

using namespace mohets;

namespace {

std::filesystem::path scratch_dir() {
  static const std::filesystem::path dir = [] {
    auto base = std::filesystem::temp_directory_path() / "mohets_runs_tests";
    std::filesystem::remove_all(base);
    std::filesystem::create_directories(base);
    return base;
  }();
  return dir;
}

std::string scratch(const std::string& name) { return (scratch_dir() / name).string(); }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

ModelConfig small_config() {
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
  c.variates = 2;
  c.covariates = 2;
  c.validate();
  return c;
}

}  // namespace

// ---- manifests --------------------------------------------------------------------

TEST_CASE("manifest json carries the command, config, seed, timings, and outputs") {
  RunManifest manifest;
  manifest.command = "train";
  manifest.config_json = R"({"model": {"d_model": 64}, "epochs": 5})";
  manifest.seed = 42;
  manifest.timings_seconds = {{"train", 12.5}, {"eval", 0.75}};
  manifest.output_paths = {"run/model.moht", "run/steps.jsonl"};

  nlohmann::json j = nlohmann::json::parse(manifest_to_json(manifest));
  CHECK(j.at("command") == "train");
  CHECK(j.at("config").at("model").at("d_model") == 64);
  CHECK(j.at("config").at("epochs") == 5);
  CHECK(j.at("seed") == 42);
  CHECK(j.at("code_version") == code_version());
  CHECK(j.at("timings_seconds").at("train") == 12.5);
  CHECK(j.at("outputs").size() == 2);
  CHECK(j.at("outputs")[0] == "run/model.moht");

  const std::string path = scratch("manifest.json");
  write_manifest(path, manifest);
  CHECK(nlohmann::json::parse(read_file(path)) == j);

  RunManifest broken;
  broken.config_json = "not json";
  CHECK_THROWS_AS(manifest_to_json(broken), Error);
}

// ---- metric CSV -------------------------------------------------------------------

TEST_CASE("metric csv has the manifest comment, header, rows, avg, and warnings") {
  HorizonReport model_report;
  model_report.rows = {{96, 0.35, 0.383, 10, false}, {720, 0.0, 0.0, 0, true}};
  model_report.rows[1].mse = std::numeric_limits<double>::quiet_NaN();
  model_report.rows[1].mae = std::numeric_limits<double>::quiet_NaN();
  model_report.avg_mse = 0.35;
  model_report.avg_mae = 0.383;
  HorizonReport baseline;
  baseline.rows = {{96, 1.25, 0.9, 10, false}};
  baseline.avg_mse = 1.25;
  baseline.avg_mae = 0.9;

  const std::string path = scratch("metrics.csv");
  write_metric_csv(path, "run/manifest.json", "synthetic", 7,
                   {{"mohets", model_report}, {"repeat_last", baseline}});

  auto lines = lines_of(read_file(path));
  REQUIRE(lines.size() == 8);
  CHECK(lines[0] == "# manifest: run/manifest.json");
  CHECK(lines[1] == "dataset,horizon,mse,mae,model,seed");
  CHECK(lines[2] == "synthetic,96,0.35,0.383,mohets,7");
  CHECK(lines[3] == "# warning: horizon 720 skipped for mohets (segment too short)");
  CHECK(lines[4] == "synthetic,720,,,mohets,7");
  CHECK(lines[5] == "synthetic,avg,0.35,0.383,mohets,7");
  CHECK(lines[6] == "synthetic,96,1.25,0.9,repeat_last,7");
  CHECK(lines[7] == "synthetic,avg,1.25,0.9,repeat_last,7");
}

// ---- forecast CSV -----------------------------------------------------------------

TEST_CASE("forecast csv is long-form with an optional truth column") {
  ForecastResult forecast;
  forecast.predictions = Tensor::from({2, 2}, {1.5f, 2.5f, -1.0f, -2.0f});
  std::vector<int64_t> stamps = {days_from_civil(2018, 1, 1) * 86400,
                                 days_from_civil(2018, 1, 1) * 86400 + 3600};

  const std::string bare = scratch("forecast.csv");
  write_forecast_csv(bare, "m.json", {"alpha", "beta"}, stamps, forecast);
  auto lines = lines_of(read_file(bare));
  REQUIRE(lines.size() == 6);
  CHECK(lines[1] == "timestamp,variate,y_pred");
  CHECK(lines[2] == "2018-01-01 00:00:00,alpha,1.5");
  CHECK(lines[3] == "2018-01-01 00:00:00,beta,-1");
  CHECK(lines[4] == "2018-01-01 01:00:00,alpha,2.5");
  CHECK(lines[5] == "2018-01-01 01:00:00,beta,-2");

  forecast.truth = Tensor::from({2, 2}, {1.0f, 2.0f, -1.0f, -2.0f});
  const std::string with_truth = scratch("forecast_truth.csv");
  write_forecast_csv(with_truth, "m.json", {"alpha", "beta"}, stamps, forecast);
  lines = lines_of(read_file(with_truth));
  CHECK(lines[1] == "timestamp,variate,y_true,y_pred");
  CHECK(lines[2] == "2018-01-01 00:00:00,alpha,1,1.5");

  std::vector<int64_t> short_stamps = {stamps[0]};
  CHECK_THROWS_AS(write_forecast_csv(scratch("bad.csv"), "m.json", {"alpha", "beta"},
                                     short_stamps, forecast),
                  Error);
}

// ---- SVG --------------------------------------------------------------------------

TEST_CASE("forecast svg is a self-contained plot with one polyline per series") {
  const std::string path = scratch("plot.svg");
  write_forecast_svg(path, "variate <OT> & friends", {1.0, 2.0, 3.0}, {3.5, 4.0},
                     {3.4, 4.2});
  const std::string svg = read_file(path);
  CHECK(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\"") == 0);
  CHECK(svg.find("variate &lt;OT&gt; &amp; friends") != std::string::npos);
  size_t count = 0;
  for (size_t at = svg.find("<polyline"); at != std::string::npos;
       at = svg.find("<polyline", at + 1))
    ++count;
  CHECK(count == 3);
  CHECK(svg.find("</svg>") != std::string::npos);

  // Truthless plots drop that polyline.
  write_forecast_svg(path, "bare", {1.0, 2.0}, {}, {2.5});
  const std::string bare = read_file(path);
  count = 0;
  for (size_t at = bare.find("<polyline"); at != std::string::npos;
       at = bare.find("<polyline", at + 1))
    ++count;
  CHECK(count == 2);

  // A constant series must not divide by a zero range.
  write_forecast_svg(path, "flat", {}, {}, {1.0, 1.0, 1.0});
  CHECK(read_file(path).find("<polyline") != std::string::npos);
}

// ---- checkpoints ------------------------------------------------------------------

TEST_CASE("sidecar path swaps the extension") {
  CHECK(sidecar_path("run/model.moht") == "run/model.json");
  CHECK(sidecar_path("model.moht") == "model.json");
  CHECK(sidecar_path("run.v2/model") == "run.v2/model.json");
  CHECK(sidecar_path("model") == "model.json");
}

TEST_CASE("checkpoints round trip parameters, config, scaler, and covariates") {
  Checkpoint original;
  original.config = small_config();
  original.covariates = CovariateSpec::none();
  original.covariates.hour_of_day = true;
  original.covariates.day_of_week = true;
  original.scaler.mean = {1.5, -2.25};
  original.scaler.std = {3.0, 0.5};
  original.params = init_params<float>(original.config, 99);
  original.dataset = "synthetic";
  original.seed = 99;

  const std::string path = scratch("model.moht");
  save_checkpoint(path, original);
  CHECK(std::filesystem::exists(scratch("model.json")));

  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.dataset == "synthetic");
  CHECK(loaded.seed == 99);
  CHECK(loaded.config.d_model == original.config.d_model);
  CHECK(loaded.config.variates == 2);
  CHECK(loaded.config.covariates == 2);
  CHECK(loaded.covariates.hour_of_day);
  CHECK(loaded.covariates.day_of_week);
  CHECK_FALSE(loaded.covariates.minute_of_hour);
  REQUIRE(loaded.scaler.mean.size() == 2);
  CHECK(loaded.scaler.mean[0] == doctest::Approx(1.5).epsilon(1e-7));
  CHECK(loaded.scaler.std[1] == doctest::Approx(0.5).epsilon(1e-7));

  auto original_named = original.params.named();
  auto loaded_named = loaded.params.named();
  REQUIRE(original_named.size() == loaded_named.size());
  for (size_t i = 0; i < original_named.size(); ++i) {
    CHECK(original_named[i].first == loaded_named[i].first);
    for (int64_t j = 0; j < original_named[i].second->size(); ++j)
      CHECK(original_named[i].second->data()[j] == loaded_named[i].second->data()[j]);
  }
}

TEST_CASE("checkpoint loading errors name the offending file") {
  // Corrupted magic.
  const std::string bad = scratch("bad.moht");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "XXXXGARBAGE";
  }
  {
    std::ofstream out(scratch("bad.json"));
    Checkpoint stub;
    stub.config = small_config();
    out << R"({"format": "mohets-checkpoint", "model": )" << config_to_json(stub.config)
        << "}";
  }
  try {
    load_checkpoint(bad);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::data);
    CHECK(std::string(e.what()).find("bad.moht") != std::string::npos);
  }

  // Missing sidecar.
  try {
    load_checkpoint(scratch("absent.moht"));
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
    CHECK(std::string(e.what()).find("absent.json") != std::string::npos);
  }

  // Sidecar that is not a checkpoint.
  const std::string wrong = scratch("wrong.moht");
  {
    std::ofstream out(scratch("wrong.json"));
    out << R"({"hello": "world"})";
  }
  {
    std::ofstream out(wrong, std::ios::binary);
    out << "MOHT";
  }
  try {
    load_checkpoint(wrong);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::data);
    CHECK(std::string(e.what()).find("wrong.json") != std::string::npos);
  }
}

TEST_CASE("checkpoint loading rejects a snapshot that disagrees with its config") {
  Checkpoint checkpoint;
  checkpoint.config = small_config();
  checkpoint.covariates = CovariateSpec::none();
  checkpoint.covariates.hour_of_day = true;
  checkpoint.covariates.day_of_week = true;
  checkpoint.scaler.mean = {0.0, 0.0};
  checkpoint.scaler.std = {1.0, 1.0};
  checkpoint.params = init_params<float>(checkpoint.config, 1);
  const std::string path = scratch("mismatch.moht");
  save_checkpoint(path, checkpoint);

  // Rewrite the sidecar with a different width: every matrix shape now lies.
  ModelConfig wider = small_config();
  wider.d_model = 32;
  wider.d_ff = 64;
  {
    std::ofstream out(scratch("mismatch.json"));
    out << R"({"format": "mohets-checkpoint", "model": )" << config_to_json(wider) << "}";
  }
  try {
    load_checkpoint(path);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::data);
    CHECK(std::string(e.what()).find("wrong shape") != std::string::npos);
  }
}

// ---- synthetic data ---------------------------------------------------------------

TEST_CASE("synthetic frames are deterministic, seeded, and hourly by default") {
  TimeSeriesFrame a = synthetic_frame(500, 3, 42);
  TimeSeriesFrame b = synthetic_frame(500, 3, 42);
  TimeSeriesFrame c = synthetic_frame(500, 3, 43);

  CHECK(a.variates() == 3);
  CHECK(a.length() == 500);
  CHECK(a.frequency_seconds == 3600);
  CHECK(a.timestamps[1] - a.timestamps[0] == 3600);
  CHECK(a.variate_names[2] == "v2");

  bool identical = true, different = false;
  for (int64_t i = 0; i < a.values.size(); ++i) {
    identical = identical && a.values.data()[i] == b.values.data()[i];
    different = different || a.values.data()[i] != c.values.data()[i];
  }
  CHECK(identical);
  CHECK(different);

  // Values stay in a sane band (bounded components + small noise).
  for (int64_t i = 0; i < a.values.size(); ++i) {
    CHECK(a.values.data()[i] > -6.0f);
    CHECK(a.values.data()[i] < 6.0f);
  }

  // Variates are distinct mixtures, not copies.
  bool rows_differ = false;
  for (int64_t t = 0; t < 500 && !rows_differ; ++t)
    rows_differ = a.values.data()[t] != a.values.data()[500 + t];
  CHECK(rows_differ);

  CHECK_THROWS_AS(synthetic_frame(1, 1, 0), Error);
  CHECK_THROWS_AS(synthetic_frame(100, 0, 0), Error);
}

TEST_CASE("write_csv round trips through load_csv") {
  TimeSeriesFrame frame = synthetic_frame(200, 2, 7);
  const std::string path = scratch("series.csv");
  write_csv(path, frame);

  TimeSeriesFrame back = load_csv(path);
  CHECK(back.variates() == 2);
  CHECK(back.length() == 200);
  CHECK(back.frequency_seconds == 3600);
  CHECK(back.variate_names == frame.variate_names);
  CHECK(back.timestamps == frame.timestamps);
  for (int64_t i = 0; i < frame.values.size(); ++i)
    CHECK(back.values.data()[i] == frame.values.data()[i]);  // %.9g is float-exact
}

TEST_CASE("dataset names come from the path basename") {
  CHECK(dataset_name_from_path("data/ETTh1.csv") == "ETTh1");
  CHECK(dataset_name_from_path("/a/b/weather.csv") == "weather");
  CHECK(dataset_name_from_path("electricity") == "electricity");
  CHECK(dataset_name_from_path("dir.with.dots/traffic.csv") == "traffic");
}
