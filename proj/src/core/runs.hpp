#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/infer.hpp"
#include "core/model.hpp"
#include "core/timeseries.hpp"
#include "core/train.hpp"

namespace mohets {

// ---- run manifests ---------------------------------------------------------------

// Library version string baked into manifests and checkpoints.
const char* code_version();

// Everything needed to reproduce an artifact-producing run: the command, the
// fully resolved configuration (JSON object text), the seed, and what was
// written where.  Exactly one manifest per run.
struct RunManifest {
  std::string command;
  std::string config_json = "{}";  // resolved model + train + data + flag values
  uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> timings_seconds;
  std::vector<std::string> output_paths;
};

std::string manifest_to_json(const RunManifest& manifest);
void write_manifest(const std::string& path, const RunManifest& manifest);

// ---- CSV artifacts ---------------------------------------------------------------

// Metric table in the benchmark-table shape: one data row per horizon per
// model label plus an "avg" row per label.  Skipped horizons keep their row
// (empty metric cells) and add a warning comment.  Every CSV starts with a
// comment line naming the manifest, then the header row.
void write_metric_csv(const std::string& path, const std::string& manifest_path,
                      const std::string& dataset, uint64_t seed,
                      const std::vector<std::pair<std::string, HorizonReport>>& tables);

// Long-form forecast export: one row per (timestamp, variate).  The y_true
// column appears only when the forecast carried ground truth.
void write_forecast_csv(const std::string& path, const std::string& manifest_path,
                        const std::vector<std::string>& variate_names,
                        const std::vector<int64_t>& timestamps, const ForecastResult& forecast);

// Minimal self-contained SVG line plot for one variate: recent history, the
// forecast, and ground truth when present.
void write_forecast_svg(const std::string& path, const std::string& title,
                        const std::vector<double>& history, const std::vector<double>& truth,
                        const std::vector<double>& prediction);

// ---- checkpoints -----------------------------------------------------------------

// A trained model ready for inference: parameters plus everything the data
// pipeline needs to reproduce the training-time scaling.
struct Checkpoint {
  ModelConfig config;
  CovariateSpec covariates;
  GlobalScaler scaler;
  ModelParams params;
  std::string dataset;
  uint64_t seed = 0;
};

// Six-flag covariate spec in the checkpoint-sidecar JSON dialect.  Parsing is
// tolerant of missing keys (they keep their defaults) but rejects non-JSON.
std::string covariate_spec_to_json(const CovariateSpec& cov);
CovariateSpec covariate_spec_from_json(const std::string& json_text);

// Writes `<path>` (binary tensor snapshot: parameters + scaler) and a JSON
// sidecar next to it (same path with the extension swapped to .json) holding
// the config, covariate spec, dataset name, and seed.
void save_checkpoint(const std::string& path, Checkpoint& checkpoint);

// Loads both halves back; errors name the offending file (bad magic, missing
// sidecar, parameter/shape mismatches against the sidecar's config).
Checkpoint load_checkpoint(const std::string& path);

// `<path>` with its extension replaced by `.json` ("model.moht" -> "model.json").
std::string sidecar_path(const std::string& path);

// ---- synthetic data --------------------------------------------------------------

// Deterministic benchmark stand-in: per variate, a seeded mixture of a daily
// cycle, a weekly cycle, an incommensurate cycle, and mild noise — periodic
// structure worth learning, but nothing a period-24 repeat gets for free.
TimeSeriesFrame synthetic_frame(int64_t length, int64_t variates, uint64_t seed,
                                int64_t frequency_seconds = 3600);

// Writes a frame back to the CSV dialect load_csv reads (header + rows).
void write_csv(const std::string& path, const TimeSeriesFrame& frame);

// "data/ETTh1.csv" -> "ETTh1"; feeds default_split_for and run labeling.
std::string dataset_name_from_path(const std::string& path);

}  // namespace mohets
