#include "core/runs.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/snapshot.hpp"

namespace mohets {

namespace {

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot write " + path);
  return out;
}

// Shortest decimal that round-trips a double through text.
std::string number(double value) {
  if (std::isnan(value)) return "";
  char buffer[40];
  for (int precision = 9; precision <= 17; ++precision) {
    std::snprintf(buffer, sizeof(buffer), "%.*g", precision, value);
    double back = 0.0;
    std::sscanf(buffer, "%lf", &back);
    if (back == value) break;
  }
  return buffer;
}

nlohmann::json covariates_to_json(const CovariateSpec& cov) {
  return nlohmann::json{{"minute_of_hour", cov.minute_of_hour},
                        {"hour_of_day", cov.hour_of_day},
                        {"day_of_week", cov.day_of_week},
                        {"day_of_month", cov.day_of_month},
                        {"day_of_year", cov.day_of_year},
                        {"month_of_year", cov.month_of_year}};
}

CovariateSpec covariates_from_json(const nlohmann::json& j) {
  CovariateSpec cov = CovariateSpec::none();
  auto get = [&](const char* key, bool& field) {
    if (j.contains(key)) field = j.at(key).get<bool>();
  };
  get("minute_of_hour", cov.minute_of_hour);
  get("hour_of_day", cov.hour_of_day);
  get("day_of_week", cov.day_of_week);
  get("day_of_month", cov.day_of_month);
  get("day_of_year", cov.day_of_year);
  get("month_of_year", cov.month_of_year);
  return cov;
}

}  // namespace

std::string covariate_spec_to_json(const CovariateSpec& cov) {
  return covariates_to_json(cov).dump(2);
}

CovariateSpec covariate_spec_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
    return covariates_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::usage, std::string("covariate spec is not valid JSON: ") + e.what());
  }
}

// ---- run manifests ---------------------------------------------------------------

const char* code_version() { return "0.1.0"; }

std::string manifest_to_json(const RunManifest& manifest) {
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(manifest.config_json);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::internal, std::string("manifest config is not valid JSON: ") + e.what());
  }
  nlohmann::json j;
  j["command"] = manifest.command;
  j["config"] = config;
  j["seed"] = manifest.seed;
  j["code_version"] = code_version();
  nlohmann::json timings = nlohmann::json::object();
  for (const auto& [phase, seconds] : manifest.timings_seconds) timings[phase] = seconds;
  j["timings_seconds"] = timings;
  j["outputs"] = manifest.output_paths;
  return j.dump(2);
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
  std::ofstream out = open_for_write(path);
  out << manifest_to_json(manifest) << '\n';
  require(out.good(), ErrorCode::io, "cannot write " + path);
}

// ---- CSV artifacts ---------------------------------------------------------------

void write_metric_csv(const std::string& path, const std::string& manifest_path,
                      const std::string& dataset, uint64_t seed,
                      const std::vector<std::pair<std::string, HorizonReport>>& tables) {
  std::ofstream out = open_for_write(path);
  out << "# manifest: " << manifest_path << '\n';
  out << "dataset,horizon,mse,mae,model,seed\n";
  for (const auto& [label, report] : tables) {
    for (const HorizonMetrics& row : report.rows) {
      if (row.skipped)
        out << "# warning: horizon " << row.horizon << " skipped for " << label
            << " (segment too short)\n";
      out << dataset << ',' << row.horizon << ',' << number(row.mse) << ',' << number(row.mae)
          << ',' << label << ',' << seed << '\n';
    }
    out << dataset << ",avg," << number(report.avg_mse) << ',' << number(report.avg_mae) << ','
        << label << ',' << seed << '\n';
  }
  require(out.good(), ErrorCode::io, "cannot write " + path);
}

void write_forecast_csv(const std::string& path, const std::string& manifest_path,
                        const std::vector<std::string>& variate_names,
                        const std::vector<int64_t>& timestamps, const ForecastResult& forecast) {
  const int64_t variates = forecast.predictions.dim(0);
  const int64_t horizon = forecast.predictions.dim(1);
  require(static_cast<int64_t>(variate_names.size()) == variates, ErrorCode::internal,
          "forecast CSV: variate name count mismatch");
  require(static_cast<int64_t>(timestamps.size()) == horizon, ErrorCode::internal,
          "forecast CSV: timestamp count mismatch");
  const bool with_truth = forecast.truth.defined();

  std::ofstream out = open_for_write(path);
  out << "# manifest: " << manifest_path << '\n';
  out << (with_truth ? "timestamp,variate,y_true,y_pred\n" : "timestamp,variate,y_pred\n");
  for (int64_t t = 0; t < horizon; ++t) {
    const std::string stamp = format_timestamp(timestamps[static_cast<size_t>(t)]);
    for (int64_t d = 0; d < variates; ++d) {
      out << stamp << ',' << variate_names[static_cast<size_t>(d)] << ',';
      if (with_truth) out << number(double(forecast.truth.data()[d * horizon + t])) << ',';
      out << number(double(forecast.predictions.data()[d * horizon + t])) << '\n';
    }
  }
  require(out.good(), ErrorCode::io, "cannot write " + path);
}

namespace {

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

void polyline(std::ostream& out, const std::vector<double>& series, int64_t x_offset,
              double x_scale, double y_min, double y_scale, const char* style) {
  if (series.empty()) return;
  out << "  <polyline fill=\"none\" " << style << " points=\"";
  for (size_t i = 0; i < series.size(); ++i) {
    const double x = 40.0 + (double(x_offset) + double(i)) * x_scale;
    const double y = 270.0 - (series[i] - y_min) * y_scale;
    out << (i ? " " : "") << number(x) << ',' << number(y);
  }
  out << "\"/>\n";
}

}  // namespace

void write_forecast_svg(const std::string& path, const std::string& title,
                        const std::vector<double>& history, const std::vector<double>& truth,
                        const std::vector<double>& prediction) {
  require(!prediction.empty(), ErrorCode::internal, "forecast SVG: empty prediction");
  double lo = prediction.front(), hi = prediction.front();
  for (const auto* series : {&history, &truth, &prediction})
    for (double v : *series) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi - lo < 1e-9) hi = lo + 1.0;

  const int64_t points = static_cast<int64_t>(history.size() + prediction.size());
  const double x_scale = 720.0 / double(std::max<int64_t>(points - 1, 1));
  const double y_scale = 240.0 / (hi - lo);
  const int64_t origin = static_cast<int64_t>(history.size());

  std::ofstream out = open_for_write(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"300\" "
         "viewBox=\"0 0 800 300\">\n";
  out << "  <rect x=\"0\" y=\"0\" width=\"800\" height=\"300\" fill=\"white\"/>\n";
  out << "  <text x=\"40\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">"
      << escape_xml(title) << "</text>\n";
  out << "  <rect x=\"40\" y=\"30\" width=\"720\" height=\"240\" fill=\"none\" "
         "stroke=\"#cccccc\"/>\n";
  if (origin > 0) {
    const double x = 40.0 + double(origin) * x_scale;
    out << "  <line x1=\"" << number(x) << "\" y1=\"30\" x2=\"" << number(x)
        << "\" y2=\"270\" stroke=\"#cccccc\" stroke-dasharray=\"4 3\"/>\n";
  }
  polyline(out, history, 0, x_scale, lo, y_scale, "stroke=\"#888888\" stroke-width=\"1\"");
  polyline(out, truth, origin, x_scale, lo, y_scale, "stroke=\"#1f77b4\" stroke-width=\"1.5\"");
  polyline(out, prediction, origin, x_scale, lo, y_scale,
           "stroke=\"#d62728\" stroke-width=\"1.5\"");
  out << "  <text x=\"40\" y=\"290\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"#555555\">history (gray), truth (blue), forecast (red)</text>\n";
  out << "</svg>\n";
  require(out.good(), ErrorCode::io, "cannot write " + path);
}

// ---- checkpoints -----------------------------------------------------------------

std::string sidecar_path(const std::string& path) {
  const size_t slash = path.find_last_of('/');
  const size_t dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return path + ".json";
  return path.substr(0, dot) + ".json";
}

void save_checkpoint(const std::string& path, Checkpoint& checkpoint) {
  checkpoint.config.validate();
  const int64_t variates = checkpoint.config.variates;
  require(static_cast<int64_t>(checkpoint.scaler.mean.size()) == variates &&
              static_cast<int64_t>(checkpoint.scaler.std.size()) == variates,
          ErrorCode::internal, "checkpoint scaler does not match the variate count");

  std::vector<std::pair<std::string, Tensor>> tensors;
  for (auto& [name, tensor] : checkpoint.params.named()) tensors.emplace_back(name, *tensor);
  Tensor mean({variates}), std_dev({variates});
  for (int64_t d = 0; d < variates; ++d) {
    mean.data()[d] = static_cast<float>(checkpoint.scaler.mean[static_cast<size_t>(d)]);
    std_dev.data()[d] = static_cast<float>(checkpoint.scaler.std[static_cast<size_t>(d)]);
  }
  tensors.emplace_back("scaler.mean", mean);
  tensors.emplace_back("scaler.std", std_dev);
  save_snapshot(path, tensors);

  nlohmann::json sidecar;
  sidecar["format"] = "mohets-checkpoint";
  sidecar["code_version"] = code_version();
  sidecar["model"] = nlohmann::json::parse(config_to_json(checkpoint.config));
  sidecar["covariates"] = covariates_to_json(checkpoint.covariates);
  sidecar["dataset"] = checkpoint.dataset;
  sidecar["seed"] = checkpoint.seed;
  std::ofstream out = open_for_write(sidecar_path(path));
  out << sidecar.dump(2) << '\n';
  require(out.good(), ErrorCode::io, "cannot write " + sidecar_path(path));
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string meta_path = sidecar_path(path);
  std::ifstream meta(meta_path);
  require(meta.good(), ErrorCode::io, "cannot read checkpoint sidecar " + meta_path);
  std::stringstream buffer;
  buffer << meta.rdbuf();

  Checkpoint checkpoint;
  try {
    nlohmann::json sidecar = nlohmann::json::parse(buffer.str());
    require(sidecar.value("format", "") == "mohets-checkpoint", ErrorCode::data,
            meta_path + " is not a checkpoint sidecar");
    checkpoint.config = config_from_json(sidecar.at("model").dump());
    checkpoint.covariates = covariates_from_json(sidecar.value("covariates", nlohmann::json::object()));
    checkpoint.dataset = sidecar.value("dataset", "");
    checkpoint.seed = sidecar.value("seed", uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::data, meta_path + " is not a valid checkpoint sidecar: " + e.what());
  }
  checkpoint.config.validate();

  std::map<std::string, Tensor> tensors = load_snapshot(path);
  checkpoint.params = init_params<float>(checkpoint.config, 0);
  size_t consumed = 0;
  for (auto& [name, tensor] : checkpoint.params.named()) {
    auto found = tensors.find(name);
    require(found != tensors.end(), ErrorCode::data,
            path + ": missing parameter '" + name + "'");
    require(found->second.shape() == tensor->shape(), ErrorCode::data,
            path + ": parameter '" + name + "' has the wrong shape for the stored config");
    std::copy(found->second.data(), found->second.data() + found->second.size(),
              tensor->data());
    ++consumed;
  }
  for (const char* name : {"scaler.mean", "scaler.std"}) {
    auto found = tensors.find(name);
    require(found != tensors.end() && found->second.rank() == 1 &&
                found->second.dim(0) == checkpoint.config.variates,
            ErrorCode::data, path + ": missing or malformed '" + std::string(name) + "'");
    std::vector<double>& into =
        std::string(name) == "scaler.mean" ? checkpoint.scaler.mean : checkpoint.scaler.std;
    into.assign(found->second.data(), found->second.data() + found->second.size());
    ++consumed;
  }
  require(consumed == tensors.size(), ErrorCode::data,
          path + ": holds tensors the stored config does not define");
  return checkpoint;
}

// ---- synthetic data --------------------------------------------------------------

TimeSeriesFrame synthetic_frame(int64_t length, int64_t variates, uint64_t seed,
                                int64_t frequency_seconds) {
  require(length >= 2 && variates >= 1, ErrorCode::usage,
          "synthetic frame needs length >= 2 and at least one variate");
  TimeSeriesFrame frame;
  frame.frequency_seconds = frequency_seconds;
  const int64_t t0 = days_from_civil(2016, 7, 1) * 86400;
  for (int64_t t = 0; t < length; ++t) frame.timestamps.push_back(t0 + t * frequency_seconds);

  constexpr double kTau = 6.283185307179586;
  std::vector<float> values(static_cast<size_t>(variates * length));
  for (int64_t d = 0; d < variates; ++d) {
    frame.variate_names.push_back("v" + std::to_string(d));
    Rng rng(seed, "synthetic/" + std::to_string(d));
    const double level = rng.uniform(-2.0, 2.0);
    const double daily = rng.uniform(0.7, 1.2);
    const double weekly = rng.uniform(0.3, 0.6);
    const double odd = rng.uniform(0.25, 0.5);
    const double odd_period = rng.uniform(31.0, 45.0);  // incommensurate with 24
    const double phase_daily = rng.uniform(0.0, 24.0);
    const double phase_weekly = rng.uniform(0.0, 168.0);
    const double phase_odd = rng.uniform(0.0, odd_period);
    const double noise = rng.uniform(0.03, 0.08);
    for (int64_t t = 0; t < length; ++t) {
      const double x = static_cast<double>(t);
      values[static_cast<size_t>(d * length + t)] = static_cast<float>(
          level + daily * std::sin(kTau * (x + phase_daily) / 24.0) +
          weekly * std::sin(kTau * (x + phase_weekly) / 168.0) +
          odd * std::sin(kTau * (x + phase_odd) / odd_period) + noise * rng.normal());
    }
  }
  frame.values = Tensor::from({variates, length}, values);
  return frame;
}

void write_csv(const std::string& path, const TimeSeriesFrame& frame) {
  require(frame.variates() >= 1 && frame.length() >= 1, ErrorCode::internal,
          "write_csv: empty frame");
  std::ofstream out = open_for_write(path);
  out << "date";
  for (const std::string& name : frame.variate_names) out << ',' << name;
  out << '\n';
  const int64_t total = frame.length();
  for (int64_t t = 0; t < total; ++t) {
    out << format_timestamp(frame.timestamps[static_cast<size_t>(t)]);
    for (int64_t d = 0; d < frame.variates(); ++d)
      out << ',' << number(double(frame.values.data()[d * total + t]));
    out << '\n';
  }
  require(out.good(), ErrorCode::io, "cannot write " + path);
}

std::string dataset_name_from_path(const std::string& path) {
  const size_t slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  const size_t dot = base.find_last_of('.');
  if (dot != std::string::npos && dot > 0) base = base.substr(0, dot);
  return base;
}

}  // namespace mohets
