// Implementation of the public C interface (include/mohets/mohets.h) over the
// core library.  Every entry point converts exceptions into status codes and
// keeps the message in thread-local storage for mohets_last_error().

#include "mohets/mohets.h"

#include <json.hpp>

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "core/error.hpp"
#include "core/gradcheck.hpp"
#include "core/infer.hpp"
#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/runs.hpp"
#include "core/tensor.hpp"
#include "core/timeseries.hpp"
#include "core/train.hpp"

using nlohmann::json;

struct mohets_dataset {
  mohets::TimeSeriesFrame frame;
  std::string name;
};

struct mohets_model {
  mohets::Checkpoint checkpoint;
};

namespace {

using namespace mohets;
namespace fs = std::filesystem;

thread_local std::string t_last_error;

int status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage: return MOHETS_ERR_USAGE;
    case ErrorCode::data: return MOHETS_ERR_DATA;
    case ErrorCode::numeric: return MOHETS_ERR_NUMERIC;
    case ErrorCode::io: return MOHETS_ERR_IO;
    default: return MOHETS_ERR_INTERNAL;
  }
}

template <typename F>
int guarded(F&& body) noexcept {
  try {
    body();
    t_last_error.clear();
    return MOHETS_OK;
  } catch (const Error& e) {
    t_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return MOHETS_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unknown failure";
    return MOHETS_ERR_INTERNAL;
  }
}

char* copy_string(const std::string& text) {
  char* out = static_cast<char*>(std::malloc(text.size() + 1));
  require(out != nullptr, ErrorCode::internal, "out of memory");
  std::memcpy(out, text.c_str(), text.size() + 1);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---- option plumbing -------------------------------------------------------------

json parse_options(const char* options_json) {
  require(options_json != nullptr, ErrorCode::usage, "options must not be NULL");
  json opt;
  try {
    opt = json::parse(options_json);
  } catch (const json::exception& e) {
    fail(ErrorCode::usage, std::string("options are not valid JSON: ") + e.what());
  }
  require(opt.is_object(), ErrorCode::usage, "options must be a JSON object");
  return opt;
}

fs::path output_dir(const json& opt) {
  require(opt.contains("out"), ErrorCode::usage, "options need \"out\" (run directory)");
  fs::path dir = opt.at("out").get<std::string>();
  require(!dir.empty(), ErrorCode::usage, "\"out\" must not be empty");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::io,
          "cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

// Dataset per options: a CSV path under "data", else the "synthetic" recipe.
TimeSeriesFrame frame_from_options(const json& opt, uint64_t seed, std::string* name) {
  if (opt.contains("data")) {
    std::string path = opt.at("data").get<std::string>();
    *name = dataset_name_from_path(path);
    return load_csv(path);
  }
  require(opt.contains("synthetic"), ErrorCode::usage,
          "options need either \"data\" (CSV path) or \"synthetic\"");
  const json& s = opt.at("synthetic");
  require(s.is_object(), ErrorCode::usage, "\"synthetic\" must be a JSON object");
  *name = "synthetic";
  return synthetic_frame(s.value("length", int64_t{2000}), s.value("variates", int64_t{7}), seed,
                         s.value("frequency_seconds", int64_t{3600}));
}

SplitSpec split_from(const json& opt, const std::string& name, int64_t total) {
  if (!opt.contains("split")) return default_split_for(name, total);
  const json& s = opt.at("split");
  require(s.is_object(), ErrorCode::usage, "\"split\" must be a JSON object");
  SplitSpec spec;
  spec.train = s.value("train", int64_t{0});
  spec.val = s.value("val", int64_t{0});
  spec.test = s.value("test", int64_t{0});
  return spec;
}

CovariateSpec covariates_from_options(const json& opt) {
  if (!opt.contains("covariates")) return CovariateSpec{};
  return covariate_spec_from_json(opt.at("covariates").dump());
}

// Preset merged with the "model" override object.  The dataset decides the
// variate count and the covariate spec decides C; explicit conflicting
// overrides are usage errors rather than silent corrections.
ModelConfig model_config_from_options(const json& opt, int64_t data_variates,
                                      const CovariateSpec& cov) {
  ModelConfig config = preset_config(opt.value("preset", std::string{"tiny"}));
  json merged = json::parse(config_to_json(config));
  if (opt.contains("model")) {
    require(opt.at("model").is_object(), ErrorCode::usage, "\"model\" must be a JSON object");
    merged.update(opt.at("model"));
  }
  config = config_from_json(merged.dump());
  if (opt.contains("model") && opt.at("model").contains("variates") &&
      config.variates != data_variates)
    fail(ErrorCode::usage, "model override sets variates " + std::to_string(config.variates) +
                               " but the dataset has " + std::to_string(data_variates));
  config.variates = data_variates;
  config.covariates = cov.count();
  config.validate();
  return config;
}

TrainConfig train_config_from_options(const json& opt, uint64_t seed) {
  TrainConfig config;
  if (opt.contains("train")) config = train_config_from_json(opt.at("train").dump());
  config.seed = seed;  // one seed per run; the top-level option is authoritative
  config.validate();
  return config;
}

std::vector<int64_t> horizons_from_options(const json& opt) {
  if (!opt.contains("horizons")) return {96, 192, 336, 720};
  std::vector<int64_t> horizons = opt.at("horizons").get<std::vector<int64_t>>();
  require(!horizons.empty(), ErrorCode::usage, "\"horizons\" must not be empty");
  return horizons;
}

// ---- shared run pieces -----------------------------------------------------------

Tensor deep_copy(const Tensor& t) {
  Tensor out(t.shape());
  std::memcpy(out.data(), t.data(), sizeof(float) * size_t(t.size()));
  return out;
}

// The checkpoint's variate count is binding: covariate fusion (and the stored
// scaler) are shaped by D.
void require_variates_match(const Checkpoint& checkpoint, const TimeSeriesFrame& frame) {
  if (frame.variates() == checkpoint.config.variates) return;
  std::string detail = checkpoint.config.covariates_enabled()
                           ? "its covariate fusion was trained for "
                           : "its scaler was fitted for ";
  fail(ErrorCode::data, "dataset has " + std::to_string(frame.variates()) + " variates but " +
                            detail + std::to_string(checkpoint.config.variates));
}

// Last `lookback` columns of the (scaled) frame plus the timestamps covering
// them and `horizon` future steps.
std::pair<Tensor, std::vector<int64_t>> tail_window(const TimeSeriesFrame& frame,
                                                    int64_t lookback, int64_t horizon) {
  const int64_t D = frame.variates(), T = frame.length();
  require(T >= lookback, ErrorCode::data,
          "series provides " + std::to_string(T) + " points but the model's look-back needs " +
              std::to_string(lookback));
  Tensor window({D, lookback});
  for (int64_t d = 0; d < D; ++d)
    std::memcpy(window.data() + d * lookback, frame.values.data() + d * T + (T - lookback),
                sizeof(float) * size_t(lookback));
  std::vector<int64_t> timestamps(frame.timestamps.end() - lookback, frame.timestamps.end());
  std::vector<int64_t> future = future_timestamps(frame, horizon);
  timestamps.insert(timestamps.end(), future.begin(), future.end());
  return {std::move(window), std::move(timestamps)};
}

Tensor unscale_predictions(const Tensor& predictions, const GlobalScaler& scaler) {
  const int64_t D = predictions.dim(0), H = predictions.dim(1);
  Tensor out({D, H});
  for (int64_t d = 0; d < D; ++d)
    for (int64_t t = 0; t < H; ++t)
      out.data()[d * H + t] = float(unscale_value(scaler, d, double(predictions.data()[d * H + t])));
  return out;
}

json report_to_json(const HorizonReport& report) {
  json rows = json::array();
  for (const HorizonMetrics& row : report.rows)
    rows.push_back({{"horizon", row.horizon},
                    {"mse", row.mse},
                    {"mae", row.mae},
                    {"windows", row.windows},
                    {"skipped", row.skipped}});
  return {{"rows", std::move(rows)}, {"avg_mse", report.avg_mse}, {"avg_mae", report.avg_mae}};
}

int64_t fourier_param_count(ModelParams& params) {
  int64_t count = 0;
  for (auto& [name, tensor] : params.named())
    if (name.find(".wp") != std::string::npos) count += tensor->size();
  return count;
}

std::string file_safe(const std::string& name) {
  std::string out = name;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return out.empty() ? std::string{"variate"} : out;
}

// NaN is not representable in strict JSON; manifests and results carry null.
json finite_or_null(double value) { return std::isfinite(value) ? json(value) : json(nullptr); }

// ---- gradcheck op battery ----------------------------------------------------------

// Representative tensor-primitive scenarios (elementwise chains with
// broadcasting, matrix products, the convolution family, softmax and the
// moment reductions) checked before the full model; each composes several ops
// so one probe covers the whole adjoint chain.
GradCheckReport op_level_checks(uint64_t seed) {
  using DTensor = TensorT<double>;
  Rng rng(seed, "gradcheck/ops");
  auto random = [&](Shape shape, double lo = -2.0, double hi = 2.0) {
    DTensor t(shape);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
  };
  auto weighted = [](const DTensor& x, uint64_t wseed) {
    Rng wr(wseed, "gradcheck/ops/w");
    DTensor w(x.shape());
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = wr.uniform(-1.0, 1.0);
    return sum_all(mul(x, w));
  };

  GradCheckReport combined;
  combined.h = 1e-5;
  auto accumulate = [&](std::function<DTensor()> loss,
                        std::vector<std::pair<std::string, DTensor>> inputs) {
    GradCheckReport report = grad_check(loss, inputs, 4, 1e-5, seed);
    combined.probes += report.probes;
    if (report.max_rel_err > combined.max_rel_err) {
      combined.max_rel_err = report.max_rel_err;
      combined.worst = report.worst;
    }
  };

  {  // elementwise arithmetic with suffix and run broadcasting
    DTensor a = random({3, 4}), b = random({3, 4}), c = random({4}), d = random({3, 1}, 0.5, 2.5);
    accumulate([=] { return weighted(mohets::div(mul(sub(add(a, b), c), d), d), 11); },
               {{"ew.a", a}, {"ew.b", b}, {"ew.c", c}, {"ew.d", d}});
  }
  {  // smooth unary chain
    DTensor x = random({2, 6}, -1.5, 1.5);
    accumulate(
        [=] {
          return weighted(gelu(add(sigmoid(x), mul(mohets::sin(x), mohets::cos(x)))), 12);
        },
        {{"unary.x", x}});
  }
  {  // matrix products, plain and batched
    DTensor a = random({3, 4}), b = random({4, 2}), p = random({2, 3, 4}), q = random({2, 4, 2});
    accumulate([=] { return add(weighted(matmul(a, b), 13), weighted(bmm(p, q), 14)); },
               {{"mm.a", a}, {"mm.b", b}, {"bmm.p", p}, {"bmm.q", q}});
  }
  {  // softmax over logits plus the moment reductions
    DTensor x = random({3, 5});
    accumulate(
        [=] {
          return add(weighted(softmax_lastdim(x), 15),
                     add(sum_all(var_lastdim(x)), sum_all(mean_lastdim(x))));
        },
        {{"softmax.x", x}});
  }
  {  // convolution family: depthwise 'same', pointwise mix, strided transpose
    DTensor x = random({2, 3, 8});
    DTensor dw = random({3, 3});
    DTensor pw = random({3, 4});
    DTensor up = random({3, 2, 4});
    accumulate(
        [=] {
          return add(weighted(pointwise_conv1d(depthwise_conv1d(x, dw), pw), 16),
                     weighted(transpose_conv1d(x, up), 17));
        },
        {{"conv.x", x}, {"conv.dw", dw}, {"conv.pw", pw}, {"conv.up", up}});
  }
  return combined;
}

// ---- ablation variants -----------------------------------------------------------

struct AblationVariant {
  std::string label;
  ExpertVariant expert = ExpertVariant::fa;
  SharedVariant shared = SharedVariant::dwconv;
  NormVariant norm = NormVariant::mixed;
  HeadVariant head = HeadVariant::conv;
  bool covariates = true;
};

std::vector<AblationVariant> variants_for_axis(const std::string& axis) {
  std::vector<AblationVariant> out;
  auto push = [&](const std::string& label) -> AblationVariant& {
    out.push_back({});
    out.back().label = label;
    return out.back();
  };
  if (axis == "experts") {
    push("mohets");
    auto& all_mlp = push("all_mlp");
    all_mlp.expert = ExpertVariant::mlp, all_mlp.shared = SharedVariant::none;
    auto& all_fa = push("all_fa");
    all_fa.shared = SharedVariant::none;
    auto& conv_mlp = push("conv_mlp");
    conv_mlp.expert = ExpertVariant::mlp, conv_mlp.shared = SharedVariant::conv;
    auto& conv_fa = push("conv_fa");
    conv_fa.shared = SharedVariant::conv;
    auto& dwconv_mlp = push("dwconv_mlp");
    dwconv_mlp.expert = ExpertVariant::mlp;
  } else if (axis == "norm") {
    push("mixed");
    push("layernorm").norm = NormVariant::layernorm;
    push("rmsnorm").norm = NormVariant::rmsnorm;
  } else if (axis == "head") {
    push("conv_head");
    push("mlp_head").head = HeadVariant::mlp;
  } else if (axis == "covariates") {
    push("with_covariates");
    push("without_covariates").covariates = false;
  } else {
    fail(ErrorCode::usage,
         "unknown ablation axis '" + axis + "' (experts, norm, head, covariates)");
  }
  return out;
}

}  // namespace

extern "C" {

const char* mohets_version(void) { return code_version(); }

const char* mohets_last_error(void) { return t_last_error.c_str(); }

void mohets_string_free(char* text) { std::free(text); }

// ---- datasets --------------------------------------------------------------------

int mohets_dataset_open(const char* csv_path, mohets_dataset** out) {
  return guarded([&] {
    require(csv_path != nullptr && out != nullptr, ErrorCode::usage,
            "csv_path and out must not be NULL");
    auto handle = std::make_unique<mohets_dataset>();
    handle->frame = load_csv(csv_path);
    handle->name = dataset_name_from_path(csv_path);
    *out = handle.release();
  });
}

int mohets_dataset_synthetic(int64_t length, int64_t variates, uint64_t seed,
                             mohets_dataset** out) {
  return guarded([&] {
    require(out != nullptr, ErrorCode::usage, "out must not be NULL");
    auto handle = std::make_unique<mohets_dataset>();
    handle->frame = synthetic_frame(length, variates, seed);
    handle->name = "synthetic";
    *out = handle.release();
  });
}

int mohets_dataset_info(const mohets_dataset* dataset, char** info_json) {
  return guarded([&] {
    require(dataset != nullptr && info_json != nullptr, ErrorCode::usage,
            "dataset and info_json must not be NULL");
    const TimeSeriesFrame& frame = dataset->frame;
    json info{{"name", dataset->name},
              {"variates", frame.variates()},
              {"length", frame.length()},
              {"frequency_seconds", frame.frequency_seconds},
              {"variate_names", frame.variate_names},
              {"start", frame.timestamps.front()},
              {"end", frame.timestamps.back()}};
    *info_json = copy_string(info.dump(2));
  });
}

void mohets_dataset_close(mohets_dataset* dataset) { delete dataset; }

// ---- models ----------------------------------------------------------------------

int mohets_model_open(const char* checkpoint_path, mohets_model** out) {
  return guarded([&] {
    require(checkpoint_path != nullptr && out != nullptr, ErrorCode::usage,
            "checkpoint_path and out must not be NULL");
    auto handle = std::make_unique<mohets_model>();
    handle->checkpoint = load_checkpoint(checkpoint_path);
    *out = handle.release();
  });
}

int mohets_model_info(const mohets_model* model, char** info_json) {
  return guarded([&] {
    require(model != nullptr && info_json != nullptr, ErrorCode::usage,
            "model and info_json must not be NULL");
    // Parameter counting walks named(), which needs mutable access.
    Checkpoint& checkpoint = const_cast<mohets_model*>(model)->checkpoint;
    json info{{"config", json::parse(config_to_json(checkpoint.config))},
              {"covariates", json::parse(covariate_spec_to_json(checkpoint.covariates))},
              {"dataset", checkpoint.dataset},
              {"seed", checkpoint.seed},
              {"total_params", checkpoint.params.total_count()},
              {"activated_params", checkpoint.params.activated_count(checkpoint.config)}};
    *info_json = copy_string(info.dump(2));
  });
}

void mohets_model_close(mohets_model* model) { delete model; }

int mohets_forecast(mohets_model* model, const mohets_dataset* dataset, int64_t horizon,
                    int per_chunk_norm, double* predictions) {
  return guarded([&] {
    require(model != nullptr && dataset != nullptr && predictions != nullptr, ErrorCode::usage,
            "model, dataset, and predictions must not be NULL");
    require(horizon >= 1, ErrorCode::usage, "horizon must be >= 1");
    Checkpoint& checkpoint = model->checkpoint;
    require_variates_match(checkpoint, dataset->frame);

    TimeSeriesFrame scaled = dataset->frame;
    scaled.values = deep_copy(dataset->frame.values);  // the handle stays untouched
    apply_scaler(scaled, checkpoint.scaler);

    auto [window, timestamps] = tail_window(scaled, checkpoint.config.lookback, horizon);
    ForecastResult forecast = rollout(checkpoint.config, checkpoint.params, window, timestamps,
                                      checkpoint.covariates, horizon, Tensor(),
                                      per_chunk_norm != 0);
    const int64_t D = forecast.predictions.dim(0), H = forecast.predictions.dim(1);
    for (int64_t d = 0; d < D; ++d)
      for (int64_t t = 0; t < H; ++t)
        predictions[d * H + t] =
            unscale_value(checkpoint.scaler, d, double(forecast.predictions.data()[d * H + t]));
  });
}

// ---- runs ------------------------------------------------------------------------

int mohets_run_train(const char* options_json, char** result_json) {
  return guarded([&] {
    require(result_json != nullptr, ErrorCode::usage, "result_json must not be NULL");
    json opt = parse_options(options_json);
    try {
      const uint64_t seed = opt.value("seed", uint64_t{0});
      fs::path out_dir = output_dir(opt);

      std::string dataset;
      TimeSeriesFrame frame = frame_from_options(opt, seed, &dataset);
      CovariateSpec cov = covariates_from_options(opt);
      ModelConfig model_config = model_config_from_options(opt, frame.variates(), cov);
      TrainConfig train_config = train_config_from_options(opt, seed);

      SplitSpec split = split_from(opt, dataset, frame.length());
      GlobalScaler scaler = fit_scaler(frame, split.train);
      apply_scaler(frame, scaler);
      auto segments = chronological_split(frame, split, model_config.lookback);

      fs::path log_path = out_dir / "steps.jsonl";
      std::ofstream step_log(log_path);
      require(static_cast<bool>(step_log), ErrorCode::io,
              "cannot write " + log_path.string());

      auto started = std::chrono::steady_clock::now();
      TrainResult trained = train(segments[0], segments[1], model_config, train_config, cov,
                                  &step_log);
      double train_seconds = seconds_since(started);

      Checkpoint checkpoint{model_config, cov,     scaler,
                            std::move(trained.best_params), dataset, seed};
      fs::path checkpoint_path = out_dir / "model.moht";
      save_checkpoint(checkpoint_path.string(), checkpoint);

      json config{{"dataset", dataset},
                  {"source", opt.contains("data") ? opt.at("data") : json("synthetic")},
                  {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
                  {"model", json::parse(config_to_json(model_config))},
                  {"train", json::parse(train_config_to_json(train_config))},
                  {"covariates", json::parse(covariate_spec_to_json(cov))}};
      RunManifest manifest;
      manifest.command = "train";
      manifest.config_json = config.dump();
      manifest.seed = seed;
      manifest.timings_seconds = {{"train", train_seconds}};
      manifest.output_paths = {"model.moht", sidecar_path("model.moht"), "steps.jsonl"};
      write_manifest((out_dir / "manifest.json").string(), manifest);

      const TrainHistory& history = trained.history;
      json result{{"checkpoint", checkpoint_path.string()},
                  {"manifest", (out_dir / "manifest.json").string()},
                  {"best_epoch", history.best_epoch},
                  {"best_val_mse", finite_or_null(history.best_val_mse)},
                  {"epochs_run", history.epochs.size()},
                  {"steps_run", history.steps.size()},
                  {"diverged", history.diverged},
                  {"abort_reason", history.abort_reason},
                  {"total_params", checkpoint.params.total_count()},
                  {"activated_params", checkpoint.params.activated_count(model_config)},
                  {"seconds", train_seconds}};
      *result_json = copy_string(result.dump(2));
    } catch (const json::exception& e) {
      fail(ErrorCode::usage, std::string("options field has the wrong type: ") + e.what());
    }
  });
}

int mohets_run_eval(const char* options_json, char** result_json) {
  return guarded([&] {
    require(result_json != nullptr, ErrorCode::usage, "result_json must not be NULL");
    json opt = parse_options(options_json);
    try {
      fs::path out_dir = output_dir(opt);
      require(opt.contains("checkpoint"), ErrorCode::usage, "options need \"checkpoint\"");
      Checkpoint checkpoint = load_checkpoint(opt.at("checkpoint").get<std::string>());

      std::string dataset;
      TimeSeriesFrame frame = frame_from_options(opt, checkpoint.seed, &dataset);
      require_variates_match(checkpoint, frame);
      apply_scaler(frame, checkpoint.scaler);

      SplitSpec split = split_from(opt, dataset, frame.length());
      auto segments = chronological_split(frame, split, checkpoint.config.lookback);

      std::vector<int64_t> horizons = horizons_from_options(opt);
      const int64_t stride = opt.value("stride", int64_t{0});
      const bool per_chunk = opt.value("per_chunk_norm", true);
      const bool with_baselines = opt.value("baselines", true);

      auto started = std::chrono::steady_clock::now();
      HorizonReport report = evaluate_horizons(segments[2], checkpoint.config, checkpoint.params,
                                               checkpoint.covariates, horizons, stride, per_chunk);
      std::vector<std::pair<std::string, HorizonReport>> tables{{"mohets", report}};
      json baselines = nullptr;
      if (with_baselines) {
        BaselineReport base =
            naive_baselines(segments[2], checkpoint.config.lookback, horizons, stride);
        tables.emplace_back("repeat_last", base.repeat_last);
        tables.emplace_back("seasonal_naive", base.seasonal_naive);
        baselines = json{{"repeat_last", report_to_json(base.repeat_last)},
                         {"seasonal_naive", report_to_json(base.seasonal_naive)},
                         {"period", base.period}};
      }
      double eval_seconds = seconds_since(started);

      fs::path csv_path = out_dir / "metrics.csv";
      write_metric_csv(csv_path.string(), "manifest.json", dataset, checkpoint.seed, tables);

      json config{{"checkpoint", opt.at("checkpoint")},
                  {"dataset", dataset},
                  {"source", opt.contains("data") ? opt.at("data") : json("synthetic")},
                  {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
                  {"horizons", horizons},
                  {"stride", stride},
                  {"per_chunk_norm", per_chunk},
                  {"model", json::parse(config_to_json(checkpoint.config))}};
      RunManifest manifest;
      manifest.command = "eval";
      manifest.config_json = config.dump();
      manifest.seed = checkpoint.seed;
      manifest.timings_seconds = {{"eval", eval_seconds}};
      manifest.output_paths = {"metrics.csv"};
      write_manifest((out_dir / "manifest.json").string(), manifest);

      json result = report_to_json(report);
      result["metrics_csv"] = csv_path.string();
      result["manifest"] = (out_dir / "manifest.json").string();
      result["baselines"] = std::move(baselines);
      result["seconds"] = eval_seconds;
      *result_json = copy_string(result.dump(2));
    } catch (const json::exception& e) {
      fail(ErrorCode::usage, std::string("options field has the wrong type: ") + e.what());
    }
  });
}

int mohets_run_forecast(const char* options_json, char** result_json) {
  return guarded([&] {
    require(result_json != nullptr, ErrorCode::usage, "result_json must not be NULL");
    json opt = parse_options(options_json);
    try {
      fs::path out_dir = output_dir(opt);
      require(opt.contains("checkpoint"), ErrorCode::usage, "options need \"checkpoint\"");
      require(opt.contains("horizon"), ErrorCode::usage, "options need \"horizon\"");
      Checkpoint checkpoint = load_checkpoint(opt.at("checkpoint").get<std::string>());
      const int64_t horizon = opt.at("horizon").get<int64_t>();
      require(horizon >= 1, ErrorCode::usage, "horizon must be >= 1");
      const bool per_chunk = opt.value("per_chunk_norm", true);
      const bool plot = opt.value("plot", false);

      std::string dataset;
      TimeSeriesFrame frame = frame_from_options(opt, checkpoint.seed, &dataset);
      require_variates_match(checkpoint, frame);
      const TimeSeriesFrame original = frame;  // values shared, read-only from here
      frame.values = deep_copy(frame.values);
      apply_scaler(frame, checkpoint.scaler);

      auto [window, timestamps] = tail_window(frame, checkpoint.config.lookback, horizon);
      auto started = std::chrono::steady_clock::now();
      ForecastResult forecast =
          rollout(checkpoint.config, checkpoint.params, window, timestamps,
                  checkpoint.covariates, horizon, Tensor(), per_chunk);
      double forecast_seconds = seconds_since(started);
      forecast.predictions = unscale_predictions(forecast.predictions, checkpoint.scaler);

      std::vector<int64_t> future(timestamps.end() - horizon, timestamps.end());
      fs::path csv_path = out_dir / "forecast.csv";
      write_forecast_csv(csv_path.string(), "manifest.json", frame.variate_names, future,
                         forecast);

      std::vector<std::string> outputs{"forecast.csv"};
      json plots = json::array();
      if (plot) {
        const int64_t D = original.variates(), T = original.length();
        const int64_t shown = std::min<int64_t>(2 * horizon, checkpoint.config.lookback);
        for (int64_t d = 0; d < D; ++d) {
          std::vector<double> history(shown);
          for (int64_t t = 0; t < shown; ++t)
            history[t] = double(original.values.data()[d * T + (T - shown) + t]);
          std::vector<double> prediction(horizon);
          for (int64_t t = 0; t < horizon; ++t)
            prediction[t] = double(forecast.predictions.data()[d * horizon + t]);
          std::string file = "forecast_" + file_safe(original.variate_names[d]) + ".svg";
          write_forecast_svg((out_dir / file).string(), original.variate_names[d] + " forecast",
                             history, {}, prediction);
          outputs.push_back(file);
          plots.push_back((out_dir / file).string());
        }
      }

      json config{{"checkpoint", opt.at("checkpoint")},
                  {"dataset", dataset},
                  {"source", opt.contains("data") ? opt.at("data") : json("synthetic")},
                  {"horizon", horizon},
                  {"per_chunk_norm", per_chunk},
                  {"plot", plot},
                  {"model", json::parse(config_to_json(checkpoint.config))}};
      RunManifest manifest;
      manifest.command = "forecast";
      manifest.config_json = config.dump();
      manifest.seed = checkpoint.seed;
      manifest.timings_seconds = {{"forecast", forecast_seconds}};
      manifest.output_paths = outputs;
      write_manifest((out_dir / "manifest.json").string(), manifest);

      json result{{"forecast_csv", csv_path.string()},
                  {"manifest", (out_dir / "manifest.json").string()},
                  {"plots", std::move(plots)},
                  {"iterations", forecast.iterations},
                  {"seconds", forecast_seconds}};
      *result_json = copy_string(result.dump(2));
    } catch (const json::exception& e) {
      fail(ErrorCode::usage, std::string("options field has the wrong type: ") + e.what());
    }
  });
}

int mohets_run_ablate(const char* options_json, char** result_json) {
  return guarded([&] {
    require(result_json != nullptr, ErrorCode::usage, "result_json must not be NULL");
    json opt = parse_options(options_json);
    try {
      fs::path out_dir = output_dir(opt);
      require(opt.contains("axis"), ErrorCode::usage,
              "options need \"axis\" (experts, norm, head, covariates)");
      const std::string axis = opt.at("axis").get<std::string>();
      std::vector<AblationVariant> variants = variants_for_axis(axis);
      const uint64_t seed = opt.value("seed", uint64_t{0});

      std::string dataset;
      TimeSeriesFrame frame = frame_from_options(opt, seed, &dataset);
      CovariateSpec cov = covariates_from_options(opt);
      ModelConfig base_config = model_config_from_options(opt, frame.variates(), cov);
      TrainConfig train_config = train_config_from_options(opt, seed);

      SplitSpec split = split_from(opt, dataset, frame.length());
      GlobalScaler scaler = fit_scaler(frame, split.train);
      apply_scaler(frame, scaler);
      auto segments = chronological_split(frame, split, base_config.lookback);

      std::vector<int64_t> horizons = horizons_from_options(opt);
      const int64_t stride = opt.value("stride", int64_t{0});

      std::vector<std::pair<std::string, HorizonReport>> tables;
      json variant_results = json::array();
      for (const AblationVariant& variant : variants) {
        ModelConfig config = base_config;
        config.expert = variant.expert;
        config.shared_expert = variant.shared;
        config.norm = variant.norm;
        config.head = variant.head;
        CovariateSpec vcov = variant.covariates ? cov : CovariateSpec::none();
        config.covariates = vcov.count();
        config.validate();

        auto started = std::chrono::steady_clock::now();
        TrainResult trained = train(segments[0], segments[1], config, train_config, vcov);
        HorizonReport report = evaluate_horizons(segments[2], config, trained.best_params, vcov,
                                                 horizons, stride);
        double variant_seconds = seconds_since(started);

        tables.emplace_back(variant.label, report);
        variant_results.push_back(
            {{"label", variant.label},
             {"avg_mse", finite_or_null(report.avg_mse)},
             {"avg_mae", finite_or_null(report.avg_mae)},
             {"total_params", trained.best_params.total_count()},
             {"activated_params", trained.best_params.activated_count(config)},
             {"fourier_params", fourier_param_count(trained.best_params)},
             {"diverged", trained.history.diverged},
             {"seconds", variant_seconds}});
      }

      fs::path csv_path = out_dir / "ablation.csv";
      write_metric_csv(csv_path.string(), "manifest.json", dataset, seed, tables);

      json config{{"axis", axis},
                  {"dataset", dataset},
                  {"source", opt.contains("data") ? opt.at("data") : json("synthetic")},
                  {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
                  {"horizons", horizons},
                  {"stride", stride},
                  {"model", json::parse(config_to_json(base_config))},
                  {"train", json::parse(train_config_to_json(train_config))},
                  {"covariates", json::parse(covariate_spec_to_json(cov))}};
      RunManifest manifest;
      manifest.command = "ablate";
      manifest.config_json = config.dump();
      manifest.seed = seed;
      manifest.timings_seconds = {};
      for (size_t i = 0; i < variants.size(); ++i)
        manifest.timings_seconds.emplace_back(variants[i].label,
                                              variant_results[i].at("seconds").get<double>());
      manifest.output_paths = {"ablation.csv"};
      write_manifest((out_dir / "manifest.json").string(), manifest);

      json result{{"ablation_csv", csv_path.string()},
                  {"manifest", (out_dir / "manifest.json").string()},
                  {"variants", std::move(variant_results)}};
      *result_json = copy_string(result.dump(2));
    } catch (const json::exception& e) {
      fail(ErrorCode::usage, std::string("options field has the wrong type: ") + e.what());
    }
  });
}

int mohets_run_gradcheck(const char* options_json, char** result_json) {
  return guarded([&] {
    require(result_json != nullptr, ErrorCode::usage, "result_json must not be NULL");
    json opt = parse_options(options_json);
    try {
      const uint64_t seed = opt.value("seed", uint64_t{0});
      const int64_t probes_wanted = opt.value("probes", int64_t{64});
      require(probes_wanted >= 50, ErrorCode::usage, "probes must be >= 50");
      const double h = opt.value("h", 1e-5);
      require(h > 0.0, ErrorCode::usage, "h must be > 0");
      constexpr double kTolerance = 1e-4;

      // The probe model always runs one univariate row; pass "model" overrides
      // for anything else (the variate count stays pinned to 1).
      ModelConfig config = preset_config(opt.value("preset", std::string{"tiny"}));
      json merged = json::parse(config_to_json(config));
      if (opt.contains("model")) merged.update(opt.at("model"));
      config = config_from_json(merged.dump());
      config.variates = 1;
      config.dropout = 0.0;
      config.drop_path_max = 0.0;
      config.validate();

      ModelParamsT<double> params = init_params<double>(config, seed);

      Rng data_rng(seed, "gradcheck/data");
      TensorT<double> x({1, config.lookback});
      for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = data_rng.normal();
      TensorT<double> z;
      if (config.covariates_enabled()) {
        z = TensorT<double>({1, config.covariates, config.lookback});
        for (int64_t i = 0; i < z.size(); ++i) z.data()[i] = data_rng.normal() * 0.3;
      }
      InstanceStatsT<double> stats;
      stats.mean = TensorT<double>::from({1}, {0.4});
      stats.std = TensorT<double>::from({1}, {1.3});

      // A fixed random projection keeps the scalar loss sensitive to every
      // output coordinate (a plain mean would null out sign-symmetric errors).
      std::vector<double> weights(config.horizon);
      Rng weight_rng(seed, "gradcheck/loss");
      for (double& w : weights) w = weight_rng.normal();
      auto loss_fn = [&]() {
        Rng unused(0, "unused");
        TensorT<double> pred = model_forward(x, z, stats, config, params, false, unused)
                                   .predictions;
        TensorT<double> w = TensorT<double>::from({config.horizon, 1},
                                                  std::vector<double>(weights));
        return mean_all(matmul(pred, w));
      };

      // Probe the required families first (router, experts, shared gate,
      // decoder), then round out the budget across the remaining tensors.
      std::vector<std::pair<std::string, TensorT<double>>> all;
      for (auto& [name, tensor] : params.named()) all.emplace_back(name, *tensor);
      std::vector<std::pair<std::string, TensorT<double>>> chosen;
      int64_t per_tensor = 1;
      if (probes_wanted >= int64_t(all.size())) {
        chosen = all;
        per_tensor = (probes_wanted + int64_t(all.size()) - 1) / int64_t(all.size());
      } else {
        std::vector<bool> taken(all.size(), false);
        auto take_first = [&](const std::string& fragment) {
          for (size_t i = 0; i < all.size(); ++i)
            if (!taken[i] && all[i].first.find(fragment) != std::string::npos) {
              taken[i] = true;
              chosen.push_back(all[i]);
              return;
            }
        };
        for (const char* fragment : {"mohe.router", "mohe.expert", "shared.gate", "head.",
                                     "patch_embed", "fusion", ".attn", ".cross", "final_norm"})
          take_first(fragment);
        for (size_t i = 0; i < all.size() && int64_t(chosen.size()) < probes_wanted; ++i)
          if (!taken[i]) chosen.push_back(all[i]);
      }

      auto started = std::chrono::steady_clock::now();
      GradCheckReport ops = op_level_checks(seed);
      GradCheckReport report = grad_check(loss_fn, chosen, per_tensor, h, seed);
      double check_seconds = seconds_since(started);

      const bool pass = ops.pass(kTolerance) && report.pass(kTolerance);
      json result{{"pass", pass},
                  {"probes", ops.probes + report.probes},
                  {"h", report.h},
                  {"tolerance", kTolerance},
                  {"max_rel_error", std::max(ops.max_rel_err, report.max_rel_err)},
                  {"worst_parameter",
                   ops.max_rel_err > report.max_rel_err ? ops.worst : report.worst},
                  {"ops",
                   {{"probes", ops.probes},
                    {"max_rel_error", ops.max_rel_err},
                    {"worst_parameter", ops.worst}}},
                  {"model",
                   {{"probes", report.probes},
                    {"max_rel_error", report.max_rel_err},
                    {"worst_parameter", report.worst}}},
                  {"preset", opt.value("preset", std::string{"tiny"})},
                  {"seconds", check_seconds}};

      if (opt.contains("out")) {
        fs::path out_dir = output_dir(opt);
        std::ofstream report_file(out_dir / "gradcheck.json");
        require(static_cast<bool>(report_file), ErrorCode::io,
                "cannot write " + (out_dir / "gradcheck.json").string());
        report_file << result.dump(2) << "\n";

        json config_json{{"preset", opt.value("preset", std::string{"tiny"})},
                         {"probes", probes_wanted},
                         {"h", h},
                         {"model", json::parse(config_to_json(config))}};
        RunManifest manifest;
        manifest.command = "gradcheck";
        manifest.config_json = config_json.dump();
        manifest.seed = seed;
        manifest.timings_seconds = {{"gradcheck", check_seconds}};
        manifest.output_paths = {"gradcheck.json"};
        write_manifest((out_dir / "manifest.json").string(), manifest);
        result["manifest"] = (out_dir / "manifest.json").string();
      }

      *result_json = copy_string(result.dump(2));
    } catch (const json::exception& e) {
      fail(ErrorCode::usage, std::string("options field has the wrong type: ") + e.what());
    }
  });
}

}  // extern "C"
