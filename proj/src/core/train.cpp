#include "core/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "core/error.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"

namespace mohets {

// ---- config --------------------------------------------------------------------

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::usage, "train config: " + what);
  };
  check(max_lr >= 0.0, "max_lr must be non-negative");
  check(min_lr >= 0.0, "min_lr must be non-negative");
  check(min_lr <= max_lr, "min_lr must not exceed max_lr");
  check(weight_decay >= 0.0, "weight_decay must be non-negative");
  check(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  check(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  check(adam_eps > 0.0, "adam_eps must be positive");
  check(warmup_fraction >= 0.0 && warmup_fraction < 1.0, "warmup_fraction must lie in [0, 1)");
  check(epochs >= 1, "epochs must be at least 1");
  check(batch_size >= 1, "batch_size must be at least 1");
  check(huber_delta > 0.0, "huber_delta must be positive");
  check(balance_alpha >= 0.0, "balance_alpha must be non-negative");
  check(patience >= 1, "patience must be at least 1");
}

std::string train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["max_lr"] = c.max_lr;
  j["min_lr"] = c.min_lr;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["warmup_fraction"] = c.warmup_fraction;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["huber_delta"] = c.huber_delta;
  j["balance_alpha"] = c.balance_alpha;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["grad_clip"] = c.grad_clip;
  j["balance_mean_layers"] = c.balance_mean_layers;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::usage, std::string("train config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("max_lr", c.max_lr);
    get("min_lr", c.min_lr);
    get("weight_decay", c.weight_decay);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("warmup_fraction", c.warmup_fraction);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("huber_delta", c.huber_delta);
    get("balance_alpha", c.balance_alpha);
    get("patience", c.patience);
    get("seed", c.seed);
    get("grad_clip", c.grad_clip);
    get("balance_mean_layers", c.balance_mean_layers);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::usage, std::string("train config field has the wrong type: ") + e.what());
  }
  return c;
}

// ---- losses --------------------------------------------------------------------

Tensor balance_loss(const std::vector<RouterAssignment>& routing, bool mean_layers) {
  require(!routing.empty(), ErrorCode::internal, "balance_loss: no router assignments");
  Tensor acc;
  for (const RouterAssignment& layer : routing) {
    const int64_t experts = layer.scores.dim(1);
    Tensor term = mul_scalar(sum_all(mul(layer.mean_score(), layer.selection_fraction)),
                             static_cast<float>(experts));
    acc = acc.defined() ? add(acc, term) : term;
  }
  if (mean_layers) acc = mul_scalar(acc, 1.0f / static_cast<float>(routing.size()));
  return acc;
}

Tensor total_loss(const Tensor& pred, const Tensor& target,
                  const std::vector<RouterAssignment>& routing, const TrainConfig& config,
                  LossParts* parts) {
  Tensor huber = huber_loss(pred, target, static_cast<float>(config.huber_delta));
  Tensor total = huber;
  double balance_value = 0.0;
  if (!routing.empty()) {
    Tensor balance = balance_loss(routing, config.balance_mean_layers);
    balance_value = static_cast<double>(balance.data()[0]);
    total = add(huber, mul_scalar(balance, static_cast<float>(config.balance_alpha)));
  }
  if (parts != nullptr) {
    parts->huber = static_cast<double>(huber.data()[0]);
    parts->balance = balance_value;
    parts->total = static_cast<double>(total.data()[0]);
  }
  return total;
}

// ---- optimizer -----------------------------------------------------------------

bool decayable(const std::string& name) {
  if (name.find("norm") != std::string::npos) return false;
  const size_t dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  if (!leaf.empty() && leaf.front() == 'b') return false;  // biases (bq, bk, bv, bpbar*)
  if (leaf == "router") return false;
  return true;
}

AdamWState init_adamw(const NamedParams& params) {
  AdamWState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& [name, tensor] : params) {
    state.m.emplace_back(tensor->shape());
    state.v.emplace_back(tensor->shape());
  }
  return state;
}

double clip_gradients(const NamedParams& params, double max_norm) {
  double sum_sq = 0.0;
  for (const auto& [name, tensor] : params) {
    const float* g = tensor->grad();
    require(g != nullptr, ErrorCode::internal, "clip_gradients: '" + name + "' has no gradient");
    for (int64_t i = 0; i < tensor->size(); ++i)
      sum_sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  const double norm = std::sqrt(sum_sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (const auto& [name, tensor] : params) {
      float* g = tensor->grad();
      for (int64_t i = 0; i < tensor->size(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

void adamw_step(const NamedParams& params, AdamWState& state, double lr,
                const TrainConfig& config) {
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          ErrorCode::internal, "adamw_step: optimizer state does not match the parameter list");

  // Reject the whole step before touching anything: a single non-finite
  // gradient would otherwise poison the moment estimates for good.
  for (const auto& [name, tensor] : params) {
    const float* g = tensor->grad();
    require(g != nullptr, ErrorCode::internal, "adamw_step: '" + name + "' has no gradient");
    for (int64_t i = 0; i < tensor->size(); ++i)
      require(std::isfinite(g[i]), ErrorCode::numeric,
              "non-finite gradient in '" + name + "'; update rejected");
  }

  const int64_t t = state.step + 1;
  const double correction1 = 1.0 / (1.0 - std::pow(config.beta1, static_cast<double>(t)));
  const double correction2 = 1.0 / (1.0 - std::pow(config.beta2, static_cast<double>(t)));
  const float beta1 = static_cast<float>(config.beta1);
  const float beta2 = static_cast<float>(config.beta2);

  for (size_t k = 0; k < params.size(); ++k) {
    const auto& [name, tensor] = params[k];
    require(state.m[k].shape() == tensor->shape(), ErrorCode::internal,
            "adamw_step: state shape mismatch at '" + name + "'");
    float* p = tensor->data();
    const float* g = tensor->grad();
    float* m = state.m[k].data();
    float* v = state.v[k].data();
    const bool decay = config.weight_decay > 0.0 && decayable(name);
    const float decay_scale = static_cast<float>(lr * config.weight_decay);
    for (int64_t i = 0; i < tensor->size(); ++i) {
      if (decay) p[i] -= decay_scale * p[i];
      m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
      const double m_hat = static_cast<double>(m[i]) * correction1;
      const double v_hat = static_cast<double>(v[i]) * correction2;
      p[i] -= static_cast<float>(lr * m_hat / (std::sqrt(v_hat) + config.adam_eps));
    }
  }
  ++state.step;
}

double lr_schedule(int64_t step, int64_t total_steps, const TrainConfig& config) {
  require(total_steps >= 1, ErrorCode::internal, "lr_schedule: total_steps must be positive");
  require(step >= 0 && step <= total_steps, ErrorCode::internal,
          "lr_schedule: step outside [0, total_steps]");
  const int64_t warmup =
      static_cast<int64_t>(config.warmup_fraction * static_cast<double>(total_steps));
  if (warmup > 0 && step <= warmup)
    return config.max_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (warmup >= total_steps) return config.max_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return config.min_lr +
         0.5 * (config.max_lr - config.min_lr) * (1.0 + std::cos(progress * 3.14159265358979323846));
}

// ---- training loop ---------------------------------------------------------------

double validation_mse(const Segment& segment, const ModelConfig& model_config,
                      ModelParams& params, const CovariateSpec& cov, int64_t batch_windows) {
  const int64_t total = window_count(segment, model_config.lookback, model_config.horizon,
                                     model_config.horizon);
  require(total >= 1, ErrorCode::data, "validation segment yields no evaluation windows");
  require(batch_windows >= 1, ErrorCode::internal, "validation_mse: batch_windows must be positive");

  Rng inference_rng(0, "val");
  double sum_sq = 0.0;
  int64_t count = 0;
  for (int64_t first = 0; first < total; first += batch_windows) {
    std::vector<int64_t> subset;
    for (int64_t w = first; w < std::min(total, first + batch_windows); ++w)
      subset.push_back(w * model_config.horizon);  // re-express in stride-1 ordinals
    WindowBatch batch = make_windows(segment, model_config.lookback, model_config.horizon,
                                     /*stride=*/1, cov, subset);
    ForwardResult out = model_forward(batch.inputs, batch.covariates, batch.stats, model_config,
                                      params, /*training=*/false, inference_rng);
    const float* pred = out.predictions.data();
    const float* truth = batch.targets.data();
    for (int64_t i = 0; i < out.predictions.size(); ++i) {
      const double diff = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
      sum_sq += diff * diff;
      ++count;
    }
  }
  return sum_sq / static_cast<double>(count);
}

TrainResult train(const Segment& train_seg, const Segment& val_seg,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const CovariateSpec& cov, std::ostream* step_log) {
  model_config.validate();
  train_config.validate();
  require(cov.count() == model_config.covariates, ErrorCode::usage,
          "covariate spec provides " + std::to_string(cov.count()) +
              " components but the model expects " + std::to_string(model_config.covariates));
  require(train_seg.frame != nullptr && val_seg.frame != nullptr, ErrorCode::internal,
          "train: segments must reference a loaded frame");
  require(train_seg.frame->variates() == model_config.variates, ErrorCode::usage,
          "frame has " + std::to_string(train_seg.frame->variates()) + " variates but the model expects " +
              std::to_string(model_config.variates));

  TrainResult result;
  result.params = init_params<float>(model_config, train_config.seed);
  NamedParams named = result.params.named();
  AdamWState optimizer = init_adamw(named);

  // One window expands to one row per variate, so batches are sized in whole
  // windows: rows-per-batch stays as close to batch_size as divisibility allows.
  const int64_t variates = model_config.variates;
  const int64_t windows_per_batch =
      std::max<int64_t>(1, (train_config.batch_size + variates - 1) / variates);
  const int64_t total_windows =
      window_count(train_seg, model_config.lookback, model_config.horizon, /*stride=*/1);
  require(total_windows >= 1, ErrorCode::data, "training segment yields no windows");
  const int64_t steps_per_epoch = (total_windows + windows_per_batch - 1) / windows_per_batch;
  const int64_t total_steps = steps_per_epoch * train_config.epochs;

  ModelParams last_good = clone_params(result.params);
  result.best_params = clone_params(result.params);
  int64_t epochs_since_improve = 0;
  int64_t global_step = 0;
  bool aborted = false;

  for (int64_t epoch = 0; epoch < train_config.epochs && !aborted; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(total_windows));
    std::iota(order.begin(), order.end(), int64_t{0});
    Rng shuffle_rng(train_config.seed, "shuffle/" + std::to_string(epoch));
    for (int64_t i = total_windows - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

    for (int64_t first = 0; first < total_windows && !aborted; first += windows_per_batch) {
      const auto begin = order.begin() + first;
      const auto end = order.begin() + std::min(total_windows, first + windows_per_batch);
      std::vector<int64_t> subset(begin, end);
      WindowBatch batch = make_windows(train_seg, model_config.lookback, model_config.horizon,
                                       /*stride=*/1, cov, subset);

      ++global_step;
      StepRecord record;
      record.step = global_step;
      record.lr = lr_schedule(global_step, total_steps, train_config);

      LossParts parts;
      Tape tape;
      try {
        TapeScope scope(tape);
        for (auto& [name, tensor] : named) tensor->zero_grad();
        Rng step_rng(train_config.seed, "step/" + std::to_string(global_step));
        ForwardResult out = model_forward(batch.inputs, batch.covariates, batch.stats,
                                          model_config, result.params, /*training=*/true,
                                          step_rng);
        Tensor loss = total_loss(out.predictions, batch.targets, out.routing, train_config,
                                 &parts);
        require(std::isfinite(parts.total), ErrorCode::numeric,
                "loss became non-finite at step " + std::to_string(global_step));
        backward(loss, tape);
        if (train_config.grad_clip > 0.0) clip_gradients(named, train_config.grad_clip);
        adamw_step(named, optimizer, record.lr, train_config);

        record.expert_fraction.assign(static_cast<size_t>(model_config.experts), 0.0);
        for (const RouterAssignment& layer : out.routing) {
          const float* fraction = layer.selection_fraction.data();
          for (int64_t i = 0; i < model_config.experts; ++i)
            record.expert_fraction[static_cast<size_t>(i)] += static_cast<double>(fraction[i]);
        }
        for (double& f : record.expert_fraction)
          f /= static_cast<double>(out.routing.size());
      } catch (const Error& e) {
        if (e.code() != ErrorCode::numeric) throw;
        result.history.diverged = true;
        result.history.abort_reason = e.what();
        copy_param_values(last_good, result.params);
        aborted = true;
        break;
      }

      record.huber = parts.huber;
      record.balance = parts.balance;
      record.total = parts.total;
      if (step_log != nullptr) {
        nlohmann::json line;
        line["step"] = record.step;
        line["lr"] = record.lr;
        line["huber"] = record.huber;
        line["balance"] = record.balance;
        line["total"] = record.total;
        line["f_histogram"] = record.expert_fraction;
        *step_log << line.dump() << '\n';
      }
      result.history.steps.push_back(std::move(record));
    }
    if (aborted) break;

    EpochRecord epoch_record;
    epoch_record.epoch = epoch;
    epoch_record.val_mse = validation_mse(val_seg, model_config, result.params, cov,
                                          windows_per_batch);
    if (epoch_record.val_mse < result.history.best_val_mse) {
      epoch_record.improved = true;
      result.history.best_val_mse = epoch_record.val_mse;
      result.history.best_epoch = epoch;
      copy_param_values(result.params, result.best_params);
      epochs_since_improve = 0;
    } else {
      ++epochs_since_improve;
    }
    result.history.epochs.push_back(epoch_record);
    copy_param_values(result.params, last_good);
    if (epochs_since_improve >= train_config.patience) break;
  }

  // Until the first validation pass improves on infinity, "best" is the
  // initialization; afterwards it tracks the best-on-validation epoch.
  return result;
}

}  // namespace mohets
