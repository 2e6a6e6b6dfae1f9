#include "core/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace mohets {

namespace {
constexpr double kNormEps = 1e-5;
}

// ---- config --------------------------------------------------------------------

NormVariant norm_variant_from(const std::string& name) {
  if (name == "mixed") return NormVariant::mixed;
  if (name == "layernorm") return NormVariant::layernorm;
  if (name == "rmsnorm") return NormVariant::rmsnorm;
  fail(ErrorCode::usage, "unknown norm variant '" + name + "' (mixed, layernorm, rmsnorm)");
}

HeadVariant head_variant_from(const std::string& name) {
  if (name == "conv") return HeadVariant::conv;
  if (name == "mlp") return HeadVariant::mlp;
  fail(ErrorCode::usage, "unknown head variant '" + name + "' (conv, mlp)");
}

ExpertVariant expert_variant_from(const std::string& name) {
  if (name == "fa") return ExpertVariant::fa;
  if (name == "mlp") return ExpertVariant::mlp;
  fail(ErrorCode::usage, "unknown expert variant '" + name + "' (fa, mlp)");
}

SharedVariant shared_variant_from(const std::string& name) {
  if (name == "dwconv") return SharedVariant::dwconv;
  if (name == "conv") return SharedVariant::conv;
  if (name == "none") return SharedVariant::none;
  fail(ErrorCode::usage, "unknown shared expert variant '" + name + "' (dwconv, conv, none)");
}

std::string to_string(NormVariant v) {
  switch (v) {
    case NormVariant::mixed: return "mixed";
    case NormVariant::layernorm: return "layernorm";
    default: return "rmsnorm";
  }
}

std::string to_string(HeadVariant v) { return v == HeadVariant::conv ? "conv" : "mlp"; }

std::string to_string(ExpertVariant v) { return v == ExpertVariant::fa ? "fa" : "mlp"; }

std::string to_string(SharedVariant v) {
  switch (v) {
    case SharedVariant::dwconv: return "dwconv";
    case SharedVariant::conv: return "conv";
    default: return "none";
  }
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorCode::usage, msg); };
  check(blocks >= 1, "blocks must be >= 1");
  check(q_heads >= 1 && kv_heads >= 1, "head counts must be >= 1");
  check(q_heads % kv_heads == 0, "q_heads (" + std::to_string(q_heads) +
                                     ") must be divisible by kv_heads (" +
                                     std::to_string(kv_heads) + ")");
  check(d_model % q_heads == 0, "d_model (" + std::to_string(d_model) +
                                    ") must be divisible by q_heads (" +
                                    std::to_string(q_heads) + ")");
  check(head_dim() % 2 == 0, "head dimension (" + std::to_string(head_dim()) +
                                 ") must be even for rotary embeddings");
  check(experts >= 1 && active_experts >= 1 && active_experts <= experts,
        "need 1 <= active_experts <= experts, got " + std::to_string(active_experts) + " of " +
            std::to_string(experts));
  check(d_ff % 4 == 0, "d_ff (" + std::to_string(d_ff) + ") must be divisible by 4");
  check(d_model % 4 == 0, "d_model (" + std::to_string(d_model) + ") must be divisible by 4");
  check(patch_len >= 1 && patch_len <= lookback,
        "patch length must lie in [1, lookback=" + std::to_string(lookback) + "]");
  check(horizon >= 1 && horizon % patch_len == 0,
        "patch_len " + std::to_string(patch_len) + " must divide horizon " +
            std::to_string(horizon));
  check(decode_tokens() <= patch_count(),
        "horizon " + std::to_string(horizon) + " needs " + std::to_string(decode_tokens()) +
            " patch tokens but the look-back window only yields " +
            std::to_string(patch_count()));
  check(variates >= 1, "variates must be >= 1");
  check(covariates >= 0, "covariates must be >= 0");
  check(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  check(drop_path_max >= 0.0 && drop_path_max < 1.0, "drop_path_max must lie in [0, 1)");
  check(shared_kernel >= 1 && shared_kernel % 2 == 1, "shared_kernel must be odd");
  check(decoder_kernel >= 1 && decoder_kernel % 2 == 1, "decoder_kernel must be odd");
  check(rope_base > 1.0, "rope_base must exceed 1");
}

ModelConfig preset_config(const std::string& name) {
  ModelConfig c;
  if (name == "tiny") {
    c.blocks = 4, c.q_heads = 4, c.kv_heads = 2, c.d_model = 64;
  } else if (name == "small") {
    c.blocks = 4, c.q_heads = 4, c.kv_heads = 2, c.d_model = 128;
  } else if (name == "base") {
    c.blocks = 6, c.q_heads = 8, c.kv_heads = 4, c.d_model = 256;
  } else if (name == "large") {
    c.blocks = 8, c.q_heads = 12, c.kv_heads = 6, c.d_model = 384;
  } else {
    fail(ErrorCode::usage, "unknown preset '" + name + "' (tiny, small, base, large)");
  }
  c.experts = 8;
  c.active_experts = 2;
  c.d_ff = 2 * c.d_model;
  return c;
}

std::vector<std::string> preset_names() { return {"tiny", "small", "base", "large"}; }

std::string config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["blocks"] = c.blocks;
  j["q_heads"] = c.q_heads;
  j["kv_heads"] = c.kv_heads;
  j["experts"] = c.experts;
  j["active_experts"] = c.active_experts;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["patch_len"] = c.patch_len;
  j["horizon"] = c.horizon;
  j["lookback"] = c.lookback;
  j["variates"] = c.variates;
  j["covariates"] = c.covariates;
  j["rope_base"] = c.rope_base;
  j["dropout"] = c.dropout;
  j["drop_path_max"] = c.drop_path_max;
  j["shared_kernel"] = c.shared_kernel;
  j["decoder_kernel"] = c.decoder_kernel;
  j["norm"] = to_string(c.norm);
  j["head"] = to_string(c.head);
  j["expert"] = to_string(c.expert);
  j["shared_expert"] = to_string(c.shared_expert);
  j["rope_in_cross_attention"] = c.rope_in_cross_attention;
  return j.dump(2);
}

ModelConfig config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::usage, std::string("config is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("blocks", c.blocks);
    get("q_heads", c.q_heads);
    get("kv_heads", c.kv_heads);
    get("experts", c.experts);
    get("active_experts", c.active_experts);
    get("d_model", c.d_model);
    get("d_ff", c.d_ff);
    get("patch_len", c.patch_len);
    get("horizon", c.horizon);
    get("lookback", c.lookback);
    get("variates", c.variates);
    get("covariates", c.covariates);
    get("rope_base", c.rope_base);
    get("dropout", c.dropout);
    get("drop_path_max", c.drop_path_max);
    get("shared_kernel", c.shared_kernel);
    get("decoder_kernel", c.decoder_kernel);
    get("rope_in_cross_attention", c.rope_in_cross_attention);
    if (j.contains("norm")) c.norm = norm_variant_from(j.at("norm").get<std::string>());
    if (j.contains("head")) c.head = head_variant_from(j.at("head").get<std::string>());
    if (j.contains("expert")) c.expert = expert_variant_from(j.at("expert").get<std::string>());
    if (j.contains("shared_expert"))
      c.shared_expert = shared_variant_from(j.at("shared_expert").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::usage, std::string("config field has the wrong type: ") + e.what());
  }
  return c;
}

// ---- parameters ----------------------------------------------------------------

namespace {

// Initialization styles, dispatched per tensor when parameters are created.
enum class Init { xavier, fourier, zero, one };

template <typename T>
void fill_param(TensorT<T>& t, Init init, int64_t fan_in, int64_t fan_out, uint64_t seed,
                const std::string& name) {
  Rng rng(seed, "init/" + name);
  switch (init) {
    case Init::xavier: fill_xavier_uniform(t, fan_in, fan_out, rng); break;
    case Init::fourier: fill_normal(t, rng, 1.0); break;
    case Init::zero: fill_constant(t, T(0)); break;
    case Init::one: fill_constant(t, T(1)); break;
  }
}

}  // namespace

template <typename T>
ModelParamsT<T> init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  const int64_t d = config.d_model, ff = config.d_ff, P = config.patch_len;
  const int64_t kv = config.kv_dim(), N = config.experts;
  ModelParamsT<T> m;

  auto make = [&](Shape shape, Init init, int64_t fin, int64_t fout,
                  const std::string& name) {
    TensorT<T> t(std::move(shape), /*requires_grad=*/true);
    fill_param(t, init, fin, fout, seed, name);
    return t;
  };

  m.patch_norm_scale = make({P}, Init::one, 0, 0, "patch_embed.norm_scale");
  m.patch_embed = make({P, d}, Init::xavier, P, d, "patch_embed.weight");
  if (config.covariates_enabled()) {
    const int64_t D = config.variates, C = config.covariates;
    m.exo_norm_scale = make({P}, Init::one, 0, 0, "exo_embed.norm_scale");
    m.exo_embed = make({P, d}, Init::xavier, P, d, "exo_embed.weight");
    m.fuse_x = make({D, d}, Init::xavier, D, d, "fusion.wx");
    m.fuse_z = make({C, d}, Init::xavier, C, d, "fusion.wz");
    m.fuse_out = make({2 * d, D}, Init::xavier, 2 * d, D, "fusion.wout");
  }

  m.blocks.resize(config.blocks);
  for (int64_t b = 0; b < config.blocks; ++b) {
    std::string pre = "block" + std::to_string(b) + ".";
    auto attn = [&](const std::string& tag) {
      AttentionParamsT<T> a;
      a.norm_scale = make({d}, Init::one, 0, 0, pre + tag + ".norm_scale");
      a.wq = make({d, d}, Init::xavier, d, d, pre + tag + ".wq");
      a.bq = make({d}, Init::zero, 0, 0, pre + tag + ".bq");
      a.wk = make({d, kv}, Init::xavier, d, kv, pre + tag + ".wk");
      a.bk = make({kv}, Init::zero, 0, 0, pre + tag + ".bk");
      a.wv = make({d, kv}, Init::xavier, d, kv, pre + tag + ".wv");
      a.bv = make({kv}, Init::zero, 0, 0, pre + tag + ".bv");
      a.wo = make({d, d}, Init::xavier, d, d, pre + tag + ".wo");
      return a;
    };
    BlockParamsT<T>& blk = m.blocks[b];
    blk.self_attn = attn("attn");
    if (config.covariates_enabled()) blk.cross_attn = attn("cross");
    blk.mohe_norm_scale = make({d}, Init::one, 0, 0, pre + "mohe.norm_scale");
    blk.router = make({d, N}, Init::xavier, d, N, pre + "mohe.router");
    blk.experts.resize(N);
    for (int64_t i = 0; i < N; ++i) {
      std::string ep = pre + "mohe.expert" + std::to_string(i) + ".";
      ExpertParamsT<T>& e = blk.experts[i];
      if (config.expert == ExpertVariant::fa) {
        e.wp1 = make({d, ff / 4}, Init::fourier, 0, 0, ep + "wp1");
        e.wpbar1 = make({d, ff / 2}, Init::fourier, 0, 0, ep + "wpbar1");
        e.bpbar1 = make({ff / 2}, Init::zero, 0, 0, ep + "bpbar1");
        e.wp2 = make({ff, d / 4}, Init::fourier, 0, 0, ep + "wp2");
        e.wpbar2 = make({ff, d / 2}, Init::fourier, 0, 0, ep + "wpbar2");
        e.bpbar2 = make({d / 2}, Init::zero, 0, 0, ep + "bpbar2");
      } else {
        e.w1 = make({d, ff}, Init::xavier, d, ff, ep + "w1");
        e.b1 = make({ff}, Init::zero, 0, 0, ep + "b1");
        e.w2 = make({ff, d}, Init::xavier, ff, d, ep + "w2");
        e.b2 = make({d}, Init::zero, 0, 0, ep + "b2");
      }
    }
    if (config.shared_expert_enabled()) {
      if (config.shared_expert == SharedVariant::dwconv)
        blk.shared.dw = make({d, config.shared_kernel}, Init::xavier, config.shared_kernel,
                             config.shared_kernel, pre + "mohe.shared.dw");
      blk.shared.up = make({d, ff}, Init::xavier, d, ff, pre + "mohe.shared.up");
      blk.shared.down = make({ff, d}, Init::xavier, ff, d, pre + "mohe.shared.down");
      blk.shared.gate = make({d, 1}, Init::xavier, d, 1, pre + "mohe.shared.gate");
    }
  }

  m.final_norm_scale = make({d}, Init::one, 0, 0, "final_norm.scale");
  if (config.head == HeadVariant::conv) {
    m.decoder.lin = make({d, d}, Init::xavier, d, d, "head.lin");
    m.decoder.tconv = make({d, d, P}, Init::xavier, d, d, "head.tconv");
    m.decoder.dw = make({d, config.decoder_kernel}, Init::xavier, config.decoder_kernel,
                        config.decoder_kernel, "head.dw");
    m.decoder.norm_scale = make({d}, Init::one, 0, 0, "head.norm_scale");
    m.decoder.pw1 = make({d, d / 4}, Init::xavier, d, d / 4, "head.pw1");
    m.decoder.pw2 = make({d / 4, 1}, Init::xavier, d / 4, 1, "head.pw2");
  } else {
    m.decoder.mlp = make({config.patch_count() * d, config.horizon}, Init::xavier,
                         config.patch_count() * d, config.horizon, "head.mlp");
  }
  return m;
}

template <typename T>
ModelParamsT<T> clone_params(ModelParamsT<T>& params) {
  ModelParamsT<T> out = params;  // copies structure; tensors still share storage
  for (auto& [name, tensor] : out.named()) {
    TensorT<T> fresh(tensor->shape(), /*requires_grad=*/true);
    std::copy(tensor->data(), tensor->data() + tensor->size(), fresh.data());
    *tensor = std::move(fresh);
  }
  return out;
}

template <typename T>
void copy_param_values(ModelParamsT<T>& from, ModelParamsT<T>& to) {
  auto src = from.named();
  auto dst = to.named();
  require(src.size() == dst.size(), ErrorCode::internal,
          "copy_param_values: parameter sets differ in structure");
  for (size_t i = 0; i < src.size(); ++i) {
    require(src[i].second->shape() == dst[i].second->shape(), ErrorCode::internal,
            "copy_param_values: shape mismatch at '" + src[i].first + "'");
    std::copy(src[i].second->data(), src[i].second->data() + src[i].second->size(),
              dst[i].second->data());
  }
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>*>> ModelParamsT<T>::named() {
  std::vector<std::pair<std::string, TensorT<T>*>> out;
  auto put = [&](const std::string& name, TensorT<T>& t) {
    if (t.defined()) out.emplace_back(name, &t);
  };
  put("patch_embed.norm_scale", patch_norm_scale);
  put("patch_embed.weight", patch_embed);
  put("exo_embed.norm_scale", exo_norm_scale);
  put("exo_embed.weight", exo_embed);
  put("fusion.wx", fuse_x);
  put("fusion.wz", fuse_z);
  put("fusion.wout", fuse_out);
  for (size_t b = 0; b < blocks.size(); ++b) {
    std::string pre = "block" + std::to_string(b) + ".";
    auto put_attn = [&](const std::string& tag, AttentionParamsT<T>& a) {
      put(pre + tag + ".norm_scale", a.norm_scale);
      put(pre + tag + ".wq", a.wq);
      put(pre + tag + ".bq", a.bq);
      put(pre + tag + ".wk", a.wk);
      put(pre + tag + ".bk", a.bk);
      put(pre + tag + ".wv", a.wv);
      put(pre + tag + ".bv", a.bv);
      put(pre + tag + ".wo", a.wo);
    };
    put_attn("attn", blocks[b].self_attn);
    if (blocks[b].cross_attn) put_attn("cross", *blocks[b].cross_attn);
    put(pre + "mohe.norm_scale", blocks[b].mohe_norm_scale);
    put(pre + "mohe.router", blocks[b].router);
    for (size_t i = 0; i < blocks[b].experts.size(); ++i) {
      std::string ep = pre + "mohe.expert" + std::to_string(i) + ".";
      ExpertParamsT<T>& e = blocks[b].experts[i];
      put(ep + "wp1", e.wp1);
      put(ep + "wpbar1", e.wpbar1);
      put(ep + "bpbar1", e.bpbar1);
      put(ep + "wp2", e.wp2);
      put(ep + "wpbar2", e.wpbar2);
      put(ep + "bpbar2", e.bpbar2);
      put(ep + "w1", e.w1);
      put(ep + "b1", e.b1);
      put(ep + "w2", e.w2);
      put(ep + "b2", e.b2);
    }
    put(pre + "mohe.shared.dw", blocks[b].shared.dw);
    put(pre + "mohe.shared.up", blocks[b].shared.up);
    put(pre + "mohe.shared.down", blocks[b].shared.down);
    put(pre + "mohe.shared.gate", blocks[b].shared.gate);
  }
  put("final_norm.scale", final_norm_scale);
  put("head.lin", decoder.lin);
  put("head.tconv", decoder.tconv);
  put("head.dw", decoder.dw);
  put("head.norm_scale", decoder.norm_scale);
  put("head.pw1", decoder.pw1);
  put("head.pw2", decoder.pw2);
  put("head.mlp", decoder.mlp);
  return out;
}

template <typename T>
int64_t ModelParamsT<T>::total_count() {
  int64_t n = 0;
  for (auto& [name, t] : named()) n += t->size();
  return n;
}

template <typename T>
int64_t ModelParamsT<T>::activated_count(const ModelConfig& config) {
  int64_t expert = 0;
  if (!blocks.empty() && !blocks[0].experts.empty()) {
    const ExpertParamsT<T>& e = blocks[0].experts[0];
    expert = e.wp1.size() + e.wpbar1.size() + e.bpbar1.size() + e.wp2.size() +
             e.wpbar2.size() + e.bpbar2.size() + e.w1.size() + e.b1.size() + e.w2.size() +
             e.b2.size();
  }
  return total_count() -
         config.blocks * (config.experts - config.active_experts) * expert;
}

// ---- norm sites ----------------------------------------------------------------

namespace {

// Encoder pre-norms and the final norm.
template <typename T>
TensorT<T> token_norm(const TensorT<T>& x, const TensorT<T>& scale, NormVariant v) {
  if (v == NormVariant::layernorm) return layer_norm(x, scale, T(kNormEps));
  return rms_norm(x, scale, T(kNormEps));
}

// Normalization of raw patch values before embedding.  A single-group
// normalization over one patch vector coincides with bias-free LayerNorm.
template <typename T>
TensorT<T> patch_site_norm(const TensorT<T>& x, const TensorT<T>& scale, NormVariant v) {
  if (v == NormVariant::rmsnorm) return rms_norm(x, scale, T(kNormEps));
  return layer_norm(x, scale, T(kNormEps));
}

// Decoder-side [B, C, L] normalization.
template <typename T>
TensorT<T> channel_site_norm(const TensorT<T>& x, const TensorT<T>& scale, NormVariant v) {
  switch (v) {
    case NormVariant::layernorm: return layer_norm_channels(x, scale, T(kNormEps));
    case NormVariant::rmsnorm: return rms_norm_channels(x, scale, T(kNormEps));
    default: return group_norm1(x, scale, T(kNormEps));
  }
}

}  // namespace

// ---- submodules ----------------------------------------------------------------

template <typename T>
TensorT<T> patch_embed(const TensorT<T>& patches, const TensorT<T>& norm_scale,
                       const TensorT<T>& embed, const ModelConfig& config) {
  require(patches.rank() == 3 && patches.dim(2) == config.patch_len, ErrorCode::internal,
          "patch_embed: expects [R, S, P], got " + shape_str(patches.shape()));
  const int64_t R = patches.dim(0), S = patches.dim(1), P = patches.dim(2);
  TensorT<T> flat = patches.reshape({R * S, P});
  TensorT<T> normed = patch_site_norm(flat, norm_scale, config.norm);
  return matmul(normed, embed).reshape({R, S, config.d_model});
}

template <typename T>
TensorT<T> attention_sublayer(const TensorT<T>& x, const TensorT<T>& kv_tokens,
                              const AttentionParamsT<T>& p, const ModelConfig& config,
                              double drop_path_rate, bool training, Rng& rng) {
  const bool cross = kv_tokens.defined();
  const int64_t R = x.dim(0), S = x.dim(1), d = config.d_model;
  const int64_t QH = config.q_heads, KVH = config.kv_heads, dh = config.head_dim();
  const int64_t G = QH / KVH;
  const int64_t Skv = cross ? kv_tokens.dim(1) : S;
  const bool rotate = !cross || config.rope_in_cross_attention;

  TensorT<T> qsrc = token_norm(x.reshape({R * S, d}), p.norm_scale, config.norm);
  TensorT<T> kvsrc = cross ? kv_tokens.reshape({R * Skv, d}) : qsrc;

  TensorT<T> q = add(matmul(qsrc, p.wq), p.bq)
                     .reshape({R, S, QH, dh});
  q = permute(q, {0, 2, 1, 3});  // [R, QH, S, dh]
  TensorT<T> k = add(matmul(kvsrc, p.wk), p.bk).reshape({R, Skv, KVH, dh});
  k = permute(k, {0, 2, 1, 3});  // [R, KVH, Skv, dh]
  TensorT<T> v = add(matmul(kvsrc, p.wv), p.bv).reshape({R, Skv, KVH, dh});
  v = permute(v, {0, 2, 1, 3});

  if (rotate) {
    q = rope(q, 0, config.rope_base);
    k = rope(k, 0, config.rope_base);
  }

  // Consecutive query heads share a KV head: fold the group into the sequence
  // axis so one batched matmul covers all groups.
  TensorT<T> qg = q.reshape({R * KVH, G * S, dh});
  TensorT<T> kg = k.reshape({R * KVH, Skv, dh});
  TensorT<T> vg = v.reshape({R * KVH, Skv, dh});
  TensorT<T> logits =
      mul_scalar(bmm(qg, permute(kg, {0, 2, 1})), T(1.0 / std::sqrt(double(dh))));
  TensorT<T> probs = softmax_lastdim(logits);
  probs = dropout(probs, config.dropout, rng, training);
  TensorT<T> ctx = bmm(probs, vg);  // [R*KVH, G*S, dh]

  ctx = ctx.reshape({R, KVH, G, S, dh});
  ctx = permute(ctx, {0, 3, 1, 2, 4});  // [R, S, KVH, G, dh]
  TensorT<T> out = matmul(ctx.reshape({R * S, d}), p.wo);
  out = dropout(out, config.dropout, rng, training);
  out = drop_path(out.reshape({R, S, d}), drop_path_rate, rng, training);
  return add(out, x);
}

template <typename T>
TensorT<T> gqa_self_attention(const TensorT<T>& x, const AttentionParamsT<T>& p,
                              const ModelConfig& config, double drop_path_rate, bool training,
                              Rng& rng) {
  return attention_sublayer(x, TensorT<T>(), p, config, drop_path_rate, training, rng);
}

template <typename T>
TensorT<T> cross_attention(const TensorT<T>& u, const TensorT<T>& kv_tokens,
                           const AttentionParamsT<T>& p, const ModelConfig& config,
                           double drop_path_rate, bool training, Rng& rng) {
  require(kv_tokens.defined(), ErrorCode::internal, "cross_attention: undefined kv tokens");
  return attention_sublayer(u, kv_tokens, p, config, drop_path_rate, training, rng);
}

template <typename T>
TensorT<T> fuse_covariates(const TensorT<T>& inputs, const TensorT<T>& covariates,
                           const ModelParamsT<T>& params, const ModelConfig& config) {
  const int64_t D = config.variates, C = config.covariates;
  const int64_t R = inputs.dim(0), L = inputs.dim(1);
  require(R % D == 0, ErrorCode::internal,
          "fuse_covariates: " + std::to_string(R) + " rows do not group into windows of " +
              std::to_string(D) + " variates");
  require(covariates.defined() && covariates.rank() == 3 && covariates.dim(0) == R &&
              covariates.dim(1) == C && covariates.dim(2) == L,
          ErrorCode::internal,
          "fuse_covariates: covariates must be [rows, " + std::to_string(C) + ", " +
              std::to_string(L) + "]");
  const int64_t W = R / D;

  // Endogenous path: [W, D, L] -> per-step rows [W*L, D] -> d_model.
  TensorT<T> xw = permute(inputs.reshape({W, D, L}), {0, 2, 1}).reshape({W * L, D});
  TensorT<T> xa = matmul(xw, params.fuse_x);  // [W*L, d]

  // Exogenous path: one covariate block per window (rows repeat per variate).
  TensorT<T> zw = slice(covariates.reshape({W, D, C, L}), 1, 0, 1).reshape({W, C, L});
  zw = permute(zw, {0, 2, 1}).reshape({W * L, C});
  TensorT<T> za = matmul(zw, params.fuse_z);  // [W*L, d]

  TensorT<T> fused = matmul(concat<T>({xa, za}, 1), params.fuse_out);  // [W*L, D]
  fused = permute(fused.reshape({W, L, D}), {0, 2, 1});
  return fused.reshape({R, L});
}

template <typename T>
RouterAssignmentT<T> router_topk(const TensorT<T>& x_bar, const TensorT<T>& router, int64_t K) {
  const int64_t N = router.dim(1);
  RouterAssignmentT<T> a;
  a.scores = softmax_lastdim(matmul(x_bar, router));
  TopKResult<T> top = top_k(a.scores, K);
  a.gates = top.gates;
  a.indices = std::move(top.indices);
  const int64_t M = a.scores.dim(0);
  a.selection_fraction = TensorT<T>({N});
  for (int32_t i : a.indices) a.selection_fraction.data()[i] += T(1);
  for (int64_t i = 0; i < N; ++i) a.selection_fraction.data()[i] /= T(K * M);
  return a;
}

template <typename T>
TensorT<T> fa_ffn(const TensorT<T>& x, const ExpertParamsT<T>& p, const ModelConfig& config,
                  bool training, Rng& rng) {
  auto layer = [&](const TensorT<T>& in, const TensorT<T>& wp, const TensorT<T>& wpbar,
                   const TensorT<T>& b) {
    TensorT<T> periodic = matmul(in, wp);
    TensorT<T> gated = gelu(add(matmul(in, wpbar), b));
    TensorT<T> h = concat<T>({cos(periodic), sin(periodic), gated}, 1);
    return dropout(h, config.dropout, rng, training);
  };
  TensorT<T> h = layer(x, p.wp1, p.wpbar1, p.bpbar1);
  return layer(h, p.wp2, p.wpbar2, p.bpbar2);
}

template <typename T>
TensorT<T> mlp_ffn(const TensorT<T>& x, const ExpertParamsT<T>& p, const ModelConfig& config,
                   bool training, Rng& rng) {
  TensorT<T> h = dropout(gelu(add(matmul(x, p.w1), p.b1)), config.dropout, rng, training);
  return dropout(add(matmul(h, p.w2), p.b2), config.dropout, rng, training);
}

template <typename T>
TensorT<T> dwconv_ffn(const TensorT<T>& x, const SharedExpertParamsT<T>& p,
                      const ModelConfig& config, bool training, Rng& rng) {
  TensorT<T> xc = permute(x, {0, 2, 1});  // [R, d, S]
  TensorT<T> h = depthwise_conv1d(xc, p.dw);
  h = pointwise_conv1d(h, p.up);
  h = dropout(gelu(h), config.dropout, rng, training);
  h = pointwise_conv1d(h, p.down);
  return permute(h, {0, 2, 1});
}

template <typename T>
TensorT<T> shared_ffn(const TensorT<T>& x, const SharedExpertParamsT<T>& p,
                      const ModelConfig& config, bool training, Rng& rng) {
  if (config.shared_expert == SharedVariant::dwconv) return dwconv_ffn(x, p, config, training, rng);
  require(config.shared_expert == SharedVariant::conv, ErrorCode::internal,
          "shared_ffn called without a shared expert");
  TensorT<T> xc = permute(x, {0, 2, 1});  // [R, d, S]
  TensorT<T> h = pointwise_conv1d(xc, p.up);
  h = dropout(gelu(h), config.dropout, rng, training);
  h = pointwise_conv1d(h, p.down);
  return permute(h, {0, 2, 1});
}

template <typename T>
std::pair<TensorT<T>, RouterAssignmentT<T>> mohe_forward(const TensorT<T>& v,
                                                         const BlockParamsT<T>& p,
                                                         const ModelConfig& config,
                                                         double drop_path_rate, bool training,
                                                         Rng& rng) {
  const int64_t R = v.dim(0), S = v.dim(1), d = config.d_model;
  const int64_t M = R * S, N = config.experts, K = config.active_experts;

  TensorT<T> vbar = token_norm(v.reshape({M, d}), p.mohe_norm_scale, config.norm);
  RouterAssignmentT<T> assign = router_topk(vbar, p.router, K);

  TensorT<T> mix;
  if (config.shared_expert_enabled()) {
    TensorT<T> shared =
        shared_ffn(vbar.reshape({R, S, d}), p.shared, config, training, rng).reshape({M, d});
    assign.shared_gate = sigmoid(matmul(vbar, p.shared.gate));  // [M, 1]
    mix = mul(shared, assign.shared_gate);
  }

  // Conditional dispatch: each expert sees only the rows that selected it.
  std::vector<std::vector<int64_t>> routed_rows(N);
  for (int64_t m = 0; m < M; ++m)
    for (int64_t j = 0; j < K; ++j) routed_rows[assign.indices[m * K + j]].push_back(m);

  TensorT<T> accum({M, d});
  for (int64_t i = 0; i < N; ++i) {
    const std::vector<int64_t>& rows = routed_rows[i];
    if (rows.empty()) continue;
    TensorT<T> xin = gather_rows(vbar, rows);
    TensorT<T> y = config.expert == ExpertVariant::fa
                       ? fa_ffn(xin, p.experts[i], config, training, rng)
                       : mlp_ffn(xin, p.experts[i], config, training, rng);
    TensorT<T> gate = gather_rows(slice(assign.gates, 1, i, 1), rows);  // [rows, 1]
    accum = index_add_rows(accum, rows, mul(y, gate));
  }

  TensorT<T> branch = (mix.defined() ? add(accum, mix) : accum).reshape({R, S, d});
  branch = drop_path(branch, drop_path_rate, rng, training);
  return {add(branch, v), std::move(assign)};
}

template <typename T>
TensorT<T> patch_decode(const TensorT<T>& h, const InstanceStatsT<T>& stats,
                        const ModelParamsT<T>& params, const ModelConfig& config) {
  const int64_t R = h.dim(0), S = h.dim(1), d = config.d_model;
  const int64_t So = config.decode_tokens(), Ho = config.horizon;
  TensorT<T> hn = token_norm(h.reshape({R * S, d}), params.final_norm_scale, config.norm);

  if (config.head == HeadVariant::mlp) {
    TensorT<T> pred = matmul(hn.reshape({R, S * d}), params.decoder.mlp);
    return instance_denormalize(pred, stats);
  }

  TensorT<T> mixed = matmul(hn, params.decoder.lin).reshape({R, S, d});
  TensorT<T> trailing = slice(mixed, 1, S - So, So);        // [R, So, d]
  TensorT<T> y = permute(trailing, {0, 2, 1});              // [R, d, So]
  y = transpose_conv1d(y, params.decoder.tconv);            // [R, d, Ho]
  y = depthwise_conv1d(y, params.decoder.dw);
  y = channel_site_norm(y, params.decoder.norm_scale, config.norm);
  y = gelu(pointwise_conv1d(y, params.decoder.pw1));        // [R, d/4, Ho]
  y = pointwise_conv1d(y, params.decoder.pw2);              // [R, 1, Ho]
  return instance_denormalize(y.reshape({R, Ho}), stats);
}

// ---- full model ----------------------------------------------------------------

template <typename T>
ForwardResultT<T> model_forward(const TensorT<T>& inputs, const TensorT<T>& covariates,
                                const InstanceStatsT<T>& stats, const ModelConfig& config,
                                ModelParamsT<T>& params, bool training, Rng& rng) {
  require(inputs.rank() == 2 && inputs.dim(1) == config.lookback, ErrorCode::internal,
          "model_forward: inputs must be [rows, " + std::to_string(config.lookback) +
              "], got " + shape_str(inputs.shape()));
  const int64_t B = config.blocks;

  TensorT<T> h = patch_embed(patchify(inputs, config.patch_len), params.patch_norm_scale,
                             params.patch_embed, config);

  TensorT<T> kv;
  if (config.covariates_enabled()) {
    TensorT<T> fused = fuse_covariates(inputs, covariates, params, config);
    kv = patch_embed(patchify(fused, config.patch_len), params.exo_norm_scale,
                     params.exo_embed, config);
  }

  ForwardResultT<T> result;
  result.routing.reserve(B);
  for (int64_t b = 0; b < B; ++b) {
    const double dp = B > 1 ? config.drop_path_max * double(b) / double(B - 1) : 0.0;
    const BlockParamsT<T>& blk = params.blocks[b];
    h = attention_sublayer(h, TensorT<T>(), blk.self_attn, config, dp, training, rng);
    if (kv.defined())
      h = attention_sublayer(h, kv, *blk.cross_attn, config, dp, training, rng);
    auto [next, assign] = mohe_forward(h, blk, config, dp, training, rng);
    h = next;
    result.routing.push_back(std::move(assign));
  }

  result.predictions = patch_decode(h, stats, params, config);
  return result;
}

// ---- instantiation ---------------------------------------------------------------

#define MOHETS_INSTANTIATE_MODEL(T)                                                          \
  template ModelParamsT<T> init_params<T>(const ModelConfig&, uint64_t);                     \
  template ModelParamsT<T> clone_params<T>(ModelParamsT<T>&);                               \
  template void copy_param_values<T>(ModelParamsT<T>&, ModelParamsT<T>&);                   \
  template std::vector<std::pair<std::string, TensorT<T>*>> ModelParamsT<T>::named();       \
  template int64_t ModelParamsT<T>::total_count();                                          \
  template int64_t ModelParamsT<T>::activated_count(const ModelConfig&);                    \
  template TensorT<T> patch_embed(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                  const ModelConfig&);                                       \
  template TensorT<T> attention_sublayer(const TensorT<T>&, const TensorT<T>&,              \
                                         const AttentionParamsT<T>&, const ModelConfig&,    \
                                         double, bool, Rng&);                                \
  template TensorT<T> gqa_self_attention(const TensorT<T>&, const AttentionParamsT<T>&,     \
                                         const ModelConfig&, double, bool, Rng&);            \
  template TensorT<T> cross_attention(const TensorT<T>&, const TensorT<T>&,                 \
                                      const AttentionParamsT<T>&, const ModelConfig&,       \
                                      double, bool, Rng&);                                   \
  template TensorT<T> fuse_covariates(const TensorT<T>&, const TensorT<T>&,                 \
                                      const ModelParamsT<T>&, const ModelConfig&);          \
  template RouterAssignmentT<T> router_topk(const TensorT<T>&, const TensorT<T>&, int64_t); \
  template TensorT<T> fa_ffn(const TensorT<T>&, const ExpertParamsT<T>&,                    \
                             const ModelConfig&, bool, Rng&);                                \
  template TensorT<T> mlp_ffn(const TensorT<T>&, const ExpertParamsT<T>&,                   \
                              const ModelConfig&, bool, Rng&);                               \
  template TensorT<T> dwconv_ffn(const TensorT<T>&, const SharedExpertParamsT<T>&,          \
                                 const ModelConfig&, bool, Rng&);                            \
  template TensorT<T> shared_ffn(const TensorT<T>&, const SharedExpertParamsT<T>&,          \
                                 const ModelConfig&, bool, Rng&);                            \
  template std::pair<TensorT<T>, RouterAssignmentT<T>> mohe_forward(                        \
      const TensorT<T>&, const BlockParamsT<T>&, const ModelConfig&, double, bool, Rng&);   \
  template TensorT<T> patch_decode(const TensorT<T>&, const InstanceStatsT<T>&,             \
                                   const ModelParamsT<T>&, const ModelConfig&);             \
  template ForwardResultT<T> model_forward(const TensorT<T>&, const TensorT<T>&,            \
                                           const InstanceStatsT<T>&, const ModelConfig&,    \
                                           ModelParamsT<T>&, bool, Rng&);

MOHETS_INSTANTIATE_MODEL(float)
MOHETS_INSTANTIATE_MODEL(double)

#undef MOHETS_INSTANTIATE_MODEL

}  // namespace mohets
