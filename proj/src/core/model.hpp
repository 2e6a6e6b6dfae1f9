#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core/ops.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "core/timeseries.hpp"

namespace mohets {

// Which normalization family fills each site in the network.  The default
// mixes families: patch/decoder sites run a single-group normalization over
// values, encoder pre-norms and the final norm are RMS-only.  The homogeneous
// variants replace every site with one family.
enum class NormVariant { mixed, layernorm, rmsnorm };
enum class HeadVariant { conv, mlp };

// Expert families for the MoHE ablation grid.  Routed experts are
// Fourier-augmented by default or plain two-layer MLPs (the "standard MoE"
// rows); the always-on shared expert is depthwise-convolutional by default, a
// two-pointwise-layer ConvFFN, or absent entirely.
enum class ExpertVariant { fa, mlp };
enum class SharedVariant { dwconv, conv, none };

NormVariant norm_variant_from(const std::string& name);      // "mixed" | "layernorm" | "rmsnorm"
HeadVariant head_variant_from(const std::string& name);      // "conv" | "mlp"
ExpertVariant expert_variant_from(const std::string& name);  // "fa" | "mlp"
SharedVariant shared_variant_from(const std::string& name);  // "dwconv" | "conv" | "none"
std::string to_string(NormVariant v);
std::string to_string(HeadVariant v);
std::string to_string(ExpertVariant v);
std::string to_string(SharedVariant v);

struct ModelConfig {
  int64_t blocks = 4;
  int64_t q_heads = 4;
  int64_t kv_heads = 2;
  int64_t experts = 8;          // N routed experts
  int64_t active_experts = 2;   // K
  int64_t d_model = 64;
  int64_t d_ff = 128;           // 2 * d_model unless overridden
  int64_t patch_len = 8;        // P
  int64_t horizon = 24;         // H_o, the native output resolution
  int64_t lookback = 672;       // L
  int64_t variates = 7;         // D, from the dataset
  int64_t covariates = 6;       // C; 0 disables the exogenous path entirely
  double rope_base = 10000.0;
  double dropout = 0.2;
  double drop_path_max = 0.3;
  int64_t shared_kernel = 3;    // MoHE shared-expert depthwise width
  int64_t decoder_kernel = 7;   // decoder depthwise width
  NormVariant norm = NormVariant::mixed;
  HeadVariant head = HeadVariant::conv;
  ExpertVariant expert = ExpertVariant::fa;
  SharedVariant shared_expert = SharedVariant::dwconv;
  bool rope_in_cross_attention = true;

  int64_t head_dim() const { return d_model / q_heads; }
  int64_t kv_dim() const { return kv_heads * head_dim(); }
  int64_t patch_count() const { return (lookback + patch_len - 1) / patch_len; }  // S
  int64_t decode_tokens() const { return horizon / patch_len; }                   // S_o
  bool covariates_enabled() const { return covariates > 0; }
  bool shared_expert_enabled() const { return shared_expert != SharedVariant::none; }

  void validate() const;  // throws ErrorCode::usage on any violated invariant
};

// Named presets from the reported model family.
ModelConfig preset_config(const std::string& name);  // tiny | small | base | large
std::vector<std::string> preset_names();

// ---- parameters ----------------------------------------------------------------

template <typename T>
struct AttentionParamsT {
  TensorT<T> norm_scale;        // pre-norm scale [d_model]
  TensorT<T> wq, bq;            // [d_model, d_model], [d_model]
  TensorT<T> wk, bk;            // [d_model, kv_dim], [kv_dim]
  TensorT<T> wv, bv;            // [d_model, kv_dim], [kv_dim]
  TensorT<T> wo;                // [d_model, d_model], bias-free
};

// Only the active family's tensors are defined; the rest stay empty and are
// skipped by named().
template <typename T>
struct ExpertParamsT {
  TensorT<T> wp1, wpbar1, bpbar1;  // FA: [d, d_ff/4], [d, d_ff/2], [d_ff/2]
  TensorT<T> wp2, wpbar2, bpbar2;  // FA: [d_ff, d/4], [d_ff, d/2], [d/2]
  TensorT<T> w1, b1;               // MLP: [d, d_ff], [d_ff]
  TensorT<T> w2, b2;               // MLP: [d_ff, d], [d]
};

// `dw` is defined only under the depthwise variant; every field stays empty
// when the model drops the shared expert.
template <typename T>
struct SharedExpertParamsT {
  TensorT<T> dw;    // depthwise kernel [d_model, shared_kernel]
  TensorT<T> up;    // pointwise [d_model, d_ff]
  TensorT<T> down;  // pointwise [d_ff, d_model]
  TensorT<T> gate;  // scalar gate projection [d_model, 1]
};

template <typename T>
struct BlockParamsT {
  AttentionParamsT<T> self_attn;
  std::optional<AttentionParamsT<T>> cross_attn;  // present iff covariates enabled
  TensorT<T> mohe_norm_scale;                     // [d_model]
  TensorT<T> router;                              // W^b [d_model, N]
  std::vector<ExpertParamsT<T>> experts;          // N
  SharedExpertParamsT<T> shared;
};

template <typename T>
struct DecoderParamsT {
  TensorT<T> lin;         // [d_model, d_model]
  TensorT<T> tconv;       // [d_model, d_model, P]
  TensorT<T> dw;          // [d_model, decoder_kernel]
  TensorT<T> norm_scale;  // [d_model]
  TensorT<T> pw1;         // [d_model, d_model/4]
  TensorT<T> pw2;         // [d_model/4, 1]
  TensorT<T> mlp;         // [S * d_model, H_o]; only under the mlp head
};

template <typename T>
struct ModelParamsT {
  TensorT<T> patch_norm_scale;  // [P]
  TensorT<T> patch_embed;       // [P, d_model]
  TensorT<T> exo_norm_scale;    // [P], dedicated exogenous embedding
  TensorT<T> exo_embed;         // [P, d_model]
  TensorT<T> fuse_x;            // [D, d_model]
  TensorT<T> fuse_z;            // [C, d_model]
  TensorT<T> fuse_out;          // [2 * d_model, D]
  std::vector<BlockParamsT<T>> blocks;
  TensorT<T> final_norm_scale;  // [d_model]
  DecoderParamsT<T> decoder;

  // Stable enumeration: iteration order is the optimizer-state and snapshot
  // order.  Names are dotted paths ("block2.mohe.expert5.wp1").
  std::vector<std::pair<std::string, TensorT<T>*>> named();
  int64_t total_count();
  int64_t activated_count(const ModelConfig& config);
};

// Fresh parameters: Fourier-layer matrices from a standard normal, all other
// matrices Xavier-uniform, biases zero, norm scales one.  Every tensor is
// created with a gradient buffer.
template <typename T>
ModelParamsT<T> init_params(const ModelConfig& config, uint64_t seed);

// Deep copy with fresh storage for every tensor (snapshots must not alias the
// live parameters).
template <typename T>
ModelParamsT<T> clone_params(ModelParamsT<T>& params);

// Copies values tensor-by-tensor between two structurally identical parameter
// sets, leaving destination identity (and any optimizer state keyed to it)
// intact.
template <typename T>
void copy_param_values(ModelParamsT<T>& from, ModelParamsT<T>& to);

// ---- routing -------------------------------------------------------------------

template <typename T>
struct RouterAssignmentT {
  TensorT<T> scores;              // [M, N] full softmax rows
  TensorT<T> gates;               // [M, N], exactly K nonzero per row (raw scores)
  std::vector<int32_t> indices;   // [M * K] selected experts, score-descending
  TensorT<T> shared_gate;         // [M, 1] sigmoid gate; empty without a shared expert
  TensorT<T> selection_fraction;  // [N] constant f_i = selections / (K * M)

  TensorT<T> mean_score() const { return mean_axis0(scores); }  // r_i, differentiable
};

// softmax(x_bar @ router) masked to its top K entries per row.
template <typename T>
RouterAssignmentT<T> router_topk(const TensorT<T>& x_bar, const TensorT<T>& router, int64_t K);

// ---- submodules ----------------------------------------------------------------
//
// All take batched inputs [R, S, d_model]; the spec's per-variate S x d_model
// view is the R = 1 case.  `training` gates dropout/DropPath; rng draws masks.

template <typename T>
TensorT<T> patch_embed(const TensorT<T>& patches,  // [R, S, P]
                       const TensorT<T>& norm_scale, const TensorT<T>& embed,
                       const ModelConfig& config);

// Pre-norm residual attention sub-layer (self when kv_tokens is empty):
// x + Dropout(W_o(GQA(RoPE(q), RoPE(k), v))) with DropPath on the branch.
template <typename T>
TensorT<T> attention_sublayer(const TensorT<T>& x, const TensorT<T>& kv_tokens,
                              const AttentionParamsT<T>& p, const ModelConfig& config,
                              double drop_path_rate, bool training, Rng& rng);

template <typename T>
TensorT<T> gqa_self_attention(const TensorT<T>& x, const AttentionParamsT<T>& p,
                              const ModelConfig& config, double drop_path_rate, bool training,
                              Rng& rng);

template <typename T>
TensorT<T> cross_attention(const TensorT<T>& u, const TensorT<T>& kv_tokens,
                           const AttentionParamsT<T>& p, const ModelConfig& config,
                           double drop_path_rate, bool training, Rng& rng);

// Covariate enrichment over one look-back window (Eq. 8): per time step,
// project endogenous D values and exogenous C values to d_model each,
// concatenate, and project back to D.  inputs [R, L] row-grouped by window;
// covariates [R, C, L] (identical within a window's row block).
template <typename T>
TensorT<T> fuse_covariates(const TensorT<T>& inputs, const TensorT<T>& covariates,
                           const ModelParamsT<T>& params, const ModelConfig& config);

// Two stacked Fourier-augmented layers: [cos(W_p x) || sin(W_p x) || GELU(W_p_bar x + b)].
template <typename T>
TensorT<T> fa_ffn(const TensorT<T>& x, const ExpertParamsT<T>& p, const ModelConfig& config,
                  bool training, Rng& rng);

// Plain two-layer routed expert: GELU(x W1 + b1) W2 + b2, the standard-MoE
// ablation family.
template <typename T>
TensorT<T> mlp_ffn(const TensorT<T>& x, const ExpertParamsT<T>& p, const ModelConfig& config,
                   bool training, Rng& rng);

// Sequence-level shared expert: depthwise conv over patches, then a pointwise
// expansion/projection pair.
template <typename T>
TensorT<T> dwconv_ffn(const TensorT<T>& x, const SharedExpertParamsT<T>& p,
                      const ModelConfig& config, bool training, Rng& rng);

// Shared-expert dispatch on config.shared_expert: the depthwise form above or
// the two-pointwise-layer ConvFFN (no temporal mixing).  Never called when the
// config drops the shared expert.
template <typename T>
TensorT<T> shared_ffn(const TensorT<T>& x, const SharedExpertParamsT<T>& p,
                      const ModelConfig& config, bool training, Rng& rng);

// v + DropPath(shared_gate * SharedFFN(v_bar) + sum_i g_i * Expert_i(v_bar)).
// Only the K selected experts run per patch; the shared term drops out under
// SharedVariant::none.
template <typename T>
std::pair<TensorT<T>, RouterAssignmentT<T>> mohe_forward(const TensorT<T>& v,
                                                         const BlockParamsT<T>& p,
                                                         const ModelConfig& config,
                                                         double drop_path_rate, bool training,
                                                         Rng& rng);

// Final norm, linear mix, trailing-token transpose-conv decode, and instance
// denormalization back to the data scale.
template <typename T>
TensorT<T> patch_decode(const TensorT<T>& h, const InstanceStatsT<T>& stats,
                        const ModelParamsT<T>& params, const ModelConfig& config);

// ---- full model ----------------------------------------------------------------

template <typename T>
struct ForwardResultT {
  TensorT<T> predictions;  // [R, H_o], denormalized
  std::vector<RouterAssignmentT<T>> routing;  // one per block
};

template <typename T>
ForwardResultT<T> model_forward(const TensorT<T>& inputs,      // [R, L] normalized
                                const TensorT<T>& covariates,  // [R, C, L] or undefined
                                const InstanceStatsT<T>& stats, const ModelConfig& config,
                                ModelParamsT<T>& params, bool training, Rng& rng);

using AttentionParams = AttentionParamsT<float>;
using ExpertParams = ExpertParamsT<float>;
using SharedExpertParams = SharedExpertParamsT<float>;
using DecoderParams = DecoderParamsT<float>;
using BlockParams = BlockParamsT<float>;
using ModelParams = ModelParamsT<float>;
using RouterAssignment = RouterAssignmentT<float>;
using ForwardResult = ForwardResultT<float>;

// ---- config (de)serialization ----------------------------------------------------

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json_text);

}  // namespace mohets
