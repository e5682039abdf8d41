#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmpfn/backbone.hpp"
#include "mmpfn/nn.hpp"

namespace mmpfn {

// Multi-head gated MLP: N independent heads, each encoder_dim -> hidden
// (GELU) -> 2d, halved by a GLU into one d-dimensional token.
struct MGMParams {
  std::size_t heads = 1;
  std::size_t encoder_dim = 1;
  std::size_t hidden_dim = 1;
  std::size_t model_dim = 1;
  Tensor hidden_weight;  // [N, hidden, encoder_dim]
  Tensor hidden_bias;    // [N, hidden]
  Tensor output_weight;  // [N, 2d, hidden]; rows [0, d) content, [d, 2d) gate
  Tensor output_bias;    // [N, 2d]

  // hidden_dim = 0 selects 2 * encoder_dim.
  static MGMParams create(std::size_t encoder_dim, std::size_t heads, std::size_t model_dim,
                          ParamFactory& factory, std::size_t hidden_dim = 0);
  void collect(const std::string& prefix, ParamList& out) const;
};

// cls[encoder_dim] -> [N, d], or cls[n, encoder_dim] -> [n, N, d].
Tensor mgm_forward(const Tensor& cls, const MGMParams& p);

enum class HeadOutput { identity, gelu };

const char* to_string(HeadOutput h);
HeadOutput head_output_from_string(const std::string& name);

// Ungated multi-head baseline: encoder_dim -> hidden (GELU) -> d per head.
// `output` = gelu applies GELU where MGM applies its GLU.
struct MultiHeadMlpParams {
  std::size_t heads = 1;
  std::size_t encoder_dim = 1;
  std::size_t hidden_dim = 1;
  std::size_t model_dim = 1;
  HeadOutput output = HeadOutput::identity;
  Tensor hidden_weight;  // [N, hidden, encoder_dim]
  Tensor hidden_bias;    // [N, hidden]
  Tensor output_weight;  // [N, d, hidden]
  Tensor output_bias;    // [N, d]

  static MultiHeadMlpParams create(std::size_t encoder_dim, std::size_t heads, std::size_t model_dim,
                                   HeadOutput output, ParamFactory& factory,
                                   std::size_t hidden_dim = 0);
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor multihead_mlp_forward(const Tensor& cls, const MultiHeadMlpParams& p);

// Cross-attention pooler: K learnable queries attend over N tokens, then a
// GELU MLP refines each pooled token (with a residual by default).
struct CAPParams {
  std::size_t pooled = 1;  // K
  Tensor queries;          // [K, d]
  AttentionParams attention;
  MlpParams refine;

  static CAPParams create(std::size_t pooled, std::size_t model_dim, std::size_t attention_heads,
                          bool residual, ParamFactory& factory);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Pre-refinement pooled tokens: tokens[N, d] -> [K, d] or [n, N, d] -> [n, K, d].
Tensor cap_pool(const Tensor& tokens, const CAPParams& p, AttentionWeights* weights = nullptr);
Tensor cap_forward(const Tensor& tokens, const CAPParams& p);

enum class ProjectorKind { linear, mlp, multihead_mlp, mgm };

const char* to_string(ProjectorKind k);
ProjectorKind projector_kind_from_string(const std::string& name);

struct ProjectorVariant {
  ProjectorKind kind = ProjectorKind::mgm;
  std::size_t heads = 1;  // N; forced to 1 for linear and mlp
  bool cap = false;
  std::size_t pooled = 1;  // K, used when cap is on
  std::size_t cap_attention_heads = 1;
  bool cap_residual = true;
  HeadOutput head_output = HeadOutput::identity;  // multihead_mlp only
  std::size_t hidden = 0;  // hidden width of mlp, multihead_mlp and mgm; 0 means 2 * encoder_dim

  // Applies the N = 1 rule and rejects cap with N < K.
  ProjectorVariant normalized() const;
  std::size_t token_count() const;

  friend bool operator==(const ProjectorVariant&, const ProjectorVariant&) = default;
};

// One modality's projector; image and text each get their own instance.
class ModalityProjector {
 public:
  static ModalityProjector create(const ProjectorVariant& variant, std::size_t encoder_dim,
                                  std::size_t model_dim, std::uint64_t seed);

  const ProjectorVariant& variant() const { return variant_; }
  std::size_t encoder_dim() const { return encoder_dim_; }
  std::size_t model_dim() const { return model_dim_; }
  std::size_t token_count() const { return variant_.token_count(); }

  // cls[n, encoder_dim] -> [n, tokens, d].
  Tensor forward(const Tensor& cls) const;
  // Tokens before pooling: [n, N, d].
  Tensor head_outputs(const Tensor& cls) const;

  ParamList parameters(const std::string& prefix) const;

  // Direct access for tests that hand-set weights.
  LinearParams& linear_params() { return linear_; }
  MlpParams& mlp_params() { return mlp_; }
  MGMParams& mgm_params() { return mgm_; }
  MultiHeadMlpParams& multihead_params() { return multihead_; }
  std::optional<CAPParams>& cap_params() { return cap_; }

 private:
  ProjectorVariant variant_;
  std::size_t encoder_dim_ = 0;
  std::size_t model_dim_ = 0;
  LinearParams linear_;
  MlpParams mlp_;
  MGMParams mgm_;
  MultiHeadMlpParams multihead_;
  std::optional<CAPParams> cap_;
};

Tensor project_modality(const Tensor& cls, const ModalityProjector& projector);

struct ModalityTokens {
  std::string name;
  Tensor tokens;  // [n, f_m, d]
};

struct FusedTable {
  Tensor tokens;  // [n, f_T + sum f_m, d]
  TokenPartition partition;
};

// Concatenates along the feature axis: tabular first (cell "tabular"), then
// modalities in the given order. `tabular` may be undefined (no tabular view).
FusedTable fuse_tokens(const Tensor& tabular, std::span<const ModalityTokens> modalities);

// Per sample, the mean over unordered head pairs of 1 - |cos(h_i, h_j)|,
// averaged over samples. A pair involving a zero vector has similarity 0.
// head_outputs is [N, d] or [n, N, d] with N >= 2.
double orthogonality_metric(const Tensor& head_outputs);

}  // namespace mmpfn
