#include "mmpfn/projector.hpp"

#include <cmath>

#include "mmpfn/error.hpp"

namespace mmpfn {

namespace {

// Accepts cls[enc] or cls[n, enc]; returns the batched form.
Tensor as_batch(const Tensor& cls, std::size_t encoder_dim) {
  if (cls.rank() == 1 && cls.dim(0) == encoder_dim) return reshape(cls, {1, encoder_dim});
  if (cls.rank() == 2 && cls.dim(1) == encoder_dim) return cls;
  throw ShapeError("projector: embedding " + shape_string(cls.shape()) +
                   " does not match encoder dim " + std::to_string(encoder_dim));
}

// Drops the batch axis again for single-vector inputs.
Tensor unbatch_like(const Tensor& cls, const Tensor& out) {
  if (cls.rank() != 1) return out;
  return reshape(out, Shape(out.shape().begin() + 1, out.shape().end()));
}

}  // namespace

MGMParams MGMParams::create(std::size_t encoder_dim, std::size_t heads, std::size_t model_dim,
                            ParamFactory& factory, std::size_t hidden_dim) {
  if (heads == 0) throw ConfigError("MGM needs at least one head");
  MGMParams p;
  p.heads = heads;
  p.encoder_dim = encoder_dim;
  p.hidden_dim = hidden_dim == 0 ? 2 * encoder_dim : hidden_dim;
  p.model_dim = model_dim;
  p.hidden_weight = factory.uniform({heads, p.hidden_dim, encoder_dim});
  p.hidden_bias = factory.zeros({heads, p.hidden_dim});
  p.output_weight = factory.uniform({heads, 2 * model_dim, p.hidden_dim});
  p.output_bias = factory.zeros({heads, 2 * model_dim});
  return p;
}

void MGMParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".hidden_weight", hidden_weight});
  out.push_back({prefix + ".hidden_bias", hidden_bias});
  out.push_back({prefix + ".output_weight", output_weight});
  out.push_back({prefix + ".output_bias", output_bias});
}

Tensor mgm_forward(const Tensor& cls, const MGMParams& p) {
  for (double v : cls.values()) {
    if (!std::isfinite(v)) throw NumericError("mgm_forward: non-finite embedding value");
  }
  const Tensor x = as_batch(cls, p.encoder_dim);
  const Tensor h = gelu(grouped_linear(x, p.hidden_weight, p.hidden_bias));
  const Tensor tokens = glu(grouped_linear(h, p.output_weight, p.output_bias));
  return unbatch_like(cls, tokens);
}

const char* to_string(HeadOutput h) { return h == HeadOutput::gelu ? "gelu" : "identity"; }

HeadOutput head_output_from_string(const std::string& name) {
  if (name == "identity") return HeadOutput::identity;
  if (name == "gelu") return HeadOutput::gelu;
  throw ConfigError("unknown head output '" + name + "' (expected identity or gelu)");
}

MultiHeadMlpParams MultiHeadMlpParams::create(std::size_t encoder_dim, std::size_t heads,
                                              std::size_t model_dim, HeadOutput output,
                                              ParamFactory& factory, std::size_t hidden_dim) {
  if (heads == 0) throw ConfigError("multi-head MLP needs at least one head");
  MultiHeadMlpParams p;
  p.heads = heads;
  p.encoder_dim = encoder_dim;
  p.hidden_dim = hidden_dim == 0 ? 2 * encoder_dim : hidden_dim;
  p.model_dim = model_dim;
  p.output = output;
  p.hidden_weight = factory.uniform({heads, p.hidden_dim, encoder_dim});
  p.hidden_bias = factory.zeros({heads, p.hidden_dim});
  p.output_weight = factory.uniform({heads, model_dim, p.hidden_dim});
  p.output_bias = factory.zeros({heads, model_dim});
  return p;
}

void MultiHeadMlpParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".hidden_weight", hidden_weight});
  out.push_back({prefix + ".hidden_bias", hidden_bias});
  out.push_back({prefix + ".output_weight", output_weight});
  out.push_back({prefix + ".output_bias", output_bias});
}

Tensor multihead_mlp_forward(const Tensor& cls, const MultiHeadMlpParams& p) {
  const Tensor x = as_batch(cls, p.encoder_dim);
  const Tensor h = gelu(grouped_linear(x, p.hidden_weight, p.hidden_bias));
  Tensor tokens = grouped_linear(h, p.output_weight, p.output_bias);
  if (p.output == HeadOutput::gelu) tokens = gelu(tokens);
  return unbatch_like(cls, tokens);
}

CAPParams CAPParams::create(std::size_t pooled, std::size_t model_dim, std::size_t attention_heads,
                            bool residual, ParamFactory& factory) {
  if (pooled == 0) throw ConfigError("CAP needs at least one query");
  CAPParams p;
  p.pooled = pooled;
  p.queries = factory.normal({pooled, model_dim}, 1.0);
  p.attention = AttentionParams::create(model_dim, attention_heads, factory);
  p.refine = MlpParams::create(model_dim, 2 * model_dim, model_dim, Activation::gelu, residual, factory);
  return p;
}

void CAPParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".queries", queries});
  attention.collect(prefix + ".attention", out);
  refine.collect(prefix + ".refine", out);
}

Tensor cap_pool(const Tensor& tokens, const CAPParams& p, AttentionWeights* weights) {
  const bool single = tokens.rank() == 2;
  if (tokens.rank() != 2 && tokens.rank() != 3) {
    throw ShapeError("cap: tokens must be [N, d] or [n, N, d], got " + shape_string(tokens.shape()));
  }
  const std::size_t d = tokens.shape().back();
  const Tensor kv = single ? reshape(tokens, {1, tokens.dim(0), d}) : tokens;
  const Tensor q = reshape(p.queries, {1, p.pooled, d});
  const Tensor pooled = multi_head_attention(q, kv, p.attention, nullptr, weights);
  return single ? reshape(pooled, {p.pooled, d}) : pooled;
}

Tensor cap_forward(const Tensor& tokens, const CAPParams& p) {
  return mlp_block(cap_pool(tokens, p), p.refine);
}

const char* to_string(ProjectorKind k) {
  switch (k) {
    case ProjectorKind::linear:
      return "linear";
    case ProjectorKind::mlp:
      return "mlp";
    case ProjectorKind::multihead_mlp:
      return "multihead_mlp";
    case ProjectorKind::mgm:
      return "mgm";
  }
  return "?";
}

ProjectorKind projector_kind_from_string(const std::string& name) {
  if (name == "linear") return ProjectorKind::linear;
  if (name == "mlp") return ProjectorKind::mlp;
  if (name == "multihead_mlp") return ProjectorKind::multihead_mlp;
  if (name == "mgm") return ProjectorKind::mgm;
  throw ConfigError("unknown projector variant '" + name +
                    "' (expected linear, mlp, multihead_mlp or mgm)");
}

ProjectorVariant ProjectorVariant::normalized() const {
  ProjectorVariant v = *this;
  if (v.kind == ProjectorKind::linear || v.kind == ProjectorKind::mlp) v.heads = 1;
  if (v.heads == 0) throw ConfigError("projector needs N >= 1");
  if (v.cap) {
    if (v.pooled == 0) throw ConfigError("CAP needs K >= 1");
    if (v.heads < v.pooled) {
      throw ConfigError("CAP requires N >= K, got N=" + std::to_string(v.heads) +
                        " K=" + std::to_string(v.pooled));
    }
  }
  return v;
}

std::size_t ProjectorVariant::token_count() const {
  const ProjectorVariant v = normalized();
  return v.cap ? v.pooled : v.heads;
}

ModalityProjector ModalityProjector::create(const ProjectorVariant& variant, std::size_t encoder_dim,
                                            std::size_t model_dim, std::uint64_t seed) {
  ModalityProjector proj;
  proj.variant_ = variant.normalized();
  proj.encoder_dim_ = encoder_dim;
  proj.model_dim_ = model_dim;
  ParamFactory factory(seed);
  const std::size_t n = proj.variant_.heads;
  const std::size_t hidden = proj.variant_.hidden == 0 ? 2 * encoder_dim : proj.variant_.hidden;
  switch (proj.variant_.kind) {
    case ProjectorKind::linear:
      proj.linear_ = LinearParams::create(encoder_dim, model_dim, factory);
      break;
    case ProjectorKind::mlp:
      proj.mlp_ = MlpParams::create(encoder_dim, hidden, model_dim, Activation::gelu, false, factory);
      break;
    case ProjectorKind::multihead_mlp:
      proj.multihead_ =
          MultiHeadMlpParams::create(encoder_dim, n, model_dim, proj.variant_.head_output, factory, hidden);
      break;
    case ProjectorKind::mgm:
      proj.mgm_ = MGMParams::create(encoder_dim, n, model_dim, factory, hidden);
      break;
  }
  if (proj.variant_.cap) {
    proj.cap_ = CAPParams::create(proj.variant_.pooled, model_dim, proj.variant_.cap_attention_heads,
                                  proj.variant_.cap_residual, factory);
  }
  return proj;
}

Tensor ModalityProjector::head_outputs(const Tensor& cls) const {
  const Tensor x = as_batch(cls, encoder_dim_);
  const std::size_t n = x.dim(0);
  switch (variant_.kind) {
    case ProjectorKind::linear:
      return reshape(linear(x, linear_), {n, 1, model_dim_});
    case ProjectorKind::mlp:
      return reshape(mlp_block(x, mlp_), {n, 1, model_dim_});
    case ProjectorKind::multihead_mlp:
      return multihead_mlp_forward(x, multihead_);
    case ProjectorKind::mgm:
      return mgm_forward(x, mgm_);
  }
  throw ConfigError("unreachable projector kind");
}

Tensor ModalityProjector::forward(const Tensor& cls) const {
  const Tensor heads = head_outputs(cls);
  return cap_ ? cap_forward(heads, *cap_) : heads;
}

ParamList ModalityProjector::parameters(const std::string& prefix) const {
  ParamList out;
  switch (variant_.kind) {
    case ProjectorKind::linear:
      linear_.collect(prefix + ".linear", out);
      break;
    case ProjectorKind::mlp:
      mlp_.collect(prefix + ".mlp", out);
      break;
    case ProjectorKind::multihead_mlp:
      multihead_.collect(prefix + ".multihead", out);
      break;
    case ProjectorKind::mgm:
      mgm_.collect(prefix + ".mgm", out);
      break;
  }
  if (cap_) cap_->collect(prefix + ".cap", out);
  return out;
}

Tensor project_modality(const Tensor& cls, const ModalityProjector& projector) {
  return projector.forward(cls);
}

FusedTable fuse_tokens(const Tensor& tabular, std::span<const ModalityTokens> modalities) {
  std::vector<Tensor> parts;
  FusedTable fused;
  std::size_t width = 0;
  std::size_t samples = 0;
  auto append = [&](const std::string& name, const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("fuse_tokens: '" + name + "' is not [n, f, d]");
    if (parts.empty()) {
      samples = t.dim(0);
    } else if (t.dim(0) != samples) {
      throw ShapeError("fuse_tokens: '" + name + "' has " + std::to_string(t.dim(0)) +
                       " samples, expected " + std::to_string(samples));
    }
    PartitionCell cell{name, {}};
    for (std::size_t j = 0; j < t.dim(1); ++j) cell.features.push_back(width + j);
    width += t.dim(1);
    fused.partition.cells.push_back(std::move(cell));
    parts.push_back(t);
  };
  if (tabular.defined()) append("tabular", tabular);
  for (const ModalityTokens& m : modalities) append(m.name, m.tokens);
  if (parts.empty()) throw ShapeError("fuse_tokens: nothing to fuse");
  fused.tokens = parts.size() == 1 ? parts[0] : concat(parts, 1);
  return fused;
}

double orthogonality_metric(const Tensor& head_outputs) {
  const bool single = head_outputs.rank() == 2;
  if (!single && head_outputs.rank() != 3) {
    throw ShapeError("orthogonality_metric: expected [N, d] or [n, N, d]");
  }
  const std::size_t n = single ? 1 : head_outputs.dim(0);
  const std::size_t heads = head_outputs.dim(single ? 0 : 1);
  const std::size_t d = head_outputs.shape().back();
  if (heads < 2) throw ShapeError("orthogonality_metric needs N >= 2 heads");
  auto v = head_outputs.values();
  double total = 0.0;
  std::vector<double> norms(heads);
  for (std::size_t s = 0; s < n; ++s) {
    const double* base = v.data() + s * heads * d;
    for (std::size_t i = 0; i < heads; ++i) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) sq += base[i * d + k] * base[i * d + k];
      norms[i] = std::sqrt(sq);
    }
    double sample = 0.0;
    for (std::size_t i = 0; i < heads; ++i) {
      for (std::size_t j = i + 1; j < heads; ++j) {
        double cosine = 0.0;
        if (norms[i] > 0.0 && norms[j] > 0.0) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += base[i * d + k] * base[j * d + k];
          cosine = dot / (norms[i] * norms[j]);
        }
        sample += 1.0 - std::abs(cosine);
      }
    }
    total += sample / static_cast<double>(heads * (heads - 1) / 2);
  }
  return total / static_cast<double>(n);
}

}  // namespace mmpfn
