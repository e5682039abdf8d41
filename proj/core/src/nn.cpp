#include "mmpfn/nn.hpp"

#include <cmath>

#include "mmpfn/error.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

Tensor init_params(const InitSpec& spec, const Shape& shape) {
  Tensor t(shape, 0.0);
  if (spec.scheme == InitScheme::zeros) return t;
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.back()));
  Rng rng(spec.seed);
  for (double& v : t.mutable_values()) v = rng.uniform(-bound, bound);
  return t;
}

std::uint64_t ParamFactory::next_seed() { return derive_seed(seed_, stream_++); }

Tensor ParamFactory::uniform(const Shape& shape) {
  return init_params(InitSpec{InitScheme::scaled_uniform, next_seed()}, shape);
}

Tensor ParamFactory::normal(const Shape& shape, double stddev) {
  Tensor t(shape, 0.0);
  Rng rng(next_seed());
  for (double& v : t.mutable_values()) v = stddev * rng.normal();
  return t;
}

LinearParams LinearParams::create(std::size_t in_dim, std::size_t out_dim, ParamFactory& factory) {
  return LinearParams{factory.uniform({out_dim, in_dim}), factory.zeros({out_dim})};
}

void LinearParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor linear(const Tensor& x, const LinearParams& p) { return linear(x, p.weight, p.bias); }

LayerNormParams LayerNormParams::create(std::size_t width) {
  return LayerNormParams{Tensor({width}, 1.0), Tensor({width}, 0.0)};
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

Tensor layernorm(const Tensor& x, const LayerNormParams& p) {
  return layernorm(x, p.gain, p.bias, 1e-5);
}

AttentionParams AttentionParams::create(std::size_t model_dim, std::size_t heads,
                                        ParamFactory& factory) {
  if (heads == 0 || model_dim % heads != 0) {
    throw ShapeError("attention: model dim " + std::to_string(model_dim) +
                     " is not a multiple of head count " + std::to_string(heads));
  }
  AttentionParams p;
  p.query = LinearParams::create(model_dim, model_dim, factory);
  p.key = LinearParams::create(model_dim, model_dim, factory);
  p.value = LinearParams::create(model_dim, model_dim, factory);
  p.output = LinearParams::create(model_dim, model_dim, factory);
  p.heads = heads;
  p.head_dim = model_dim / heads;
  p.model_dim = model_dim;
  return p;
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p,
                            const BoolMatrix* mask, AttentionWeights* weights) {
  const Tensor q = linear(q_in, p.query);
  const Tensor k = linear(kv_in, p.key);
  const Tensor v = linear(kv_in, p.value);
  return linear(scaled_dot_attention(q, k, v, p.heads, mask, weights), p.output);
}

const char* to_string(Activation a) { return a == Activation::glu ? "glu" : "gelu"; }

Activation activation_from_string(const std::string& name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "glu") return Activation::glu;
  throw ConfigError("unknown activation '" + name + "' (expected gelu or glu)");
}

MlpParams MlpParams::create(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
                            Activation activation, bool residual, ParamFactory& factory) {
  if (residual && in_dim != out_dim) {
    throw ShapeError("mlp: residual connection needs in_dim == out_dim");
  }
  const std::size_t first_out = activation == Activation::glu ? 2 * hidden_dim : hidden_dim;
  return MlpParams{LinearParams::create(in_dim, first_out, factory),
                   LinearParams::create(hidden_dim, out_dim, factory), activation, residual};
}

void MlpParams::collect(const std::string& prefix, ParamList& out) const {
  hidden.collect(prefix + ".hidden", out);
  output.collect(prefix + ".output", out);
}

Tensor mlp_block(const Tensor& x, const MlpParams& p) {
  Tensor h = linear(x, p.hidden);
  h = p.activation == Activation::glu ? glu(h) : gelu(h);
  Tensor y = linear(h, p.output);
  return p.residual ? add(x, y) : y;
}

}  // namespace mmpfn
