#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmpfn/ops.hpp"
#include "mmpfn/tensor.hpp"

namespace mmpfn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

enum class InitScheme { scaled_uniform, zeros };

struct InitSpec {
  InitScheme scheme = InitScheme::scaled_uniform;
  std::uint64_t seed = 0;
};

// scaled_uniform draws U(-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in the
// last extent, from Rng(spec.seed). Identical (scheme, seed, shape) give
// bit-identical tensors.
Tensor init_params(const InitSpec& spec, const Shape& shape);

// Derives one seed per created tensor from a base seed, in creation order.
class ParamFactory {
 public:
  explicit ParamFactory(std::uint64_t seed) : seed_(seed) {}

  Tensor uniform(const Shape& shape);
  Tensor normal(const Shape& shape, double stddev);
  Tensor zeros(const Shape& shape) { return Tensor(shape, 0.0); }
  Tensor ones(const Shape& shape) { return Tensor(shape, 1.0); }

 private:
  std::uint64_t next_seed();
  std::uint64_t seed_;
  std::uint64_t stream_ = 0;
};

struct LinearParams {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static LinearParams create(std::size_t in_dim, std::size_t out_dim, ParamFactory& factory);
  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor linear(const Tensor& x, const LinearParams& p);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams create(std::size_t width);
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor layernorm(const Tensor& x, const LayerNormParams& p);

struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  std::size_t model_dim = 1;

  static AttentionParams create(std::size_t model_dim, std::size_t heads, ParamFactory& factory);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Projects q_in[B|1, Lq, d] and kv_in[B, Lk, d] per head, attends under the
// optional mask (Lq x Lk, true = allowed), concatenates heads and applies the
// output projection. A query row with every key masked is rejected.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p,
                            const BoolMatrix* mask = nullptr, AttentionWeights* weights = nullptr);

enum class Activation { gelu, glu };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

// linear -> activation -> linear, optionally added back to the input.
// With glu the first linear produces 2*hidden features and the gate halves it.
struct MlpParams {
  LinearParams hidden;
  LinearParams output;
  Activation activation = Activation::gelu;
  bool residual = false;

  static MlpParams create(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
                          Activation activation, bool residual, ParamFactory& factory);
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor mlp_block(const Tensor& x, const MlpParams& p);

}  // namespace mmpfn
