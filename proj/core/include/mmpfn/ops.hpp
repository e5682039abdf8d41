#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mmpfn/tensor.hpp"

namespace mmpfn {

// Row-major boolean matrix; true means "attention allowed".
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), cells_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { cells_[r * cols_ + c] = v ? 1 : 0; }

  friend bool operator==(const BoolMatrix&, const BoolMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

// Post-softmax attention weights laid out [batch][head][query][key].
struct AttentionWeights {
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> values;

  double at(std::size_t b, std::size_t h, std::size_t q, std::size_t k) const {
    return values[((b * heads + h) * queries + q) * keys + k];
  }
};

// Additive score applied to disallowed positions before the max-subtracted
// softmax; exp(-1e30 - max) underflows to exactly 0 in binary64.
inline constexpr double kMaskedScore = -1e30;

// Elementwise ops. `b` either has a's shape or equals a trailing suffix of it,
// in which case it is repeated along the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Independent affine map per group: weight[G, out, in], bias[G, out].
// x is either [n, in] (shared by all groups) or [n, G, in]; result [n, G, out].
Tensor grouped_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// out_j = x_j * sigmoid(x_{h+j}) over the last axis of extent 2h.
Tensor glu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// [A, B, ...] -> [B, A, ...]
Tensor transpose01(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
// Rows of table[V, ...] selected by index; result [indices.size(), ...].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

// Multi-head scaled dot-product attention over already-projected inputs.
// q[Bq, Lq, E], k[B, Lk, E], v[B, Lk, E] with E = heads * head_dim and Bq
// either B or 1 (queries shared across the batch). Scores are scaled by
// 1/sqrt(head_dim). `mask` (Lq x Lk) is shared by the batch. When `weights`
// is non-null it receives the post-softmax weights.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads, const BoolMatrix* mask = nullptr,
                            AttentionWeights* weights = nullptr);

}  // namespace mmpfn
