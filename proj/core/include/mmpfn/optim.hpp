#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmpfn/nn.hpp"

namespace mmpfn {

// Mean over rows of -log softmax(logits)[label]. logits is [n, C].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Moment buffers are keyed by position in the parameter list they were
// created for; step counts completed updates.
struct OptimizerState {
  AdamWConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  static OptimizerState create(const ParamList& params, const AdamWConfig& config = {});
};

// One AdamW update from the accumulated gradients, which are then cleared.
// Decay is decoupled: theta <- theta - lr * lambda * theta, then the
// bias-corrected adaptive step. A parameter without a gradient is treated as
// having a zero gradient. Non-finite gradients throw NumericError naming the
// parameter.
void adamw_step(const ParamList& params, OptimizerState& state, double lr);

}  // namespace mmpfn
