#include "mmpfn/optim.hpp"

#include <cmath>

#include "mmpfn/error.hpp"

namespace mmpfn {

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [n, C]");
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " is outside [0, " + std::to_string(c) + ")");
    }
  }
  auto z = logits.values();
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * c;
    double top = row[0];
    for (std::size_t k = 1; k < c; ++k) top = std::max(top, row[k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      probs[i * c + k] = std::exp(row[k] - top);
      denom += probs[i * c + k];
    }
    for (std::size_t k = 0; k < c; ++k) probs[i * c + k] /= denom;
    total += std::log(denom) + top - row[labels[i]];
  }
  Tensor loss = Tensor::scalar(total / static_cast<double>(n));
  if (should_record({&logits})) {
    std::vector<std::size_t> y(labels.begin(), labels.end());
    GradTape::active()->record({logits}, loss, [logits, loss, probs = std::move(probs), y = std::move(y), n, c]() {
      const double g = loss.grad()[0] / static_cast<double>(n);
      auto gz = logits.mutable_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
          gz[i * c + k] += g * (probs[i * c + k] - (k == y[i] ? 1.0 : 0.0));
        }
      }
    });
  }
  return loss;
}

OptimizerState OptimizerState::create(const ParamList& params, const AdamWConfig& config) {
  OptimizerState state;
  state.config = config;
  for (const NamedTensor& p : params) {
    state.first_moment.emplace_back(p.tensor.size(), 0.0);
    state.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
  return state;
}

void adamw_step(const ParamList& params, OptimizerState& state, double lr) {
  if (params.size() != state.first_moment.size()) {
    throw StateError("adamw_step: optimizer state was built for " +
                     std::to_string(state.first_moment.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.size() != state.first_moment[i].size()) {
      throw ShapeError("adamw_step: moment buffer shape mismatch for '" + params[i].name + "'");
    }
    if (!params[i].tensor.has_grad()) continue;
    for (double g : params[i].tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adamw_step: non-finite gradient in '" + params[i].name + "'");
      }
    }
  }
  const AdamWConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor param = params[i].tensor;
    auto theta = param.mutable_values();
    const bool has_grad = param.has_grad();
    std::span<const double> grad = has_grad ? param.grad() : std::span<const double>{};
    std::vector<double>& m = state.first_moment[i];
    std::vector<double>& v = state.second_moment[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = has_grad ? grad[j] : 0.0;
      theta[j] -= lr * c.weight_decay * theta[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
    param.zero_grad();
  }
}

}  // namespace mmpfn
