#include "mmpfn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmpfn/error.hpp"

namespace mmpfn {

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  std::vector<double> analytic;
  {
    GradTape tape;
    Tensor y = f(leaf);
    tape.backward(y);
    auto g = leaf.mutable_grad();
    analytic.assign(g.begin(), g.end());
  }
  NoGradGuard no_grad;
  Tensor probe = x.clone();
  auto values = probe.mutable_values();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f(probe).item();
    values[i] = saved - h;
    const double down = f(probe).item();
    values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

double grad_check_parameters(const std::function<Tensor()>& loss, std::span<Tensor> parameters,
                             double h) {
  for (Tensor& p : parameters) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    GradTape tape;
    tape.backward(loss());
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor& p : parameters) {
    auto g = p.mutable_grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < parameters.size(); ++k) {
    auto values = parameters[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace mmpfn
