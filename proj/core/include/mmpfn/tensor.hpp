#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmpfn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major binary64 array with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage. Use clone() for an
// independent copy. Results of ops are fresh tensors and are never written to
// after construction; only parameters are mutated (by optimizers, in place).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor from_vector(std::vector<double> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  // Marks a leaf tensor as a trainable parameter.
  Tensor& set_requires_grad(bool on);

  bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
  std::span<const double> grad() const;
  // Allocates a zero-filled buffer on first use.
  std::span<double> mutable_grad() const;
  void zero_grad();

  // Independent copy of the values; no gradient, no tape link.
  Tensor clone() const;
  // Same as clone(); reads as intent at call sites that cut a graph.
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Records differentiable operations for one forward pass.
//
// Constructing a GradTape makes it the active tape of the current thread until
// it is destroyed. Ops executed while no tape is active (or whose inputs do not
// require gradients) are not recorded, which is the inference fast path.
// One tape serves one optimization step: backward() may run once, after which
// the tape must be cleared or discarded before recording again.
class GradTape {
 public:
  // Reads the output gradient and accumulates into the inputs' gradients.
  using BackwardRule = std::function<void()>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() noexcept;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule);

  // Populates gradients of a scalar loss w.r.t. every recorded tensor that
  // requires gradients. Leaf gradients accumulate across calls on different
  // tapes so that several tables can be combined into one step.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }
  void clear() noexcept;

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardRule rule;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
  GradTape* previous_ = nullptr;
};

// Convenience wrapper around GradTape::active()->backward(loss).
void backward(const Tensor& loss);

// True when an op over these inputs must be recorded on the active tape.
bool should_record(std::initializer_list<const Tensor*> inputs) noexcept;

// Suspends recording on this thread for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  GradTape* saved_;
};

}  // namespace mmpfn
