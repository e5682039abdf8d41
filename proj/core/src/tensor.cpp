#include "mmpfn/tensor.hpp"

#include <sstream>

#include "mmpfn/error.hpp"

namespace mmpfn {

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

std::size_t shape_size(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  impl_->values.assign(shape_size(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::from_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return impl_ ? impl_->values.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->values;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape()));
  return impl_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw StateError("use of undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!impl_) throw StateError("use of undefined tensor");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (!impl_) throw StateError("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
  if (!impl_) return Tensor();
  return Tensor(impl_->shape, impl_->values);
}

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

GradTape* GradTape::active() noexcept { return g_active_tape; }

void GradTape::record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule) {
  if (consumed_) throw StateError("recording on a tape after backward(); clear it first");
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(rule)});
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw StateError("backward() already ran on this tape; re-run the forward pass");
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) {
    nodes_.clear();
    return;  // detached loss: parameters keep (zero) gradients
  }
  for (Node& node : nodes_) {
    node.output.mutable_grad();
    for (Tensor& in : node.inputs) {
      if (in.requires_grad()) in.mutable_grad();
    }
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->rule();
  nodes_.clear();
}

void GradTape::clear() noexcept {
  nodes_.clear();
  consumed_ = false;
}

void backward(const Tensor& loss) {
  GradTape* tape = GradTape::active();
  if (!tape) throw StateError("backward() called with no active GradTape");
  tape->backward(loss);
}

bool should_record(std::initializer_list<const Tensor*> inputs) noexcept {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

}  // namespace mmpfn
