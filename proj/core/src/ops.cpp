#include "mmpfn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "mmpfn/error.hpp"

namespace mmpfn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using MatMap = Eigen::Map<RowMat, 0, Strided>;
using ConstMatMap = Eigen::Map<const RowMat, 0, Strided>;

ConstMatMap cmap(const double* p, std::size_t rows, std::size_t cols, std::size_t stride) {
  return ConstMatMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                     Strided(static_cast<Eigen::Index>(stride)));
}

MatMap mmap(double* p, std::size_t rows, std::size_t cols, std::size_t stride) {
  return MatMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                Strided(static_cast<Eigen::Index>(stride)));
}

void record(std::vector<Tensor> inputs, const Tensor& out, GradTape::BackwardRule rule) {
  GradTape::active()->record(std::move(inputs), out, std::move(rule));
}

// Size of the repeated block when b broadcasts over a's leading axes.
std::size_t broadcast_inner(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  for (std::size_t i = 0; ok && i < sb.size(); ++i) {
    ok = sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i];
  }
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(sb) +
                     " is neither equal to nor a trailing suffix of " + shape_string(sa));
  }
  return b.size();
}

void check_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_inner(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % inner];
  Tensor y(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    record({a, b}, y, [a, b, y, inner]() mutable {
      auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_inner(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i % inner];
  Tensor y(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    record({a, b}, y, [a, b, y, inner]() mutable {
      auto g = y.grad();
      auto av = a.values();
      auto bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i % inner];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i] * av[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double factor) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  Tensor y(a.shape(), std::move(out));
  if (should_record({&a})) {
    record({a}, y, [a, y, factor]() mutable {
      auto g = y.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents disagree, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor y(Shape{m, n});
  mmap(y.mutable_values().data(), m, n, n).noalias() =
      cmap(a.values().data(), m, k, k) * cmap(b.values().data(), k, n, n);
  if (should_record({&a, &b})) {
    record({a, b}, y, [a, b, y, m, k, n]() mutable {
      auto g = cmap(y.grad().data(), m, n, n);
      if (a.requires_grad()) {
        mmap(a.mutable_grad().data(), m, k, k).noalias() +=
            g * cmap(b.values().data(), k, n, n).transpose();
      }
      if (b.requires_grad()) {
        mmap(b.mutable_grad().data(), k, n, n).noalias() +=
            cmap(a.values().data(), m, k, k).transpose() * g;
      }
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_rank(weight, 2, "linear");
  const std::size_t out_dim = weight.dim(0), in_dim = weight.dim(1);
  if (x.shape().back() != in_dim) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t rows = x.size() / in_dim;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor y(out_shape);
  auto ym = mmap(y.mutable_values().data(), rows, out_dim, out_dim);
  ym.noalias() = cmap(x.values().data(), rows, in_dim, in_dim) *
                 cmap(weight.values().data(), out_dim, in_dim, in_dim).transpose();
  if (bias.defined()) {
    ym.rowwise() += cmap(bias.values().data(), 1, out_dim, out_dim).row(0);
  }
  if (should_record({&x, &weight, &bias})) {
    record({x, weight, bias}, y, [x, weight, bias, y, rows, in_dim, out_dim]() mutable {
      auto g = cmap(y.grad().data(), rows, out_dim, out_dim);
      if (x.requires_grad()) {
        mmap(x.mutable_grad().data(), rows, in_dim, in_dim).noalias() +=
            g * cmap(weight.values().data(), out_dim, in_dim, in_dim);
      }
      if (weight.requires_grad()) {
        mmap(weight.mutable_grad().data(), out_dim, in_dim, in_dim).noalias() +=
            g.transpose() * cmap(x.values().data(), rows, in_dim, in_dim);
      }
      if (bias.defined() && bias.requires_grad()) {
        mmap(bias.mutable_grad().data(), 1, out_dim, out_dim).row(0) += g.colwise().sum();
      }
    });
  }
  return y;
}

Tensor grouped_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_rank(weight, 3, "grouped_linear");
  const std::size_t groups = weight.dim(0), out_dim = weight.dim(1), in_dim = weight.dim(2);
  const bool shared = x.rank() == 2;
  if (!(shared && x.dim(1) == in_dim) &&
      !(x.rank() == 3 && x.dim(1) == groups && x.dim(2) == in_dim)) {
    throw ShapeError("grouped_linear: input " + shape_string(x.shape()) +
                     " does not match weight " + shape_string(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{groups, out_dim}) {
    throw ShapeError("grouped_linear: bias " + shape_string(bias.shape()) +
                     " does not match weight " + shape_string(weight.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t x_stride = shared ? in_dim : groups * in_dim;
  const std::size_t y_stride = groups * out_dim;
  Tensor y(Shape{n, groups, out_dim});
  for (std::size_t g = 0; g < groups; ++g) {
    const double* xp = x.values().data() + (shared ? 0 : g * in_dim);
    auto ym = mmap(y.mutable_values().data() + g * out_dim, n, out_dim, y_stride);
    ym.noalias() = cmap(xp, n, in_dim, x_stride) *
                   cmap(weight.values().data() + g * out_dim * in_dim, out_dim, in_dim, in_dim)
                       .transpose();
    if (bias.defined()) {
      ym.rowwise() += cmap(bias.values().data() + g * out_dim, 1, out_dim, out_dim).row(0);
    }
  }
  if (should_record({&x, &weight, &bias})) {
    record({x, weight, bias}, y,
           [x, weight, bias, y, groups, out_dim, in_dim, n, shared, x_stride, y_stride]() mutable {
             for (std::size_t g = 0; g < groups; ++g) {
               auto gy = cmap(y.grad().data() + g * out_dim, n, out_dim, y_stride);
               const double* w = weight.values().data() + g * out_dim * in_dim;
               if (x.requires_grad()) {
                 double* gx = x.mutable_grad().data() + (shared ? 0 : g * in_dim);
                 mmap(gx, n, in_dim, x_stride).noalias() += gy * cmap(w, out_dim, in_dim, in_dim);
               }
               if (weight.requires_grad()) {
                 const double* xp = x.values().data() + (shared ? 0 : g * in_dim);
                 mmap(weight.mutable_grad().data() + g * out_dim * in_dim, out_dim, in_dim, in_dim)
                     .noalias() += gy.transpose() * cmap(xp, n, in_dim, x_stride);
               }
               if (bias.defined() && bias.requires_grad()) {
                 mmap(bias.mutable_grad().data() + g * out_dim, 1, out_dim, out_dim).row(0) +=
                     gy.colwise().sum();
               }
             }
           });
  }
  return y;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xv[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(xv[base + l * inner] - mx);
        out[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= total;
    }
  }
  Tensor y(s, std::move(out));
  if (should_record({&x})) {
    record({x}, y, [x, y, outer, inner, len]() mutable {
      auto g = y.grad();
      auto yv = y.values();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * yv[base + l * inner];
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t i = base + l * inner;
            gx[i] += yv[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t width = x.shape().back();
  if (gain.size() != width || bias.size() != width) {
    throw ShapeError("layernorm: gain/bias extent must equal last axis of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / width;
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<double> normalized(xv.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(width);
    const double rstd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = rstd;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (row[j] - mu) * rstd;
      normalized[r * width + j] = h;
      out[r * width + j] = h * gv[j] + bv[j];
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (should_record({&x, &gain, &bias})) {
    record({x, gain, bias}, y,
           [x, gain, bias, y, rows, width, normalized = std::move(normalized),
            inv_std = std::move(inv_std)]() mutable {
             auto g = y.grad();
             auto gv = gain.values();
             const double inv_w = 1.0 / static_cast<double>(width);
             if (gain.requires_grad() || bias.requires_grad()) {
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t j = 0; j < width; ++j) {
                   const std::size_t i = r * width + j;
                   if (gain.requires_grad()) gain.mutable_grad()[j] += g[i] * normalized[i];
                   if (bias.requires_grad()) bias.mutable_grad()[j] += g[i];
                 }
               }
             }
             if (x.requires_grad()) {
               auto gx = x.mutable_grad();
               for (std::size_t r = 0; r < rows; ++r) {
                 double mean_d = 0.0, mean_dh = 0.0;
                 for (std::size_t j = 0; j < width; ++j) {
                   const std::size_t i = r * width + j;
                   const double d = g[i] * gv[j];
                   mean_d += d;
                   mean_dh += d * normalized[i];
                 }
                 mean_d *= inv_w;
                 mean_dh *= inv_w;
                 for (std::size_t j = 0; j < width; ++j) {
                   const std::size_t i = r * width + j;
                   gx[i] += inv_std[r] * (g[i] * gv[j] - mean_d - normalized[i] * mean_dh);
                 }
               }
             }
           });
  }
  return y;
}

Tensor gelu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  }
  Tensor y(x.shape(), std::move(out));
  if (should_record({&x})) {
    record({x}, y, [x, y]() mutable {
      auto g = y.grad();
      auto xv = x.values();
      auto gx = x.mutable_grad();
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
        gx[i] += g[i] * (cdf + xv[i] * pdf);
      }
    });
  }
  return y;
}

Tensor sigmoid(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = sigmoid_scalar(xv[i]);
  Tensor y(x.shape(), std::move(out));
  if (should_record({&x})) {
    record({x}, y, [x, y]() mutable {
      auto g = y.grad();
      auto yv = y.values();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return y;
}

Tensor glu(const Tensor& x) {
  const std::size_t width = x.shape().back();
  if (width % 2 != 0) {
    throw ShapeError("glu: last axis must be even, got " + shape_string(x.shape()));
  }
  const std::size_t half = width / 2;
  const std::size_t rows = x.size() / width;
  auto xv = x.values();
  std::vector<double> gate(rows * half);
  std::vector<double> out(rows * half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      const double s = sigmoid_scalar(xv[r * width + half + j]);
      gate[r * half + j] = s;
      out[r * half + j] = xv[r * width + j] * s;
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = half;
  Tensor y(out_shape, std::move(out));
  if (should_record({&x})) {
    record({x}, y, [x, y, rows, half, width, gate = std::move(gate)]() mutable {
      auto g = y.grad();
      auto xv = x.values();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < half; ++j) {
          const double s = gate[r * half + j];
          const double gr = g[r * half + j];
          gx[r * width + j] += gr * s;
          gx[r * width + half + j] += gr * xv[r * width + j] * s * (1.0 - s);
        }
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor y = Tensor::scalar(total);
  if (should_record({&x})) {
    record({x}, y, [x, y]() mutable {
      const double g = y.grad()[0];
      for (double& gx : x.mutable_grad()) gx += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  auto xv = x.values();
  Tensor y(std::move(shape), std::vector<double>(xv.begin(), xv.end()));
  if (should_record({&x})) {
    record({x}, y, [x, y]() mutable {
      auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

Tensor transpose01(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose01: need rank >= 2, got " + shape_string(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1);
  const std::size_t inner = x.size() / (a * b);
  Shape out_shape = x.shape();
  std::swap(out_shape[0], out_shape[1]);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      std::copy_n(xv.data() + (i * b + j) * inner, inner, out.data() + (j * a + i) * inner);
    }
  }
  Tensor y(out_shape, std::move(out));
  if (should_record({&x})) {
    record({x}, y, [x, y, a, b, inner]() mutable {
      auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < a; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
          const double* src = g.data() + (j * a + i) * inner;
          double* dst = gx.data() + (i * b + j) * inner;
          for (std::size_t t = 0; t < inner; ++t) dst[t] += src[t];
        }
      }
    });
  }
  return y;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: " + shape_string(s) + " incompatible with " + shape_string(first) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_chunk = out_shape[axis] * inner;
  std::vector<double> out(outer * out_chunk);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * out_chunk + offset);
    }
    offsets.push_back(offset);
    offset += chunk;
  }
  Tensor y(out_shape, std::move(out));
  bool any = false;
  for (const Tensor& p : parts) any = any || should_record({&p});
  if (any) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record(inputs, y, [inputs, y, offsets, outer, out_chunk, inner, axis]() mutable {
      auto g = y.grad();
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& p = inputs[k];
        if (!p.requires_grad()) continue;
        const std::size_t chunk = p.dim(axis) * inner;
        auto gp = p.mutable_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.data() + o * out_chunk + offsets[k];
          double* dst = gp.data() + o * chunk;
          for (std::size_t t = 0; t < chunk; ++t) dst[t] += src[t];
        }
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid on axis " + std::to_string(axis) + " of " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t in_chunk = s[axis] * inner;
  const std::size_t out_chunk = (end - begin) * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  auto xv = x.values();
  std::vector<double> out(outer * out_chunk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + o * in_chunk + begin * inner, out_chunk, out.data() + o * out_chunk);
  }
  Tensor y(out_shape, std::move(out));
  if (should_record({&x})) {
    record({x}, y, [x, y, outer, in_chunk, out_chunk, begin, inner]() mutable {
      auto g = y.grad();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = g.data() + o * out_chunk;
        double* dst = gx.data() + o * in_chunk + begin * inner;
        for (std::size_t t = 0; t < out_chunk; ++t) dst[t] += src[t];
      }
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t rows = table.dim(0);
  const std::size_t width = table.size() / rows;
  Shape out_shape = table.shape();
  out_shape[0] = indices.size();
  auto tv = table.values();
  std::vector<double> out(indices.size() * width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                       shape_string(table.shape()));
    }
    std::copy_n(tv.data() + indices[i] * width, width, out.data() + i * width);
  }
  Tensor y(out_shape, std::move(out));
  if (should_record({&table})) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    record({table}, y, [table, y, idx = std::move(idx), width]() mutable {
      auto g = y.grad();
      auto gt = table.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) gt[idx[i] * width + j] += g[i * width + j];
      }
    });
  }
  return y;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const BoolMatrix* mask, AttentionWeights* weights) {
  check_rank(q, 3, "attention");
  check_rank(k, 3, "attention");
  check_rank(v, 3, "attention");
  const std::size_t batch = k.dim(0), keys = k.dim(1), width = k.dim(2);
  const std::size_t queries = q.dim(1);
  const std::size_t q_batch = q.dim(0);
  if (v.shape() != k.shape() || q.dim(2) != width || (q_batch != batch && q_batch != 1)) {
    throw ShapeError("attention: incompatible q " + shape_string(q.shape()) + ", k " +
                     shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible into " +
                     std::to_string(heads) + " heads");
  }
  if (mask) {
    if (mask->rows() != queries || mask->cols() != keys) {
      throw ShapeError("attention: mask is " + std::to_string(mask->rows()) + "x" +
                       std::to_string(mask->cols()) + ", expected " + std::to_string(queries) +
                       "x" + std::to_string(keys));
    }
    for (std::size_t i = 0; i < queries; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < keys && !any; ++j) any = (*mask)(i, j);
      if (!any) throw ShapeError("attention: query row " + std::to_string(i) + " has every key masked");
    }
  }
  const std::size_t head_dim = width / heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const bool recording = should_record({&q, &k, &v});
  const bool keep_probs = recording || weights != nullptr;

  std::vector<double> probs(keep_probs ? batch * heads * queries * keys : 0);
  RowMat bias;
  if (mask) {
    bias = RowMat::Zero(static_cast<Eigen::Index>(queries), static_cast<Eigen::Index>(keys));
    for (std::size_t i = 0; i < queries; ++i) {
      for (std::size_t j = 0; j < keys; ++j) {
        if (!(*mask)(i, j)) bias(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kMaskedScore;
      }
    }
  }

  Tensor y(Shape{batch, queries, width});
  RowMat scores;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t qb = q_batch == 1 ? 0 : b;
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = cmap(q.values().data() + qb * queries * width + h * head_dim, queries, head_dim, width);
      auto kh = cmap(k.values().data() + b * keys * width + h * head_dim, keys, head_dim, width);
      auto vh = cmap(v.values().data() + b * keys * width + h * head_dim, keys, head_dim, width);
      scores.noalias() = (qh * kh.transpose()) * score_scale;
      if (mask) scores += bias;
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        double* row = scores.data() + i * scores.cols();
        double mx = row[0];
        for (std::size_t j = 1; j < keys; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < keys; ++j) {
          // Masked entries underflow to exactly 0; skip the exp.
          row[j] = mask && !(*mask)(static_cast<std::size_t>(i), j) ? 0.0 : std::exp(row[j] - mx);
          total += row[j];
        }
        for (std::size_t j = 0; j < keys; ++j) row[j] /= total;
      }
      auto out = mmap(y.mutable_values().data() + b * queries * width + h * head_dim, queries,
                      head_dim, width);
      out.noalias() = scores * vh;
      if (keep_probs) {
        std::copy_n(scores.data(), queries * keys, probs.data() + (b * heads + h) * queries * keys);
      }
    }
  }
  if (weights) {
    weights->batch = batch;
    weights->heads = heads;
    weights->queries = queries;
    weights->keys = keys;
    weights->values = probs;
  }
  if (recording) {
    record({q, k, v}, y,
           [q, k, v, y, probs = std::move(probs), batch, heads, queries, keys, width, head_dim,
            q_batch, score_scale]() mutable {
             RowMat dp, ds;
             for (std::size_t b = 0; b < batch; ++b) {
               const std::size_t qb = q_batch == 1 ? 0 : b;
               for (std::size_t h = 0; h < heads; ++h) {
                 auto p = cmap(probs.data() + (b * heads + h) * queries * keys, queries, keys, keys);
                 auto go = cmap(y.grad().data() + b * queries * width + h * head_dim, queries,
                                head_dim, width);
                 const std::size_t q_off = qb * queries * width + h * head_dim;
                 const std::size_t kv_off = b * keys * width + h * head_dim;
                 auto qh = cmap(q.values().data() + q_off, queries, head_dim, width);
                 auto kh = cmap(k.values().data() + kv_off, keys, head_dim, width);
                 auto vh = cmap(v.values().data() + kv_off, keys, head_dim, width);
                 if (v.requires_grad()) {
                   mmap(v.mutable_grad().data() + kv_off, keys, head_dim, width).noalias() +=
                       p.transpose() * go;
                 }
                 if (!q.requires_grad() && !k.requires_grad()) continue;
                 dp.noalias() = go * vh.transpose();
                 ds = p.cwiseProduct(dp);
                 const Eigen::VectorXd row_dot = ds.rowwise().sum();
                 ds -= p.cwiseProduct(row_dot.replicate(1, static_cast<Eigen::Index>(keys)));
                 ds *= score_scale;
                 if (q.requires_grad()) {
                   mmap(q.mutable_grad().data() + q_off, queries, head_dim, width).noalias() += ds * kh;
                 }
                 if (k.requires_grad()) {
                   mmap(k.mutable_grad().data() + kv_off, keys, head_dim, width).noalias() +=
                       ds.transpose() * qh;
                 }
               }
             }
           });
  }
  return y;
}

}  // namespace mmpfn
