#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mmpfn/error.hpp"
#include "mmpfn/grad_check.hpp"
#include "mmpfn/ops.hpp"
#include "mmpfn/optim.hpp"
#include "mmpfn/rng.hpp"
#include "test_util.hpp"

using namespace mmpfn;
using mmpfn::testing::random_tensor;
using mmpfn::testing::weighted_sum;

namespace {

constexpr double kGradTol = 1e-4;

// Reference attention with explicit loops: q[B,Lq,E], k/v[B,Lk,E].
std::vector<double> naive_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    std::size_t heads, const BoolMatrix* mask) {
  const std::size_t b_n = k.dim(0), lq = q.dim(1), lk = k.dim(1), e = q.dim(2);
  const std::size_t hd = e / heads;
  std::vector<double> out(b_n * lq * e, 0.0);
  for (std::size_t b = 0; b < b_n; ++b) {
    const std::size_t bq = q.dim(0) == 1 ? 0 : b;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < lq; ++i) {
        std::vector<double> s(lk);
        double top = -INFINITY;
        for (std::size_t j = 0; j < lk; ++j) {
          if (mask && !(*mask)(i, j)) {
            s[j] = -INFINITY;
            continue;
          }
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) {
            dot += q[(bq * lq + i) * e + h * hd + c] * k[(b * lk + j) * e + h * hd + c];
          }
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          top = std::max(top, s[j]);
        }
        double z = 0.0;
        for (double& x : s) {
          x = std::isinf(x) ? 0.0 : std::exp(x - top);
          z += x;
        }
        for (std::size_t j = 0; j < lk; ++j) {
          for (std::size_t c = 0; c < hd; ++c) {
            out[(b * lq + i) * e + h * hd + c] += s[j] / z * v[(b * lk + j) * e + h * hd + c];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("splitmix64 stream matches the reference sequence") {
  // Reference SplitMix64 with state 0: the first outputs are well known.
  Rng rng(0);
  CHECK(rng.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(rng.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(rng.next_u64() == 0x06c45d188009454fULL);
  CHECK(rng.counter() == 3);
}

TEST_CASE("rng draws are deterministic and in range") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(7);
  double mean = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(5) < 5);
    const double z = r.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
}

TEST_CASE("tensor handles share storage and clone copies") {
  Tensor a({2, 3}, 1.5);
  Tensor alias = a;
  alias.mutable_values()[0] = 9.0;
  CHECK(a[0] == 9.0);
  Tensor c = a.clone();
  c.mutable_values()[1] = -1.0;
  CHECK(a[1] == 1.5);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("tape backward runs once and requires a scalar") {
  Tensor x = random_tensor({3}, 1);
  x.set_requires_grad(true);
  GradTape tape;
  Tensor y = sum(mul(x, x));
  tape.backward(y);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i]));
  CHECK_THROWS_AS(tape.backward(y), StateError);
  GradTape other;
  CHECK_THROWS_AS(other.backward(mul(x, x)), ShapeError);
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x = random_tensor({4}, 2);
  x.set_requires_grad(true);
  GradTape tape;
  {
    NoGradGuard guard;
    Tensor y = gelu(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("matmul and linear agree with explicit loops") {
  const Tensor a = random_tensor({3, 4}, 3);
  const Tensor b = random_tensor({4, 2}, 4);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a[i * 4 + k] * b[k * 2 + j];
      CHECK(c[i * 2 + j] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  const Tensor w = random_tensor({5, 4}, 5);
  const Tensor bias = random_tensor({5}, 6);
  const Tensor y = linear(a, w, bias);
  CHECK(y.shape() == Shape{3, 5});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t o = 0; o < 5; ++o) {
      double acc = bias[o];
      for (std::size_t k = 0; k < 4; ++k) acc += a[i * 4 + k] * w[o * 4 + k];
      CHECK(y[i * 5 + o] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("grouped linear applies one weight block per group") {
  const Tensor x = random_tensor({2, 3}, 7);
  const Tensor w = random_tensor({4, 5, 3}, 8);
  const Tensor b = random_tensor({4, 5}, 9);
  const Tensor y = grouped_linear(x, w, b);
  REQUIRE(y.shape() == Shape{2, 4, 5});
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t g = 0; g < 4; ++g) {
      for (std::size_t o = 0; o < 5; ++o) {
        double acc = b[g * 5 + o];
        for (std::size_t k = 0; k < 3; ++k) acc += w[(g * 5 + o) * 3 + k] * x[n * 3 + k];
        CHECK(y[(n * 4 + g) * 5 + o] == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("elementwise activations match their formulas") {
  const Tensor x = Tensor::from_vector({-3.0, -0.5, 0.0, 0.7, 2.5});
  const Tensor g = gelu(x);
  const Tensor s = sigmoid(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(g[i] == doctest::Approx(0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)))));
    CHECK(s[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x[i]))));
  }
  CHECK(sigmoid(Tensor::from_vector({-800.0}))[0] == 0.0);
  const Tensor h = Tensor({1, 4}, std::vector<double>{1.0, 2.0, 0.0, 3.0});
  const Tensor u = glu(h);
  REQUIRE(u.shape() == Shape{1, 2});
  CHECK(u[0] == doctest::Approx(1.0 * 0.5));
  CHECK(u[1] == doctest::Approx(2.0 / (1.0 + std::exp(-3.0))));
  CHECK_THROWS_AS(glu(Tensor({1, 3}, 1.0)), ShapeError);
}

TEST_CASE("softmax and layernorm match hand computation") {
  const Tensor x({2, 3}, std::vector<double>{1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  const Tensor p = softmax(x, 1);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p[0] == doctest::Approx(std::exp(1.0) / z));
  CHECK(p[5] == doctest::Approx(1.0 / 3.0));
  const Tensor gain = Tensor::from_vector({1.0, 2.0, 0.5});
  const Tensor bias = Tensor::from_vector({0.0, 1.0, -1.0});
  const Tensor y = layernorm(x, gain, bias);
  const double sd = std::sqrt(2.0 / 3.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(-1.0 / sd));
  CHECK(y[1] == doctest::Approx(1.0));
  CHECK(y[2] == doctest::Approx(0.5 / sd - 1.0));
}

TEST_CASE("attention matches a loop implementation, with and without a mask") {
  const Tensor q = random_tensor({2, 3, 8}, 10);
  const Tensor k = random_tensor({2, 4, 8}, 11);
  const Tensor v = random_tensor({2, 4, 8}, 12);
  BoolMatrix mask(3, 4, true);
  mask.set(0, 3, false);
  mask.set(2, 0, false);
  mask.set(2, 1, false);
  for (const BoolMatrix* m : std::vector<const BoolMatrix*>{nullptr, &mask}) {
    AttentionWeights w;
    const Tensor out = scaled_dot_attention(q, k, v, 2, m, &w);
    const std::vector<double> ref = naive_attention(q, k, v, 2, m);
    CHECK(mmpfn::testing::max_abs_diff(out.values(), ref) < 1e-12);
    if (m) {
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t h = 0; h < 2; ++h) {
          CHECK(w.at(b, h, 0, 3) == 0.0);
          CHECK(w.at(b, h, 2, 0) == 0.0);
          CHECK(w.at(b, h, 2, 1) == 0.0);
        }
      }
    }
  }
  // Broadcast queries: q batch of 1.
  const Tensor q1 = random_tensor({1, 3, 8}, 13);
  const Tensor out = scaled_dot_attention(q1, k, v, 4);
  CHECK(mmpfn::testing::max_abs_diff(out.values(), naive_attention(q1, k, v, 4, nullptr)) < 1e-12);
}

TEST_CASE("a fully masked query row is rejected with its index") {
  const Tensor q = random_tensor({1, 2, 4}, 14);
  BoolMatrix mask(2, 2, true);
  mask.set(1, 0, false);
  mask.set(1, 1, false);
  try {
    scaled_dot_attention(q, q, q, 1, &mask);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("shape ops move values as documented") {
  const Tensor x = random_tensor({2, 3, 4}, 15);
  const Tensor t = transpose01(x);
  REQUIRE(t.shape() == Shape{3, 2, 4});
  CHECK(t[(1 * 2 + 0) * 4 + 2] == x[(0 * 3 + 1) * 4 + 2]);
  const Tensor s = slice(x, 1, 1, 3);
  REQUIRE(s.shape() == Shape{2, 2, 4});
  CHECK(s[0] == x[4]);
  const std::vector<Tensor> parts{slice(x, 1, 0, 1), slice(x, 1, 1, 3)};
  CHECK(mmpfn::testing::bit_identical(concat(parts, 1).values(), x.values()));
  const std::vector<std::size_t> idx{1, 0, 1};
  const Tensor g = gather_rows(x, idx);
  REQUIRE(g.shape() == Shape{3, 3, 4});
  CHECK(g[0] == x[12]);
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
  CHECK_THROWS_AS(add(x, random_tensor({3}, 1)), ShapeError);
}

TEST_CASE("cross entropy values") {
  const std::vector<std::size_t> y0{2};
  CHECK(cross_entropy(Tensor({1, 5}, 0.0), y0).item() == doctest::Approx(std::log(5.0)));
  const std::vector<std::size_t> y1{1};
  CHECK(cross_entropy(Tensor({1, 3}, std::vector<double>{0.0, 40.0, 0.0}), y1).item() <= 1e-12);
  // Two rows by hand: -log softmax picks.
  const Tensor z({2, 2}, std::vector<double>{1.0, 0.0, 0.0, 2.0});
  const std::vector<std::size_t> y2{0, 0};
  const double row0 = std::log(std::exp(1.0) + 1.0) - 1.0;
  const double row1 = std::log(1.0 + std::exp(2.0)) - 0.0;
  CHECK(cross_entropy(z, y2).item() == doctest::Approx((row0 + row1) / 2.0).epsilon(1e-14));
  const std::vector<std::size_t> bad{2, 0};
  CHECK_THROWS_AS(cross_entropy(z, bad), DataError);
}

TEST_CASE("operator gradients pass central finite differences") {
  const Tensor a = random_tensor({3, 4}, 20);
  const Tensor b = random_tensor({3, 4}, 21);
  const Tensor row = random_tensor({4}, 22);
  const Tensor w = random_tensor({2, 4}, 23);
  const Tensor wb = random_tensor({2}, 24);

  SUBCASE("elementwise") {
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(add(x, row)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(add(b, x)); }, row) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(sub(x, b)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(mul(x, b)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(mul(b, x)); }, row) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(scale(x, -1.7)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(gelu(x)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(sigmoid(x)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(glu(x)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return mean(mul(x, x)); }, a) < kGradTol);
  }
  SUBCASE("linear algebra") {
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(matmul(x, transpose01(b))); }, a) <
          kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(linear(x, w, wb)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(linear(a, x, wb)); }, w) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(linear(a, w, x)); }, wb) < kGradTol);
    const Tensor gw = random_tensor({3, 2, 4}, 25);
    const Tensor gb = random_tensor({3, 2}, 26);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(grouped_linear(x, gw, gb)); }, a) <
          kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(grouped_linear(a, x, gb)); }, gw) <
          kGradTol);
    const Tensor per_group = random_tensor({3, 3, 4}, 27);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(grouped_linear(x, gw, gb)); },
                     per_group) < kGradTol);
  }
  SUBCASE("normalization") {
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(softmax(x, 1)); }, a) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(softmax(x, 0)); }, a) < kGradTol);
    const Tensor gain = random_tensor({4}, 28);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(layernorm(x, gain, row)); }, a) <
          kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(layernorm(a, x, row)); }, gain) <
          kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(layernorm(a, gain, x)); }, row) <
          kGradTol);
  }
  SUBCASE("shape ops") {
    const Tensor x3 = random_tensor({2, 3, 2}, 29);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(transpose01(x)); }, x3) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(reshape(x, {6, 2})); }, x3) <
          kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(slice(x, 1, 1, 3)); }, x3) <
          kGradTol);
    CHECK(grad_check(
              [&](const Tensor& x) {
                const std::vector<Tensor> parts{x, b};
                return weighted_sum(concat(parts, 0));
              },
              a) < kGradTol);
    const std::vector<std::size_t> idx{2, 0, 2, 1};
    CHECK(grad_check([&](const Tensor& x) { return weighted_sum(gather_rows(x, idx)); }, a) <
          kGradTol);
  }
  SUBCASE("attention and loss") {
    const Tensor k = random_tensor({2, 4, 4}, 30);
    const Tensor v = random_tensor({2, 4, 4}, 31);
    const Tensor q = random_tensor({2, 3, 4}, 32);
    BoolMatrix mask(3, 4, true);
    mask.set(0, 1, false);
    mask.set(2, 3, false);
    auto attn = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv) {
      return weighted_sum(scaled_dot_attention(qq, kk, vv, 2, &mask));
    };
    CHECK(grad_check([&](const Tensor& x) { return attn(x, k, v); }, q) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return attn(q, x, v); }, k) < kGradTol);
    CHECK(grad_check([&](const Tensor& x) { return attn(q, k, x); }, v) < kGradTol);
    const Tensor q1 = random_tensor({1, 3, 4}, 33);
    CHECK(grad_check([&](const Tensor& x) { return attn(x, k, v); }, q1) < kGradTol);
    const std::vector<std::size_t> labels{0, 3, 1};
    CHECK(grad_check([&](const Tensor& x) { return cross_entropy(x, labels); }, a) < kGradTol);
  }
}
