#include <gtest/gtest.h>

#include "oracles.hpp"
#include "swlora/lora.hpp"
#include "swlora/numkit.hpp"

using namespace swlora;

namespace {

LoraLinear random_layer(Rng& r, std::size_t m, std::size_t n, std::size_t rank, double alpha) {
  return LoraLinear(normal(r, m, n), normal(r, m, rank), normal(r, rank, n), alpha);
}

// <upstream, forward(layer, x)>: a loss whose gradient w.r.t. y is `upstream`.
double probe_loss(const LoraLinear& l, const Matrix& x, const Matrix& up) {
  const Matrix y = forward(l, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) s += y(i, j) * up(i, j);
  return s;
}

}  // namespace

TEST(LoraLinear, ValidatesShapes) {
  EXPECT_THROW(LoraLinear(Matrix(4, 3), Matrix(4, 2), Matrix(3, 3), 1.0), DimensionError);
  EXPECT_THROW(LoraLinear(Matrix(4, 3), Matrix(5, 2), Matrix(2, 3), 1.0), DimensionError);
  EXPECT_THROW(LoraLinear(Matrix(4, 3), Matrix(4, 4), Matrix(4, 3), 1.0), DimensionError);  // r > min(m, n)
  EXPECT_NO_THROW(LoraLinear(Matrix(4, 3), Matrix(4, 3), Matrix(3, 3), 1.0));
}

TEST(LoraLinear, ForwardMatchesExplicitEffectiveWeight) {
  Rng r(2);
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 1 + r.uniform_index(12), n = 1 + r.uniform_index(12);
    const std::size_t rank = 1 + r.uniform_index(std::min(m, n));
    const double alpha = 0.5 + r.uniform01() * 4;
    const LoraLinear l = random_layer(r, m, n, rank, alpha);
    const Matrix x = normal(r, n, 3);
    Matrix w = l.W;
    const Matrix ba = oracle::matmul(l.B, l.A);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) w(i, j) += alpha / static_cast<double>(rank) * ba(i, j);
    EXPECT_LE(oracle::max_abs_diff(forward(l, x), oracle::matmul(w, x)), 1e-12);
    EXPECT_THROW(forward(l, Matrix(n + 1, 1)), DimensionError);
  }
}

TEST(LoraLinear, ScaleIsAlphaOverRank) {
  Rng r(3);
  EXPECT_DOUBLE_EQ(random_layer(r, 5, 5, 2, 2.0).sigma(), 1.0);
  EXPECT_DOUBLE_EQ(random_layer(r, 5, 5, 4, 2.0).sigma(), 0.5);
}

TEST(LoraLinear, BackwardMatchesCentralDifferences) {
  Rng r(4);
  for (int t = 0; t < 30; ++t) {
    const std::size_t m = 1 + r.uniform_index(7), n = 1 + r.uniform_index(7);
    const std::size_t rank = 1 + r.uniform_index(std::min(m, n));
    LoraLinear l = random_layer(r, m, n, rank, 1.0 + r.uniform01());
    const Matrix x = normal(r, n, 1 + r.uniform_index(4));
    const Matrix up = normal(r, m, x.cols());
    const GradBundle g = backward(l, x, up);
    const double h = 1e-6;
    auto check = [&](Matrix& p, const Matrix& analytic) {
      for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = 0; j < p.cols(); ++j) {
          const double keep = p(i, j);
          p(i, j) = keep + h;
          const double lp = probe_loss(l, x, up);
          p(i, j) = keep - h;
          const double lm = probe_loss(l, x, up);
          p(i, j) = keep;
          const double fd = (lp - lm) / (2 * h);
          EXPECT_NEAR(analytic(i, j), fd, 1e-4 * std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-6}));
        }
    };
    check(l.B, g.grad_B);
    check(l.A, g.grad_A);
    // dL/dx = (W + s B A)^T up
    Matrix w = l.W;
    const Matrix ba = oracle::matmul(l.B, l.A);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) w(i, j) += l.sigma() * ba(i, j);
    EXPECT_LE(oracle::max_abs_diff(g.grad_x, oracle::matmul(transpose(w), up)), 1e-10);
  }
}

TEST(LoraLinear, BatchOneClosedForms) {
  Rng r(5);
  const std::size_t m = 6, n = 5, rank = 3;
  const LoraLinear l = random_layer(r, m, n, rank, 3.0);  // scale 1
  const Matrix x = normal(r, n, 1), up = normal(r, m, 1);
  const GradBundle g = backward(l, x, up);
  for (std::size_t k = 0; k < rank; ++k) {
    double ax = 0.0, ub = 0.0;
    for (std::size_t j = 0; j < n; ++j) ax += l.A(k, j) * x(j, 0);
    for (std::size_t i = 0; i < m; ++i) ub += up(i, 0) * l.B(i, k);
    for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(g.grad_B(i, k), ax * up(i, 0), 1e-10);
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(g.grad_A(k, j), ub * x(j, 0), 1e-10);
  }
}

TEST(Init, StdFormulas) {
  // m = n = 256, r = 16: (16/256)^(1/4) = 0.5 for both sides.
  EXPECT_DOUBLE_EQ(switchlora_std_B(256, 256, 16, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(switchlora_std_A(256, 256, 16, 1.0), 0.5);
  EXPECT_NEAR(switchlora_std_B(256, 256, 16, 2.0), 0.5 * std::sqrt(2.0), 1e-15);
  // std_B * std_A = sqrt(r / n), so each entry of (1/r) B A x has unit variance.
  const std::size_t m = 64, n = 128, r = 4;
  const double p = switchlora_std_B(m, n, r, 1.0) * switchlora_std_A(m, n, r, 1.0);
  EXPECT_NEAR(p * std::sqrt(static_cast<double>(r * n)) / static_cast<double>(r), 1.0, 1e-12);
}

TEST(Init, SampledStdsMatchAndClassicSchemeZerosB) {
  Rng r(6);
  const InitResult res = init_switchlora(r, 500, 400, 100, {});
  EXPECT_NEAR(moments(res.B.data()).std, res.std_B, 0.01 * res.std_B);
  EXPECT_NEAR(moments(res.A.data()).std, res.std_A, 0.01 * res.std_A);
  const InitResult classic = init_switchlora(r, 50, 40, 4, {1.0, InitScheme::classic_lora});
  EXPECT_EQ(oracle::max_abs(classic.B), 0.0);
  EXPECT_DOUBLE_EQ(classic.std_A, 1.0 / std::sqrt(40.0));
  EXPECT_THROW(init_switchlora(r, 4, 3, 4, {}), std::invalid_argument);
  EXPECT_THROW(init_switchlora(r, 4, 3, 0, {}), std::invalid_argument);
  EXPECT_THROW(init_switchlora(r, 4, 3, 2, {0.0}), std::invalid_argument);
}

TEST(Init, MergeFoldsAdapterAndKeepsFunction) {
  Rng r(7);
  LoraLinear l = random_layer(r, 8, 6, 2, 2.0);
  const Matrix x = normal(r, 6, 4);
  const Matrix before = forward(l, x);
  merge(l, r, {});
  EXPECT_EQ(oracle::max_abs(l.B), 0.0);
  EXPECT_LE(oracle::max_abs_diff(forward(l, x), before), 1e-12);
}
