#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "swlora/numkit.hpp"

using namespace swlora;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

Matrix low_rank(Rng& r, std::size_t m, std::size_t n, std::size_t k) {
  return matmul(normal(r, m, k), normal(r, k, n));
}

}  // namespace

TEST(Svd, MatchesEigenSingularValuesAndReconstructs) {
  Rng r(3);
  for (int t = 0; t < 25; ++t) {
    const std::size_t m = 1 + r.uniform_index(40), n = 1 + r.uniform_index(40);
    const Matrix a = normal(r, m, n);
    const Svd d = svd(a);
    const Eigen::VectorXd ref = Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(a)).singularValues();
    ASSERT_EQ(d.S.size(), static_cast<std::size_t>(ref.size()));
    for (std::size_t k = 0; k < d.S.size(); ++k) EXPECT_NEAR(d.S[k], ref(static_cast<Eigen::Index>(k)), 1e-10 * ref(0));

    Matrix us = d.U;
    for (std::size_t i = 0; i < us.rows(); ++i)
      for (std::size_t k = 0; k < d.S.size(); ++k) us(i, k) *= d.S[k];
    EXPECT_LE(oracle::max_abs_diff(oracle::matmul(us, transpose(d.V)), a), 1e-10);
    const std::size_t k = d.S.size();
    EXPECT_LE(oracle::max_abs_diff(oracle::matmul(transpose(d.U), d.U), Matrix::identity(k)), 1e-10);
    EXPECT_LE(oracle::max_abs_diff(oracle::matmul(transpose(d.V), d.V), Matrix::identity(k)), 1e-10);
  }
}

TEST(Svd, SortedNonNegativeAndGramEigenvalues) {
  Rng r(4);
  const Matrix a = normal(r, 12, 7);
  const auto s = singular_values(a);
  for (std::size_t k = 0; k + 1 < s.size(); ++k) EXPECT_GE(s[k], s[k + 1]);
  EXPECT_GE(s.back(), 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a).transpose() * to_eigen(a));
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_NEAR(s[k] * s[k], es.eigenvalues()(static_cast<Eigen::Index>(s.size() - 1 - k)), 1e-9);
  }
}

TEST(Svd, RankDeficientStillHasOrthonormalU) {
  Rng r(8);
  const Matrix a = low_rank(r, 10, 6, 2);
  const Svd d = svd(a);
  EXPECT_LE(oracle::max_abs_diff(oracle::matmul(transpose(d.U), d.U), Matrix::identity(6)), 1e-10);
  const Svd z = svd(Matrix(5, 4));
  for (double v : z.S) EXPECT_EQ(v, 0.0);
  EXPECT_LE(oracle::max_abs_diff(oracle::matmul(transpose(z.U), z.U), Matrix::identity(4)), 1e-12);
}

TEST(Svd, RejectsOversizeAndNonFinite) {
  EXPECT_THROW(svd(Matrix(kMaxSvdDim + 1, kMaxSvdDim + 1)), DimensionError);
  EXPECT_NO_THROW(svd(Matrix(kMaxSvdDim + 1, 2)));
  Matrix a(2, 2);
  a(0, 0) = std::nan("");
  EXPECT_THROW(svd(a), NumericError);
}

TEST(NumericalRank, CountsConstructedRank) {
  Rng r(12);
  for (std::size_t k = 1; k <= 6; ++k) EXPECT_EQ(numerical_rank(low_rank(r, 20, 15, k)), k);
  EXPECT_EQ(numerical_rank(Matrix(4, 4)), 0u);
  EXPECT_EQ(numerical_rank(Matrix::identity(5)), 5u);
  EXPECT_THROW(numerical_rank(Matrix::identity(2), 0.0), std::invalid_argument);
  EXPECT_THROW(numerical_rank(Matrix::identity(2), 1.0), std::invalid_argument);
}

TEST(Sampling, UniformHasRequestedMomentsAndBounds) {
  Rng r(21);
  const double std = 0.37;
  const Matrix u = uniform(r, 1000, 1000, std);
  const Moments mo = moments(u.data());
  EXPECT_NEAR(mo.mean, 0.0, 0.002);
  EXPECT_NEAR(mo.std, std, 0.005 * std);
  EXPECT_LE(max_abs(u), std::sqrt(3.0) * std);
  EXPECT_THROW(uniform(r, 2, 2, 0.0), std::invalid_argument);
}

TEST(Sampling, MomentsOfKnownData) {
  const std::vector<double> v{1, 2, 3, 4};
  const Moments m = moments(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(1.25));
  const auto cols = column_moments(Matrix{{1, 10}, {3, 10}});
  EXPECT_DOUBLE_EQ(cols[0].mean, 2.0);
  EXPECT_DOUBLE_EQ(cols[1].std, 0.0);
  const auto rows = row_moments(Matrix{{1, 3}, {5, 5}});
  EXPECT_DOUBLE_EQ(rows[0].std, 1.0);
}
