#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "swlora/matrix.hpp"
#include "swlora/rng.hpp"

namespace swlora {

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thin SVD: m = U * diag(S) * V^T with U rows x k, V cols x k,
/// k = min(rows, cols), S descending.
struct Svd {
  Matrix U;
  std::vector<double> S;
  Matrix V;
};

inline constexpr std::size_t kMaxSvdDim = 512;
inline constexpr double kDefaultRankTol = 1e-6;

/// One-sided Jacobi SVD. Throws ConvergenceError after 100 sweeps.
Svd svd(const Matrix& m);
std::vector<double> singular_values(const Matrix& m);

/// Count of singular values above rel_tol * s_max.
std::size_t numerical_rank(const Matrix& m, double rel_tol = kDefaultRankTol);

/// I.i.d. uniform entries on [-sqrt(3) std, sqrt(3) std], i.e. zero mean with
/// the requested standard deviation.
Matrix uniform(Rng& rng, std::size_t rows, std::size_t cols, double std);
Matrix normal(Rng& rng, std::size_t rows, std::size_t cols, double std = 1.0);

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // population std
};

Moments moments(std::span<const double> values);
std::vector<Moments> column_moments(const Matrix& m);
std::vector<Moments> row_moments(const Matrix& m);

}  // namespace swlora
