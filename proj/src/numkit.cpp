#include "swlora/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace swlora {

Matrix outer(std::span<const double> u, std::span<const double> v) {
  Matrix out(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = u[i] * v[j];
  return out;
}

Matrix col_block(const Matrix& a, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > a.cols()) throw DimensionError("col_block out of range");
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, first + j);
  return out;
}

Matrix row_block(const Matrix& a, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > a.rows()) throw DimensionError("row_block out of range");
  Matrix out(count, a.cols());
  for (std::size_t i = 0; i < count; ++i) out.set_row(i, a.row(first + i));
  return out;
}

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kRelOrthoTol = 1e-15;
constexpr double kAbsOffTol = 1e-12;

// Hestenes one-sided Jacobi on a tall matrix (rows >= cols). Works on columns.
Svd jacobi_tall(const Matrix& a) {
  const std::size_t m = a.rows(), n = a.cols();
  // Column-major working copies so column pairs are contiguous.
  std::vector<double> u(m * n), v(n * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) u[j * m + i] = a(i, j);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  const double fro = frobenius_norm(a);
  const double abs_tol = (kAbsOffTol * fro) * (kAbsOffTol * fro);

  bool converged = fro == 0.0;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      double* up = u.data() + p * m;
      double* vp = v.data() + p * n;
      for (std::size_t q = p + 1; q < n; ++q) {
        double* uq = u.data() + q * m;
        double* vq = v.data() + q * n;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += up[i] * up[i];
          beta += uq[i] * uq[i];
          gamma += up[i] * uq[i];
        }
        if (std::abs(gamma) <= kRelOrthoTol * std::sqrt(alpha * beta) || std::abs(gamma) <= abs_tol) {
          continue;
        }
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = up[i], y = uq[i];
          up[i] = c * x - s * y;
          uq[i] = s * x + c * y;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged) throw ConvergenceError("svd: Jacobi sweeps did not converge");

  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += u[j * m + i] * u[j * m + i];
    sv[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

  Svd out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double smax = sv[order[0]];
  std::vector<std::size_t> degenerate;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.S[k] = sv[j];
    for (std::size_t i = 0; i < n; ++i) out.V(i, k) = v[j * n + i];
    if (sv[j] == 0.0 || sv[j] < 1e-14 * smax) {
      degenerate.push_back(k);
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) out.U(i, k) = u[j * m + i] / sv[j];
  }

  // Complete U with an orthonormal basis where singular values vanish.
  std::size_t basis = 0;
  for (std::size_t k : degenerate) {
    while (basis < m) {
      std::vector<double> e(m, 0.0);
      e[basis++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < n; ++c) {
          if (c == k) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += out.U(i, c) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= d * out.U(i, c);
        }
      }
      double nrm = 0.0;
      for (double x : e) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) out.U(i, k) = e[i] / nrm;
        break;
      }
    }
  }
  return out;
}

}  // namespace

Svd svd(const Matrix& m) {
  if (std::min(m.rows(), m.cols()) > kMaxSvdDim) {
    throw DimensionError("svd: min dimension exceeds " + std::to_string(kMaxSvdDim));
  }
  require_finite(m, "svd input");
  if (m.rows() >= m.cols()) return jacobi_tall(m);
  Svd t = jacobi_tall(transpose(m));
  return {std::move(t.V), std::move(t.S), std::move(t.U)};
}

std::vector<double> singular_values(const Matrix& m) { return svd(m).S; }

std::size_t numerical_rank(const Matrix& m, double rel_tol) {
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw std::invalid_argument("numerical_rank: rel_tol must be in (0, 1)");
  const auto s = singular_values(m);
  if (s.empty() || s.front() == 0.0) return 0;
  const double cut = rel_tol * s.front();
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [cut](double x) { return x > cut; }));
}

Matrix uniform(Rng& rng, std::size_t rows, std::size_t cols, double std) {
  if (!(std > 0.0) || !std::isfinite(std)) throw std::invalid_argument("uniform: std must be positive");
  const double half_width = std::sqrt(3.0) * std;
  Matrix out(rows, cols);
  for (auto& x : out.data()) x = (2.0 * rng.uniform01() - 1.0) * half_width;
  return out;
}

Matrix normal(Rng& rng, std::size_t rows, std::size_t cols, double std) {
  if (!(std > 0.0) || !std::isfinite(std)) throw std::invalid_argument("normal: std must be positive");
  Matrix out(rows, cols);
  for (auto& x : out.data()) x = std * rng.normal();
  return out;
}

Moments moments(std::span<const double> values) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

std::vector<Moments> column_moments(const Matrix& m) {
  std::vector<Moments> out;
  out.reserve(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    const auto c = m.col(j);
    out.push_back(moments(c));
  }
  return out;
}

std::vector<Moments> row_moments(const Matrix& m) {
  std::vector<Moments> out;
  out.reserve(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out.push_back(moments(m.row(i)));
  return out;
}

}  // namespace swlora
