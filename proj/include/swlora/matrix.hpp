#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace swlora {

/// Thrown when operand shapes do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Dtype : unsigned char { f32 = 0, f64 = 1 };

template <typename T>
constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

/// Dense row-major matrix. Shapes with a zero extent are rejected; a 1x1
/// matrix is the smallest value.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;

  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_size(rows, cols)) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows) + "x" +
                           std::to_string(cols));
    }
  }

  /// Nested-list construction, mainly for tests: {{1, 2}, {3, 4}}.
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    checked_size(rows_, cols_);
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static BasicMatrix zeros(std::size_t rows, std::size_t cols) { return {rows, cols}; }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::vector<T> col(std::size_t j) const {
    std::vector<T> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }

  void set_col(std::size_t j, std::span<const T> values) {
    if (values.size() != rows_) throw DimensionError("set_col: length mismatch");
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = values[i];
  }

  void set_row(std::size_t i, std::span<const T> values) {
    if (values.size() != cols_) throw DimensionError("set_row: length mismatch");
    std::copy(values.begin(), values.end(), row(i).begin());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  bool same_shape(const BasicMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw DimensionError("matrix extents must be positive");
    return rows * cols;
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
std::string shape_str(const BasicMatrix<T>& m) {
  return shape_str(m.rows(), m.cols());
}

template <typename T>
void require_finite(const BasicMatrix<T>& m, const char* what) {
  if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite result");
}

/// Standard product. Accumulates in double regardless of T.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> acc(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* out = acc.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const T* brow = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += aip * static_cast<double>(brow[j]);
    }
  }
  BasicMatrix<T> c(m, n);
  std::transform(acc.begin(), acc.end(), c.data().begin(), [](double v) { return static_cast<T>(v); });
  require_finite(c, "matmul");
  return c;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <typename T>
BasicMatrix<T> operator+(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (!a.same_shape(b)) throw DimensionError("add: " + shape_str(a) + " vs " + shape_str(b));
  BasicMatrix<T> c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  return c;
}

template <typename T>
BasicMatrix<T> operator-(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (!a.same_shape(b)) throw DimensionError("sub: " + shape_str(a) + " vs " + shape_str(b));
  BasicMatrix<T> c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
  return c;
}

template <typename T>
BasicMatrix<T> operator*(T s, const BasicMatrix<T>& a) {
  BasicMatrix<T> c = a;
  for (auto& v : c.data()) v *= s;
  return c;
}

/// y += s * x, element-wise.
template <typename T>
void axpy(T s, const BasicMatrix<T>& x, BasicMatrix<T>& y) {
  if (!x.same_shape(y)) throw DimensionError("axpy: " + shape_str(x) + " vs " + shape_str(y));
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] += s * xd[i];
}

template <typename T>
double frobenius_norm(const BasicMatrix<T>& a) {
  double s = 0.0;
  for (T v : a.data()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

template <typename T>
double max_abs(const BasicMatrix<T>& a) {
  double s = 0.0;
  for (T v : a.data()) s = std::max(s, std::abs(static_cast<double>(v)));
  return s;
}

template <typename To, typename From>
BasicMatrix<To> cast(const BasicMatrix<From>& a) {
  BasicMatrix<To> out(a.rows(), a.cols());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

/// u * v^T.
Matrix outer(std::span<const double> u, std::span<const double> v);

/// Columns [first, first + count) as an rows x count matrix.
Matrix col_block(const Matrix& a, std::size_t first, std::size_t count);
/// Rows [first, first + count) as a count x cols matrix.
Matrix row_block(const Matrix& a, std::size_t first, std::size_t count);

}  // namespace swlora
