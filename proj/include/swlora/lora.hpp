#pragma once

#include <cstddef>

#include "swlora/matrix.hpp"
#include "swlora/rng.hpp"

namespace swlora {

enum class InitScheme { switchlora, classic_lora };

/// Which adapter factor: B (vectors are columns) or A (vectors are rows).
enum class Side { B, A };

inline const char* to_string(Side s) { return s == Side::B ? "B" : "A"; }

struct InitSpec {
  double gain = 1.0;  // sqrt(2) for ReLU, 1 for identity
  InitScheme scheme = InitScheme::switchlora;
};

/// Linear layer y = (W + sigma * B * A) x with W frozen (m x n), B m x r,
/// A r x n and sigma = alpha / r. Column k of B pairs with row k of A.
struct LoraLinear {
  Matrix W;
  Matrix B;
  Matrix A;
  double alpha = 1.0;

  LoraLinear() = default;
  LoraLinear(Matrix w, Matrix b, Matrix a, double alpha);

  std::size_t m() const { return W.rows(); }
  std::size_t n() const { return W.cols(); }
  std::size_t rank() const { return B.cols(); }
  double sigma() const { return alpha / static_cast<double>(rank()); }

  /// Throws DimensionError unless W, B, A agree and r <= min(m, n).
  void validate() const;
  /// W + sigma * B * A, materialized. For tests and analysis only.
  Matrix effective_weight() const;
};

struct GradBundle {
  Matrix grad_B;
  Matrix grad_A;
  Matrix grad_x;
};

/// x is n x batch; returns m x batch. Never materializes B * A.
Matrix forward(const LoraLinear& layer, const Matrix& x);

/// Gradients of a loss summed over the batch columns, given upstream = dL/dy.
GradBundle backward(const LoraLinear& layer, const Matrix& x, const Matrix& upstream);

struct InitResult {
  Matrix B;
  Matrix A;
  double std_B = 0.0;
  double std_A = 0.0;
};

/// Standard deviations that balance forward scale and B/A update size:
///   std_B = (r / sqrt(m n))^(1/4) gain^(1/2)
///   std_A = (sqrt(m) r / (sqrt(n) n))^(1/4) gain^(1/2)
double switchlora_std_B(std::size_t m, std::size_t n, std::size_t r, double gain);
double switchlora_std_A(std::size_t m, std::size_t n, std::size_t r, double gain);

/// Samples B and A. classic_lora gives B = 0 and Kaiming-uniform A
/// (std = gain / sqrt(n)).
InitResult init_switchlora(Rng& rng, std::size_t m, std::size_t n, std::size_t r, const InitSpec& spec);

/// Folds sigma * B * A into W, zeroes B and redraws A per spec. Returns the new W.
Matrix merge(LoraLinear& layer, Rng& rng, const InitSpec& spec);

}  // namespace swlora
