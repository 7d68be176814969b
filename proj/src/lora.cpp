#include "swlora/lora.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "swlora/numkit.hpp"

namespace swlora {

LoraLinear::LoraLinear(Matrix w, Matrix b, Matrix a, double alpha_)
    : W(std::move(w)), B(std::move(b)), A(std::move(a)), alpha(alpha_) {
  validate();
}

void LoraLinear::validate() const {
  if (B.rows() != W.rows() || A.cols() != W.cols() || B.cols() != A.rows()) {
    throw DimensionError("LoraLinear: W " + shape_str(W) + ", B " + shape_str(B) + ", A " + shape_str(A));
  }
  if (rank() > std::min(m(), n())) throw DimensionError("LoraLinear: rank exceeds min(m, n)");
  if (!(alpha > 0.0)) throw std::invalid_argument("LoraLinear: alpha must be positive");
}

Matrix LoraLinear::effective_weight() const { return W + sigma() * matmul(B, A); }

Matrix forward(const LoraLinear& layer, const Matrix& x) {
  if (x.rows() != layer.n()) throw DimensionError("forward: x " + shape_str(x) + " for n=" + std::to_string(layer.n()));
  Matrix y = matmul(layer.W, x);
  axpy(layer.sigma(), matmul(layer.B, matmul(layer.A, x)), y);
  require_finite(y, "forward");
  return y;
}

GradBundle backward(const LoraLinear& layer, const Matrix& x, const Matrix& upstream) {
  if (x.rows() != layer.n() || upstream.rows() != layer.m() || upstream.cols() != x.cols()) {
    throw DimensionError("backward: x " + shape_str(x) + ", upstream " + shape_str(upstream));
  }
  const double s = layer.sigma();
  const Matrix ax = matmul(layer.A, x);                  // r x batch
  const Matrix bt_up = matmul(transpose(layer.B), upstream);  // r x batch

  GradBundle g;
  // column k of grad_B = sigma * sum_t (a_k . x_t) up_t
  g.grad_B = s * matmul(upstream, transpose(ax));
  // row k of grad_A = sigma * sum_t (up_t . b_k) x_t
  g.grad_A = s * matmul(bt_up, transpose(x));
  g.grad_x = matmul(transpose(layer.W), upstream);
  axpy(s, matmul(transpose(layer.A), bt_up), g.grad_x);
  require_finite(g.grad_x, "backward");
  return g;
}

double switchlora_std_B(std::size_t m, std::size_t n, std::size_t r, double gain) {
  const double ratio = static_cast<double>(r) / std::sqrt(static_cast<double>(m) * static_cast<double>(n));
  return std::pow(ratio, 0.25) * std::sqrt(gain);
}

double switchlora_std_A(std::size_t m, std::size_t n, std::size_t r, double gain) {
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  const double ratio = std::sqrt(md) * static_cast<double>(r) / (std::sqrt(nd) * nd);
  return std::pow(ratio, 0.25) * std::sqrt(gain);
}

InitResult init_switchlora(Rng& rng, std::size_t m, std::size_t n, std::size_t r, const InitSpec& spec) {
  if (r == 0 || r > std::min(m, n)) throw std::invalid_argument("init: need 0 < r <= min(m, n)");
  if (!(spec.gain > 0.0)) throw std::invalid_argument("init: gain must be positive");
  InitResult out;
  if (spec.scheme == InitScheme::switchlora) {
    out.std_B = switchlora_std_B(m, n, r, spec.gain);
    out.std_A = switchlora_std_A(m, n, r, spec.gain);
    out.B = uniform(rng, m, r, out.std_B);
    out.A = uniform(rng, r, n, out.std_A);
  } else {
    out.std_B = 0.0;
    out.std_A = spec.gain / std::sqrt(static_cast<double>(n));
    out.B = Matrix::zeros(m, r);
    out.A = uniform(rng, r, n, out.std_A);
  }
  return out;
}

Matrix merge(LoraLinear& layer, Rng& rng, const InitSpec& spec) {
  layer.W = layer.effective_weight();
  require_finite(layer.W, "merge");
  layer.B = Matrix::zeros(layer.m(), layer.rank());
  layer.A = init_switchlora(rng, layer.m(), layer.n(), layer.rank(), spec).A;
  return layer.W;
}

}  // namespace swlora
