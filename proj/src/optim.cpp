#include "swlora/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace swlora {

VectorStepState::VectorStepState(std::size_t rows, std::size_t cols, Granularity g, AdamConfig cfg)
    : config(cfg), exp_avg(rows, cols), exp_avg_sq(rows, cols), granularity_(g) {
  const std::size_t slices = g == Granularity::rows ? rows : g == Granularity::cols ? cols : 1;
  step_vec.assign(slices, 0);
}

namespace {

inline std::size_t slice_of(Granularity g, std::size_t i, std::size_t j) {
  switch (g) {
    case Granularity::rows: return i;
    case Granularity::cols: return j;
    case Granularity::whole: break;
  }
  return 0;
}

}  // namespace

void apply_update(VectorStepState& state, Matrix& param, const Matrix& grad, const std::set<std::size_t>& frozen) {
  if (!param.same_shape(grad) || !param.same_shape(state.exp_avg)) {
    throw DimensionError("apply_update: param " + shape_str(param) + ", grad " + shape_str(grad) + ", state " +
                         shape_str(state.exp_avg));
  }
  const AdamConfig& c = state.config;
  const std::size_t slices = state.slice_count();

  std::vector<char> active(slices, 1);
  std::vector<double> bc1(slices), bc2(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    if (frozen.contains(s)) {
      active[s] = 0;
      continue;
    }
    const auto t = ++state.step_vec[s];
    bc1[s] = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    bc2[s] = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  }

  const Granularity g = state.granularity();
  for (std::size_t i = 0; i < param.rows(); ++i) {
    for (std::size_t j = 0; j < param.cols(); ++j) {
      const std::size_t s = slice_of(g, i, j);
      if (!active[s]) continue;
      const double gij = grad(i, j);
      double& m = state.exp_avg(i, j);
      double& v = state.exp_avg_sq(i, j);
      m = c.beta1 * m + (1.0 - c.beta1) * gij;
      v = c.beta2 * v + (1.0 - c.beta2) * gij * gij;
      const double m_hat = m / bc1[s];
      const double v_hat = v / bc2[s];
      double& p = param(i, j);
      if (c.weight_decay > 0.0) p -= c.lr * c.weight_decay * p;
      p -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
  require_finite(param, "apply_update");
}

void reset_slice(VectorStepState& state, std::size_t i) {
  if (i >= state.slice_count()) throw std::out_of_range("reset_slice: index " + std::to_string(i));
  state.step_vec[i] = 0;
  switch (state.granularity()) {
    case Granularity::rows:
      for (auto& x : state.exp_avg.row(i)) x = 0.0;
      for (auto& x : state.exp_avg_sq.row(i)) x = 0.0;
      break;
    case Granularity::cols:
      for (std::size_t r = 0; r < state.exp_avg.rows(); ++r) {
        state.exp_avg(r, i) = 0.0;
        state.exp_avg_sq(r, i) = 0.0;
      }
      break;
    case Granularity::whole:
      for (auto& x : state.exp_avg.data()) x = 0.0;
      for (auto& x : state.exp_avg_sq.data()) x = 0.0;
      break;
  }
}

void FreezeRegistry::freeze(const FreezeKey& key) {
  if (duration_ == 0) return;
  entries_[key] = Entry{duration_, true};
}

std::set<std::size_t> FreezeRegistry::frozen_indices(std::size_t layer, Side side) const {
  std::set<std::size_t> out;
  for (const auto& [key, entry] : entries_) {
    if (key.layer == layer && key.side == side) out.insert(key.index);
  }
  return out;
}

std::size_t FreezeRegistry::remaining(const FreezeKey& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? 0 : it->second.remaining;
}

std::vector<FreezeKey> FreezeRegistry::tick() {
  std::vector<FreezeKey> thawed;
  for (auto it = entries_.begin(); it != entries_.end();) {
    Entry& e = it->second;
    if (e.fresh) {
      e.fresh = false;
      ++it;
      continue;
    }
    if (--e.remaining == 0) {
      thawed.push_back(it->first);
      it = entries_.erase(it);
    } else {
      ++it;
    }
  }
  return thawed;
}

}  // namespace swlora
