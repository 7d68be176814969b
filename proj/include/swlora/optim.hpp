#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "swlora/lora.hpp"
#include "swlora/matrix.hpp"

namespace swlora {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when > 0
};

/// How the step counter is sliced: one counter for the whole tensor, one per
/// row (LoRA A), or one per column (LoRA B).
enum class Granularity { whole, rows, cols };

/// Adam state whose bias-correction step is tracked per row or per column,
/// so a single adapter vector can be reset without disturbing the others.
class VectorStepState {
 public:
  VectorStepState() = default;
  VectorStepState(std::size_t rows, std::size_t cols, Granularity g, AdamConfig cfg = {});

  static VectorStepState for_lora_B(const Matrix& B, AdamConfig cfg = {}) {
    return {B.rows(), B.cols(), Granularity::cols, cfg};
  }
  static VectorStepState for_lora_A(const Matrix& A, AdamConfig cfg = {}) {
    return {A.rows(), A.cols(), Granularity::rows, cfg};
  }

  Granularity granularity() const { return granularity_; }
  std::size_t slice_count() const { return step_vec.size(); }

  AdamConfig config;
  Matrix exp_avg;
  Matrix exp_avg_sq;
  std::vector<std::uint64_t> step_vec;

 private:
  Granularity granularity_ = Granularity::whole;
};

/// One Adam(W) step. Slices listed in `frozen` are left completely untouched:
/// parameter, both moments and their step counter.
void apply_update(VectorStepState& state, Matrix& param, const Matrix& grad,
                  const std::set<std::size_t>& frozen = {});

/// Zeroes both moment slices and the step counter of slice i.
void reset_slice(VectorStepState& state, std::size_t i);

struct FreezeKey {
  std::size_t layer = 0;
  Side side = Side::A;  // the factor whose vector is frozen
  std::size_t index = 0;

  friend auto operator<=>(const FreezeKey&, const FreezeKey&) = default;
};

/// Countdown of frozen adapter vectors. An entry registered during step t
/// blocks updates at steps t+1 .. t+N and is released by the tick of step t+N.
class FreezeRegistry {
 public:
  explicit FreezeRegistry(std::size_t duration = 5) : duration_(duration) {}

  std::size_t duration() const { return duration_; }

  /// Registers (or restarts) a countdown of N steps. N = 0 is a no-op.
  void freeze(const FreezeKey& key);
  bool is_frozen(const FreezeKey& key) const { return entries_.contains(key); }
  std::set<std::size_t> frozen_indices(std::size_t layer, Side side) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t remaining(const FreezeKey& key) const;

  /// End-of-step countdown. Returns the entries released.
  std::vector<FreezeKey> tick();

  struct Entry {
    std::size_t remaining = 0;
    bool fresh = false;  // registered since the last tick
  };
  const std::map<FreezeKey, Entry>& entries() const { return entries_; }
  void restore(std::map<FreezeKey, Entry> entries) { entries_ = std::move(entries); }

 private:
  std::size_t duration_;
  std::map<FreezeKey, Entry> entries_;
};

}  // namespace swlora
