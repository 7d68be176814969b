#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "swlora/lora.hpp"
#include "swlora/matrix.hpp"
#include "swlora/optim.hpp"
#include "swlora/rng.hpp"

namespace swlora {

enum class SelectionPolicy { sequential, random };
enum class Tier { resident, offloaded };

const char* to_string(SelectionPolicy p);
const char* to_string(Tier t);
SelectionPolicy parse_policy(const std::string& s);
Tier parse_tier(const std::string& s);

class OffloadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CandidateBackend;

/// Candidate vectors for one layer: k = min(m, n) vectors of length m for the
/// B side (cand_B is m x k, column j is candidate j) and k vectors of length n
/// for the A side (cand_A is k x n, row j is candidate j).
///
/// In the offloaded tier the vectors live in a file; writes are queued to a
/// background thread and every read waits for the queue to drain first.
class CandidateStore {
 public:
  CandidateStore(const Matrix& cand_B, const Matrix& cand_A, SelectionPolicy policy, Rng select_rng,
                 Tier tier = Tier::resident, const std::filesystem::path& offload_dir = {});
  ~CandidateStore();
  CandidateStore(CandidateStore&&) noexcept;
  CandidateStore& operator=(CandidateStore&&) noexcept;

  /// Draws both candidate sets i.i.d. uniform with the given stds (std 0 gives zeros).
  static CandidateStore sample(Rng& init_rng, std::size_t m, std::size_t n, double std_B, double std_A,
                               SelectionPolicy policy, Rng select_rng, Tier tier = Tier::resident,
                               const std::filesystem::path& offload_dir = {});

  std::size_t m() const { return m_; }
  std::size_t n() const { return n_; }
  std::size_t size() const { return k_; }
  std::size_t vector_length(Side side) const { return side == Side::B ? m_ : n_; }

  SelectionPolicy policy() const { return policy_; }
  Tier tier() const { return tier_; }
  std::size_t cursor(Side side) const { return side == Side::B ? cursor_B_ : cursor_A_; }
  void set_cursor(Side side, std::size_t c);
  const Rng& select_rng() const { return select_rng_; }
  void set_select_rng(const Rng& rng) { select_rng_ = rng; }

  /// Next candidate index: uniform for the random policy, cursor order with
  /// wraparound for the sequential one.
  std::size_t select(Side side);

  std::vector<double> read(Side side, std::size_t j) const;
  void write(Side side, std::size_t j, std::span<const double> v);
  /// `count` consecutive vectors starting at j0, packed vector after vector.
  std::vector<double> read_range(Side side, std::size_t j0, std::size_t count) const;
  void write_range(Side side, std::size_t j0, std::size_t count, std::span<const double> packed);

  Matrix cand_B() const;
  Matrix cand_A() const;

  /// Blocks until all queued tier transfers have landed. No-op when resident.
  void offload_sync() const;
  /// Moves the candidates to another tier (contents preserved bit-exactly).
  void set_tier(Tier tier, const std::filesystem::path& offload_dir = {});

  /// Deep copy. An offloaded store is copied into a fresh file in the same directory.
  CandidateStore clone() const;

 private:
  void check_range(Side side, std::size_t j0, std::size_t count) const;

  std::size_t m_ = 0, n_ = 0, k_ = 0;
  SelectionPolicy policy_ = SelectionPolicy::sequential;
  Tier tier_ = Tier::resident;
  std::filesystem::path offload_dir_;
  std::size_t cursor_B_ = 0, cursor_A_ = 0;
  Rng select_rng_;
  std::unique_ptr<CandidateBackend> backend_;
};

/// Optimizer state of one adapter pair.
struct AdapterOptState {
  VectorStepState B;
  VectorStepState A;

  static AdapterOptState for_layer(const LoraLinear& layer, AdamConfig cfg = {}) {
    return {VectorStepState::for_lora_B(layer.B, cfg), VectorStepState::for_lora_A(layer.A, cfg)};
  }
};

struct SwitchEvent {
  std::uint64_t step = 0;
  std::size_t layer = 0;
  Side side = Side::B;
  std::size_t lora_index = 0;       // i in [0, r)
  std::size_t candidate_index = 0;  // j in [0, min(m, n))

  friend bool operator==(const SwitchEvent&, const SwitchEvent&) = default;
};

/// Exchanges adapter vector i of `side` with candidate j while keeping the
/// layer function fixed:
///   W += sigma * (old - new) (x) counterpart
/// then resets the optimizer state of the counterpart vector and freezes it.
/// The switched vector's own optimizer state is left alone.
SwitchEvent switch_vector(LoraLinear& layer, CandidateStore& store, Side side, std::size_t i, std::size_t j,
                          AdapterOptState& opt, FreezeRegistry& freeze, std::size_t layer_id, std::uint64_t now);

/// Same result as calling switch_vector for each pair in order, done with one
/// block transfer. The j values must be consecutive (j_k = j_0 + k) and the
/// i values distinct.
std::vector<SwitchEvent> batched_switch(LoraLinear& layer, CandidateStore& store, Side side,
                                        std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                        AdapterOptState& opt, FreezeRegistry& freeze, std::size_t layer_id,
                                        std::uint64_t now);

/// Appends one JSON object per line: {"step","layer","side","i","j"}.
void append_switch_log(std::ostream& os, const SwitchEvent& e);
std::vector<SwitchEvent> read_switch_log(std::istream& is);

void save_store(const std::filesystem::path& dir, const std::string& prefix, const CandidateStore& store);
CandidateStore load_store(const std::filesystem::path& dir, const std::string& prefix, Tier tier = Tier::resident,
                          const std::filesystem::path& offload_dir = {});

}  // namespace swlora
