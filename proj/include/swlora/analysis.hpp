#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "swlora/model.hpp"
#include "swlora/numkit.hpp"

namespace swlora {

/// Spectra of one linear layer: the effective weight and its total change
/// since the reference snapshot.
struct RankReport {
  std::size_t layer = 0;
  std::vector<double> effective_sv;
  std::vector<double> delta_sv;
  std::size_t effective_rank = 0;
  std::size_t delta_rank = 0;
};

RankReport layer_rank_report(std::size_t layer, const Matrix& effective, const Matrix& reference,
                             double rel_tol = kDefaultRankTol);
std::vector<RankReport> rank_report(const ToyModel& model, double rel_tol = kDefaultRankTol);
/// Reads the layer tensors of a training checkpoint directory.
std::vector<RankReport> rank_report(const std::filesystem::path& checkpoint_dir, double rel_tol = kDefaultRankTol);

/// CSV with header `layer,kind,index,value`; kind is effective or delta.
void write_spectrum_csv(std::ostream& os, const std::vector<RankReport>& reports);

/// Decoder-only transformer inventory in the LLaMA layout: per block
/// q/k/v/o (h x h), gate/up (I x h), down (h x I) and two RMSNorm vectors;
/// token embedding, output head (unless tied) and a final norm.
struct ArchSpec {
  std::string name;
  std::uint64_t n_layers = 0;
  std::uint64_t hidden = 0;
  std::uint64_t intermediate = 0;
  std::uint64_t vocab = 32100;
  bool tie_embeddings = false;
  std::uint64_t batch = 0;
  std::uint64_t seq_len = 0;
  /// Headline size ("1.3B") used by the offload rule of thumb; 0 means psi().
  double nominal_params = 0.0;

  struct Linear {
    std::string name;
    std::uint64_t m = 0, n = 0;  // out x in
  };
  /// Linear layers of one block.
  std::vector<Linear> block_linears() const;
  std::uint64_t embedding_params() const;
  std::uint64_t norm_params() const;
  /// Total parameter count.
  std::uint64_t psi() const;
  /// sum r (m + n) over every block linear.
  std::uint64_t adapter_params(std::uint64_t r) const;
  /// Parameters that receive gradients: adapters plus embeddings and norms
  /// under (Switch)LoRA, everything in full-rank mode.
  std::uint64_t trainable_params(Mode mode, std::uint64_t r) const;

  double headline_params() const { return nominal_params > 0.0 ? nominal_params : static_cast<double>(psi()); }

  void validate() const;
};

/// Built-in specs: 130m, 250m, 350m, 1p3b, 3b, 7b.
ArchSpec arch_preset(const std::string& name);
std::vector<std::string> arch_preset_names();
/// Flat `key = value` file (# comments, optional quotes). Keys: name,
/// preset, n_layers, hidden, intermediate, vocab, tie_embeddings, batch,
/// seq_len, nominal_params. A preset supplies defaults for keys not given.
ArchSpec parse_arch_spec(const std::string& text, const std::string& origin = "<string>");
ArchSpec load_arch_spec(const std::filesystem::path& path);

/// Adam keeps fp32 master weights, two moments and low-precision
/// parameter/gradient copies: 12 bytes per trained parameter.
inline constexpr std::uint64_t kAdamBytesPerParam = 12;
inline std::uint64_t optimizer_bytes(std::uint64_t params) { return kAdamBytesPerParam * params; }

struct MemoryEstimate {
  Mode mode = Mode::full_rank;
  std::uint64_t rank = 0;
  std::uint64_t total_params = 0;
  std::uint64_t trainable_params = 0;
  std::uint64_t adapter_params = 0;  // 0 in full-rank mode
  /// 12 x trained-matrix parameters: all of them in full-rank mode, the
  /// adapters otherwise.
  std::uint64_t bytes = 0;
  /// 12 x every parameter with optimizer state (adapters plus embeddings and norms).
  std::uint64_t trainable_bytes = 0;
  /// 2r/h for a square h x h layer (1 in full-rank mode).
  double square_ratio = 1.0;
};
MemoryEstimate estimate_optimizer_memory(const ArchSpec& spec, Mode mode, std::uint64_t r);

/// Bytes moved per step: switch_freq * r / h * total_params * bytes_per_param.
double estimate_offload(double switch_freq, std::uint64_t r, std::uint64_t h, double total_params,
                        double bytes_per_param);
/// Per-step round trip of the switched candidate vectors for a concrete
/// inventory: adapter_params * switch_freq * bytes_per_param, both directions.
double estimate_offload_roundtrip(const ArchSpec& spec, std::uint64_t r, double switch_freq,
                                  double bytes_per_param = 4.0);

struct TrafficEstimate {
  Mode mode = Mode::full_rank;
  std::uint64_t params = 0;  // parameters whose gradients are all-reduced
  std::uint64_t bytes = 0;
  double ratio = 1.0;  // relative to full-rank training
};
TrafficEstimate estimate_dp_traffic(const ArchSpec& spec, Mode mode, std::uint64_t r,
                                    std::uint64_t grad_bytes = 2);

/// `mode,params,bytes,ratio` rows for the three modes.
void write_estimate_csv(std::ostream& os, const ArchSpec& spec, std::uint64_t r);

}  // namespace swlora
