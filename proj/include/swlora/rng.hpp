#pragma once

#include <array>
#include <cstdint>

namespace swlora {

/// Counter-based generator (Philox-4x32, 10 rounds). The output is a pure
/// function of (seed, stream, position), so any draw sequence is reproducible
/// across platforms and a stream can be checkpointed as three integers.
class Rng {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t position = 0;  // number of 64-bit words consumed
  };

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}
  explicit Rng(const State& s) : seed_(s.seed), stream_(s.stream), position_(s.position) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  State state() const { return {seed_, stream_, position_}; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform01();
  /// Uniform integer on [0, n). Unbiased (rejection sampling). n > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box-Muller; consumes two words per call.
  double normal();
  bool bernoulli(double p);

  /// The raw 4x32 Philox block for a counter/key pair, exposed for tests.
  static std::array<std::uint32_t, 4> philox_block(std::array<std::uint32_t, 4> ctr,
                                                   std::array<std::uint32_t, 2> key);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t position_ = 0;
};

}  // namespace swlora
