#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace swlora {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast self-check of the core invariants: switch forward invariance,
/// gradient checks, scheduler statistics, optimizer reset and freeze
/// semantics, batched switching. Takes a few seconds.
std::vector<CheckResult> run_verify(std::uint64_t seed = 0);

}  // namespace swlora
