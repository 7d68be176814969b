#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "swlora/rng.hpp"

namespace swlora {

/// Exponentially decaying switch frequency. Each adapter vector is switched
/// with mean interval interval0 * e^(theta * step), so a rank-r layer expects
///   s(step) = r / (interval0 * e^(theta * step))
/// switches per side per step.
struct SwitchSchedule {
  double interval0 = 40.0;
  double theta = 0.0;
  double ratio = 0.1;
  std::uint64_t total_steps = 1;
  std::size_t r = 1;

  /// Calibrates theta from (ratio, total_steps).
  static SwitchSchedule calibrated(double interval0, double ratio, std::uint64_t total_steps, std::size_t r);

  double expected(std::uint64_t step) const;
};

/// theta such that the frequency at ratio * total_steps is one third of the
/// initial one: theta = ln 3 / (ratio * total_steps).
double calibrate_theta(std::uint64_t total_steps, double ratio);

/// s = r / (interval0 * e^(theta * step)); 0 when interval0 is infinite.
double expected_switches(std::uint64_t step, std::size_t r, double interval0, double theta);

/// floor(s) + Bernoulli(s - floor(s)). Always consumes exactly one draw.
std::size_t switch_num(Rng& rng, std::uint64_t step, std::size_t r, double interval0, double theta);

/// `count` distinct indices from [0, r) by partial Fisher-Yates.
std::vector<std::size_t> draw_indices(Rng& rng, std::size_t count, std::size_t r);

}  // namespace swlora
