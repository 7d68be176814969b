#include "swlora/schedule.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace swlora {

double calibrate_theta(std::uint64_t total_steps, double ratio) {
  if (total_steps < 1) throw std::invalid_argument("calibrate_theta: total_steps must be >= 1");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("calibrate_theta: ratio must be in (0, 1]");
  return std::log(3.0) / (ratio * static_cast<double>(total_steps));
}

SwitchSchedule SwitchSchedule::calibrated(double interval0, double ratio, std::uint64_t total_steps, std::size_t r) {
  if (!(interval0 > 0.0)) throw std::invalid_argument("schedule: interval0 must be positive");
  return {interval0, calibrate_theta(total_steps, ratio), ratio, total_steps, r};
}

double SwitchSchedule::expected(std::uint64_t step) const { return expected_switches(step, r, interval0, theta); }

double expected_switches(std::uint64_t step, std::size_t r, double interval0, double theta) {
  if (!(interval0 > 0.0)) throw std::invalid_argument("schedule: interval0 must be positive");
  if (std::isinf(interval0)) return 0.0;
  return static_cast<double>(r) / (interval0 * std::exp(theta * static_cast<double>(step)));
}

std::size_t switch_num(Rng& rng, std::uint64_t step, std::size_t r, double interval0, double theta) {
  const double s = expected_switches(step, r, interval0, theta);
  const double whole = std::floor(s);
  const double u = rng.uniform01();
  return static_cast<std::size_t>(whole) + (u < s - whole ? 1 : 0);
}

std::vector<std::size_t> draw_indices(Rng& rng, std::size_t count, std::size_t r) {
  if (count > r) throw std::invalid_argument("draw_indices: count exceeds r");
  std::vector<std::size_t> pool(r);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t k = 0; k < count; ++k) {
    const auto pick = k + static_cast<std::size_t>(rng.uniform_index(r - k));
    std::swap(pool[k], pool[pick]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace swlora
