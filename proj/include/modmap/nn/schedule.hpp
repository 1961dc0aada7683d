#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "modmap/error.hpp"

namespace modmap::nn {

/// One-cycle schedule: cosine ramp lr_init -> lr_max over the warm-up, then
/// cosine decay lr_max -> lr_final.
struct OneCycleSchedule {
  std::uint64_t total_steps = 1;
  double warmup_fraction = 0.10;
  double lr_init = 1e-4;
  double lr_max = 5e-4;
  double lr_final = 1e-6;

  void validate() const {
    if (total_steps < 1) throw UsageError("schedule needs at least one step");
    if (!(warmup_fraction > 0 && warmup_fraction < 1))
      throw UsageError("warmup_fraction must lie in (0, 1)");
    if (!(lr_init <= lr_max)) throw UsageError("lr_init must not exceed lr_max");
    if (!(lr_final <= lr_init)) throw UsageError("lr_final must not exceed lr_init");
  }

  /// Step at which lr_max is reached (at least 1, at most total_steps - 1
  /// when possible).
  std::uint64_t warmup_steps() const {
    auto w = static_cast<std::uint64_t>(std::llround(warmup_fraction * double(total_steps)));
    if (w < 1) w = 1;
    if (w >= total_steps && total_steps > 1) w = total_steps - 1;
    return w;
  }
};

inline double lr_at(const OneCycleSchedule& s, std::uint64_t step) {
  if (step > s.total_steps)
    throw UsageError("schedule step " + std::to_string(step) + " beyond " + std::to_string(s.total_steps));
  const std::uint64_t w = s.warmup_steps();
  if (step <= w) {
    const double f = double(step) / double(w);
    return s.lr_init + (s.lr_max - s.lr_init) * 0.5 * (1.0 - std::cos(std::numbers::pi * f));
  }
  const double f = double(step - w) / double(s.total_steps - w);
  return s.lr_final + (s.lr_max - s.lr_final) * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
}

} // namespace modmap::nn
