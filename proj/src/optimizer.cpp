#include "modrestore/optimizer.hpp"

#include <algorithm>

namespace modrestore {

double LrSchedule::at(std::int64_t iteration) const {
  if (iteration < 0) iteration = 0;
  std::int64_t halvings = 0;
  if (period > 0) {
    halvings = iteration / period;
  } else {
    halvings = std::count_if(milestones.begin(), milestones.end(), [&](std::int64_t m) { return iteration >= m; });
  }
  return std::ldexp(initial, -static_cast<int>(std::min<std::int64_t>(halvings, 1000)));
}

LrSchedule LrSchedule::stage1() { return {5e-4, 200'000, {}}; }

LrSchedule LrSchedule::stage2() { return {5e-4, 0, {50'000, 100'000, 200'000, 300'000, 400'000}}; }

double lr_at(int stage, std::int64_t iteration) {
  if (stage == 1) return LrSchedule::stage1().at(iteration);
  if (stage == 2) return LrSchedule::stage2().at(iteration);
  throw ConfigError("training stage must be 1 or 2");
}

}  // namespace modrestore
