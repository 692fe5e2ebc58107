// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/schedule.hpp"

namespace diffsim {

NoiseSchedule NoiseSchedule::toy_linear(int total_steps) {
  std::vector<double> ab(static_cast<std::size_t>(total_steps) + 1);
  for (int t = 0; t <= total_steps; ++t)
    ab[static_cast<std::size_t>(t)] =
        1.0 - static_cast<double>(t) / total_steps;
  return NoiseSchedule(total_steps, std::move(ab));
}

NoiseSchedule NoiseSchedule::scaled_linear(int total_steps, double beta_start,
                                           double beta_end) {
  std::vector<double> ab(static_cast<std::size_t>(total_steps) + 1);
  ab[0] = 1.0;
  const double s = std::sqrt(beta_start);
  const double e = std::sqrt(beta_end);
  double prod = 1.0;
  for (int i = 0; i < total_steps; ++i) {
    const double root =
        s + (e - s) * static_cast<double>(i) / (total_steps - 1);
    prod *= 1.0 - root * root;
    ab[static_cast<std::size_t>(i) + 1] = prod;
  }
  return NoiseSchedule(total_steps, std::move(ab));
}

}  // namespace diffsim
