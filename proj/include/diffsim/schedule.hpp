// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "diffsim/errors.hpp"
#include "diffsim/rng.hpp"
#include "diffsim/types.hpp"

namespace diffsim {

// Cumulative noise schedule: alpha_bar(t) for t in [0, T], with
// alpha_bar(0) == 1 (clean input).
class NoiseSchedule {
 public:
  // Analytic schedule used by the toy backends: alpha_bar(t) = 1 - t/T.
  static NoiseSchedule toy_linear(int total_steps = 1000);

  // Stable Diffusion's native schedule: beta_i interpolated between
  // sqrt(beta_start) and sqrt(beta_end) then squared, alpha_bar as the
  // running product of (1 - beta_i).
  static NoiseSchedule scaled_linear(int total_steps = 1000,
                                     double beta_start = 0.00085,
                                     double beta_end = 0.012);

  int total_steps() const { return total_steps_; }

  double alpha_bar(int t) const {
    if (t < 0 || t > total_steps_)
      throw ValidationError("timestep " + std::to_string(t) +
                            " outside [0, " + std::to_string(total_steps_) +
                            "]");
    return alpha_bar_[static_cast<std::size_t>(t)];
  }

 private:
  NoiseSchedule(int total_steps, std::vector<double> alpha_bar)
      : total_steps_(total_steps), alpha_bar_(std::move(alpha_bar)) {}

  int total_steps_;
  std::vector<double> alpha_bar_;  // index 0..T
};

// x_t = sqrt(alpha_bar_t) * latent + sqrt(1 - alpha_bar_t) * noise.
template <typename Scalar>
MatrixX<Scalar> forward_noise(const MatrixX<Scalar>& latent, int timestep,
                              const MatrixX<Scalar>& noise,
                              const NoiseSchedule& schedule) {
  if (latent.rows() != noise.rows() || latent.cols() != noise.cols())
    throw DimensionError("forward_noise: latent/noise shape mismatch");
  const double ab = schedule.alpha_bar(timestep);
  const Scalar a = static_cast<Scalar>(std::sqrt(ab));
  const Scalar b = static_cast<Scalar>(std::sqrt(1.0 - ab));
  return a * latent + b * noise;
}

// Standard-normal matrix filled in row-major order from the stream; the
// fill order is part of the determinism contract.
template <typename Scalar>
MatrixX<Scalar> gaussian_matrix(Eigen::Index rows, Eigen::Index cols,
                                Rng& rng) {
  MatrixX<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<Scalar>(rng.normal());
  return m;
}

}  // namespace diffsim
