#pragma once

/**
 * @file dynamics.hpp
 * @brief Lorenz '63 vector field, fixed-step RK4 propagation and the scalar
 * observation operator used by the twin experiments.
 *
 *     x' = sigma (y - x)
 *     y' = x (rho - z) - y
 *     z' = x y - beta z
 */

#include "fetpf/types.hpp"

#include <cmath>
#include <cstddef>
#include <string>

namespace fetpf {

struct Lorenz63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

/// Observes a single state component with additive Gaussian noise.
struct ObservationModel {
  std::size_t observed_index = 0;
  double noise_variance = 8.0;

  void validate(std::size_t state_dim) const {
    detail::require(observed_index < state_dim,
                    "observation index " + std::to_string(observed_index) +
                        " out of range for state dimension " + std::to_string(state_dim));
    detail::require(noise_variance > 0.0 && std::isfinite(noise_variance),
                    "observation noise variance must be positive");
  }
};

inline StateVector lorenz63_rhs(const StateVector& state, double sigma, double rho, double beta) {
  detail::require(state.size() == 3, "Lorenz '63 state must have 3 components, got " +
                                         std::to_string(state.size()));
  StateVector out(3);
  out(0) = sigma * (state(1) - state(0));
  out(1) = state(0) * (rho - state(2)) - state(1);
  out(2) = state(0) * state(1) - beta * state(2);
  return out;
}

inline StateVector lorenz63_rhs(const StateVector& state, const Lorenz63Params& p = {}) {
  return lorenz63_rhs(state, p.sigma, p.rho, p.beta);
}

/// One classical fourth-order Runge-Kutta step of the Lorenz '63 field.
inline StateVector rk4_step(const StateVector& state, double dt, const Lorenz63Params& p = {}) {
  detail::require(dt >= 0.0, "rk4 step size must be nonnegative");
  const StateVector k1 = lorenz63_rhs(state, p);
  const StateVector k2 = lorenz63_rhs(state + 0.5 * dt * k1, p);
  const StateVector k3 = lorenz63_rhs(state + 0.5 * dt * k2, p);
  const StateVector k4 = lorenz63_rhs(state + dt * k3, p);
  return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline StateVector propagate(const StateVector& state, double interval, std::size_t substeps,
                             const Lorenz63Params& p = {}) {
  detail::require(substeps >= 1, "propagate needs at least one substep");
  detail::require(interval >= 0.0, "propagation interval must be nonnegative");
  const double dt = interval / static_cast<double>(substeps);
  StateVector x = state;
  for (std::size_t s = 0; s < substeps; ++s) x = rk4_step(x, dt, p);
  return x;
}

/// Propagates every column of an n x K state matrix.
inline Matrix propagate_columns(const Matrix& states, double interval, std::size_t substeps,
                                const Lorenz63Params& p = {}) {
  Matrix out(states.rows(), states.cols());
  for (Eigen::Index j = 0; j < states.cols(); ++j)
    out.col(j) = propagate(states.col(j), interval, substeps, p);
  return out;
}

/// `noise_draw` must be a standard-normal variate from the caller's stream.
inline double observe(const StateVector& state, const ObservationModel& model, double noise_draw) {
  model.validate(static_cast<std::size_t>(state.size()));
  return state(static_cast<Eigen::Index>(model.observed_index)) +
         std::sqrt(model.noise_variance) * noise_draw;
}

}  // namespace fetpf
