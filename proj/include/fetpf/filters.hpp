#pragma once

/**
 * @file filters.hpp
 * @brief Single-window analysis operators.
 *
 *  - ETPF:  X^a = X^f T*, followed by canonical rejuvenation.
 *  - ETPF2: X^a = X^f (T* + D), D restoring the importance covariance,
 *           followed by canonical rejuvenation.
 *  - FETPF: X^a = [X^f, X_syn] T*, with T* of size (N+M) x N built from the
 *           shrinkage-augmented prior; no post-hoc perturbation.
 *
 * Forecast propagation is not part of a step.
 */

#include "fetpf/dynamics.hpp"
#include "fetpf/ensembles.hpp"
#include "fetpf/shrinkage.hpp"
#include "fetpf/transport.hpp"
#include "fetpf/types.hpp"

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace fetpf {

enum class FilterVariant { ETPF, ETPF2, FETPF };

inline std::string_view to_string(FilterVariant v) {
  switch (v) {
    case FilterVariant::ETPF:
      return "etpf";
    case FilterVariant::ETPF2:
      return "etpf2";
    case FilterVariant::FETPF:
      return "fetpf";
  }
  return "unknown";
}

struct FilterConfig {
  FilterVariant variant = FilterVariant::ETPF;
  double tau = 0.04;
  std::size_t synthetic_count = 100;
  AnomalyFamily family = AnomalyFamily::Gaussian;
  double inflation_alpha = 1.0;
  std::vector<ShrinkageTarget> targets;
  ObservationModel observation;
  ShrinkageOptions shrinkage;

  void validate(std::size_t state_dim) const {
    observation.validate(state_dim);
    detail::require(tau >= 0.0 && std::isfinite(tau), "rejuvenation tau must be nonnegative");
    if (variant != FilterVariant::FETPF) return;
    detail::require(!targets.empty(), "FETPF needs at least one shrinkage target");
    detail::require(synthetic_count >= 2, "FETPF needs at least two synthetic members");
    detail::require(inflation_alpha > 0.0, "inflation alpha must be positive");
    for (const auto& t : targets) {
      t.validate();
      detail::require(static_cast<std::size_t>(t.covariance.rows()) == state_dim,
                      "target '" + t.label + "' does not match the state dimension");
    }
  }
};

/// Output of one assimilation window.
struct AnalysisResult {
  Ensemble analysis;
  /// Mean of the transported ensemble before any rejuvenation.
  StateVector transported_mean;
  /// Importance-weighted prior mean the transport must reproduce.
  StateVector weighted_prior_mean;
  /// ETPF2 only: sample covariance before rejuvenation and its target.
  Matrix transported_covariance;
  Matrix importance_covariance;
  Vector posterior_weights;
  double transport_cost = 0.0;
  double gamma = 0.0;
  bool collapsed = false;
};

/**
 * X + sqrt(tau/(N-1)) A^f eta (I - 11^T/N) with eta an N x N standard normal
 * matrix drawn column by column. The column mean is unchanged. tau = 0
 * returns the input without consuming random numbers.
 */
template <std::uniform_random_bit_generator Urbg>
Matrix canonical_rejuvenation(const Matrix& analysis_states, const Matrix& forecast_anomalies,
                              double tau, Urbg& rng) {
  const auto n_mem = analysis_states.cols();
  detail::require(tau >= 0.0, "rejuvenation tau must be nonnegative");
  detail::require(n_mem >= 2, "rejuvenation needs at least two members");
  detail::require(forecast_anomalies.rows() == analysis_states.rows() && forecast_anomalies.cols() == n_mem,
                  "forecast anomalies do not match the analysis ensemble");
  if (tau == 0.0) return analysis_states;

  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix eta(n_mem, n_mem);
  for (Eigen::Index j = 0; j < n_mem; ++j)
    for (Eigen::Index i = 0; i < n_mem; ++i) eta(i, j) = normal(rng);
  // Right projection: subtract the row means of (A^f eta).
  Matrix perturbation = forecast_anomalies * eta;
  perturbation = anomalies(perturbation);
  return analysis_states + std::sqrt(tau / static_cast<double>(n_mem - 1)) * perturbation;
}

namespace detail {

inline void require_uniform(const Ensemble& ens) {
  ens.validate();
  const double u = 1.0 / static_cast<double>(ens.size());
  require((ens.weights.array() - u).abs().maxCoeff() <= 1e-12, "forecast weights must be uniform");
}

inline void require_finite(const Matrix& states, std::string_view where) {
  if (!states.allFinite()) throw FilterDivergence(std::string(where) + ": non-finite analysis state");
}

// Square transport of the weighted forecast onto N equally weighted members.
inline AnalysisResult transport_square(const Ensemble& forecast, double y, const FilterConfig& cfg,
                                       TransportPlan& plan) {
  AnalysisResult out;
  const auto n_mem = forecast.size();
  out.posterior_weights = likelihood_weights(forecast, y, cfg.observation);
  out.collapsed = weights_collapsed(out.posterior_weights);
  out.weighted_prior_mean = forecast.states * out.posterior_weights;
  plan = solve_transport(cost_matrix(forecast.states, forecast.states),
                         static_cast<double>(n_mem) * out.posterior_weights, Vector::Ones(n_mem));
  out.transport_cost = plan.cost;
  return out;
}

}  // namespace detail

template <std::uniform_random_bit_generator Urbg>
AnalysisResult etpf_step(const Ensemble& forecast, double y, const FilterConfig& cfg, Urbg& rng) {
  detail::require_uniform(forecast);
  cfg.validate(static_cast<std::size_t>(forecast.dim()));
  TransportPlan plan;
  AnalysisResult out = detail::transport_square(forecast, y, cfg, plan);
  Matrix xa = apply_transport(forecast.states, plan);
  out.transported_mean = xa.rowwise().mean();
  if (forecast.size() >= 2) xa = canonical_rejuvenation(xa, anomalies(forecast.states), cfg.tau, rng);
  detail::require_finite(xa, "etpf");
  out.analysis = Ensemble::uniform(std::move(xa));
  return out;
}

template <std::uniform_random_bit_generator Urbg>
AnalysisResult etpf2_step(const Ensemble& forecast, double y, const FilterConfig& cfg, Urbg& rng) {
  detail::require_uniform(forecast);
  cfg.validate(static_cast<std::size_t>(forecast.dim()));
  detail::require(forecast.size() > forecast.dim(), "ETPF2 needs more members than state dimensions");
  TransportPlan plan;
  AnalysisResult out = detail::transport_square(forecast, y, cfg, plan);
  const Matrix d = second_order_correction(forecast.states, plan, out.posterior_weights);
  Matrix xa = forecast.states * (plan.matrix + d);
  out.transported_mean = xa.rowwise().mean();
  out.transported_covariance = sample_covariance(xa);
  out.importance_covariance = weighted_covariance(forecast.states, out.posterior_weights);
  xa = canonical_rejuvenation(xa, anomalies(forecast.states), cfg.tau, rng);
  detail::require_finite(xa, "etpf2");
  out.analysis = Ensemble::uniform(std::move(xa));
  return out;
}

template <std::uniform_random_bit_generator Urbg>
AnalysisResult fetpf_step(const Ensemble& forecast, double y, const FilterConfig& cfg, Urbg& rng) {
  detail::require_uniform(forecast);
  cfg.validate(static_cast<std::size_t>(forecast.dim()));
  const AugmentedEnsemble aug = build_augmented_ensemble(forecast, cfg.targets, cfg.synthetic_count,
                                                         cfg.family, cfg.inflation_alpha, rng, cfg.shrinkage);
  const auto n_mem = forecast.size();
  AnalysisResult out;
  out.gamma = aug.gamma;
  out.posterior_weights = likelihood_weights(aug.states, aug.weights, y, cfg.observation);
  out.collapsed = weights_collapsed(out.posterior_weights);
  out.weighted_prior_mean = aug.states * out.posterior_weights;
  const TransportPlan plan =
      solve_transport(cost_matrix(aug.states, forecast.states),
                      static_cast<double>(n_mem) * out.posterior_weights, Vector::Ones(n_mem));
  out.transport_cost = plan.cost;
  Matrix xa = apply_transport(aug.states, plan);
  out.transported_mean = xa.rowwise().mean();
  detail::require_finite(xa, "fetpf");
  out.analysis = Ensemble::uniform(std::move(xa));
  return out;
}

/// Dispatches on cfg.variant.
template <std::uniform_random_bit_generator Urbg>
AnalysisResult assimilate(const Ensemble& forecast, double y, const FilterConfig& cfg, Urbg& rng) {
  switch (cfg.variant) {
    case FilterVariant::ETPF:
      return etpf_step(forecast, y, cfg, rng);
    case FilterVariant::ETPF2:
      return etpf2_step(forecast, y, cfg, rng);
    case FilterVariant::FETPF:
      return fetpf_step(forecast, y, cfg, rng);
  }
  throw std::invalid_argument("unknown filter variant");
}

}  // namespace fetpf
