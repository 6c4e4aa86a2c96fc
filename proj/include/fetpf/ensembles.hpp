#pragma once

#include "fetpf/dynamics.hpp"
#include "fetpf/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace fetpf {

/// Weights within this distance of 1 are treated as a collapsed ensemble.
inline constexpr double kCollapseThreshold = 1e-12;

/**
 * Weighted particle ensemble. Columns of `states` are members; `weights`
 * are nonnegative and sum to one.
 */
struct Ensemble {
  Matrix states;
  Vector weights;

  Ensemble() = default;
  Ensemble(Matrix s, Vector w) : states(std::move(s)), weights(std::move(w)) { validate(); }

  static Ensemble uniform(Matrix s) {
    const auto k = s.cols();
    detail::require(k >= 1, "ensemble needs at least one member");
    return Ensemble(std::move(s), Vector::Constant(k, 1.0 / static_cast<double>(k)));
  }

  Eigen::Index dim() const { return states.rows(); }
  Eigen::Index size() const { return states.cols(); }

  void validate() const {
    detail::require(states.cols() >= 1, "ensemble needs at least one member");
    detail::require(weights.size() == states.cols(), "weight count does not match member count");
    detail::require(states.allFinite(), "ensemble states must be finite");
    detail::require(weights.allFinite() && weights.minCoeff() >= 0.0,
                    "ensemble weights must be finite and nonnegative");
    detail::require(std::abs(weights.sum() - 1.0) <= 1e-12, "ensemble weights must sum to 1");
  }
};

/// Subtracts the unweighted member mean from every column.
inline Matrix anomalies(const Matrix& states) {
  detail::require(states.cols() >= 1, "anomalies need at least one member");
  const Vector mean = states.rowwise().mean();
  return states.colwise() - mean;
}

inline StateVector weighted_mean(const Ensemble& ens) { return ens.states * ens.weights; }

/// K/(K-1) X (diag(w) - w w^T) X^T.
inline Matrix weighted_covariance(const Matrix& states, const Vector& weights) {
  const auto k = states.cols();
  detail::require(k >= 2, "weighted covariance needs at least two members");
  detail::require(weights.size() == k, "weight count does not match member count");
  // X diag(w) X^T - (Xw)(Xw)^T, written to keep the result exactly symmetric.
  const Vector mean = states * weights;
  const Matrix centered = states.colwise() - mean;
  Matrix cov = centered * weights.asDiagonal() * centered.transpose();
  // The centered form equals X(diag(w) - ww^T)X^T only when sum(w) == 1.
  cov += (1.0 - weights.sum()) * mean * mean.transpose();
  cov *= static_cast<double>(k) / static_cast<double>(k - 1);
  return 0.5 * (cov + cov.transpose());
}

inline Matrix weighted_covariance(const Ensemble& ens) {
  return weighted_covariance(ens.states, ens.weights);
}

/// Unbiased sample covariance with uniform weights.
inline Matrix sample_covariance(const Matrix& states) {
  const auto k = states.cols();
  detail::require(k >= 2, "sample covariance needs at least two members");
  const Matrix a = anomalies(states);
  Matrix cov = a * a.transpose() / static_cast<double>(k - 1);
  return 0.5 * (cov + cov.transpose());
}

/**
 * Posterior importance weights for a scalar coordinate observation with
 * Gaussian noise: w_j ∝ w^f_j exp(-(y - Hx_j)^2 / 2R). Evaluated in log
 * space with a max shift; zero prior weight stays zero.
 *
 * Throws FilterDivergence if no member retains positive weight.
 */
inline Vector likelihood_weights(const Matrix& states, const Vector& prior_weights, double y,
                                 const ObservationModel& model) {
  model.validate(static_cast<std::size_t>(states.rows()));
  detail::require(prior_weights.size() == states.cols(), "weight count does not match member count");
  const auto k = states.cols();
  const auto row = static_cast<Eigen::Index>(model.observed_index);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  Vector logw(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double innovation = y - states(row, j);
    logw(j) = prior_weights(j) > 0.0
                  ? std::log(prior_weights(j)) - innovation * innovation / (2.0 * model.noise_variance)
                  : kNegInf;
  }
  const double shift = logw.maxCoeff();
  if (!std::isfinite(shift))
    throw FilterDivergence("all importance weights vanished (no member has finite log-likelihood)");

  Vector w(k);
  for (Eigen::Index j = 0; j < k; ++j) w(j) = std::exp(logw(j) - shift);
  const double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw FilterDivergence("importance weights underflowed to zero");
  return w / total;
}

inline Vector likelihood_weights(const Ensemble& ens, double y, const ObservationModel& model) {
  return likelihood_weights(ens.states, ens.weights, y, model);
}

inline bool weights_collapsed(const Vector& weights) {
  return weights.size() > 1 && weights.maxCoeff() > 1.0 - kCollapseThreshold;
}

/// sqrt( 1/(nT) sum_t sum_i (truth_ti - mean_ti)^2 ).
inline double spatio_temporal_rmse(std::span<const StateVector> truth,
                                   std::span<const StateVector> analysis_means) {
  detail::require(!truth.empty(), "RMSE of an empty sequence is undefined");
  detail::require(truth.size() == analysis_means.size(),
                  "truth and analysis sequences differ in length");
  const auto n = truth.front().size();
  double sum = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    detail::require(truth[t].size() == n && analysis_means[t].size() == n,
                    "inconsistent state dimension at step " + std::to_string(t));
    sum += (truth[t] - analysis_means[t]).squaredNorm();
  }
  return std::sqrt(sum / (static_cast<double>(n) * static_cast<double>(truth.size())));
}

}  // namespace fetpf
