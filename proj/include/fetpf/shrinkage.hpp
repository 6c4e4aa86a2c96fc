#pragma once

/**
 * @file shrinkage.hpp
 * @brief Stochastic covariance shrinkage toward a climatological target.
 *
 * The dynamic ensemble is augmented with M synthetic members drawn around
 * its own mean with covariance alpha^2 mu P. The dynamic and synthetic
 * blocks carry total mass (1 - gamma) and gamma, with gamma from the
 * Rao-Blackwell Ledoit-Wolf estimator driven by the sphericity of the
 * whitened sample covariance C = P^{-1/2} Sigma P^{-1/2}.
 */

#include "fetpf/ensembles.hpp"
#include "fetpf/types.hpp"

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fetpf {

/// Symmetric positive-definite target covariance.
struct ShrinkageTarget {
  Matrix covariance;
  std::string label;

  void validate() const {
    detail::require(covariance.rows() == covariance.cols() && covariance.rows() >= 1,
                    "target covariance must be square");
    detail::require(covariance.allFinite(), "target covariance must be finite");
    const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
    detail::require((covariance - covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
                    "target covariance '" + label + "' is not symmetric");
    const Vector ev =
        Eigen::SelfAdjointEigenSolver<Matrix>(covariance, Eigen::EigenvaluesOnly).eigenvalues();
    detail::require(ev.minCoeff() > 0.0, "target covariance '" + label + "' is not positive definite");
  }
};

enum class AnomalyFamily { Gaussian, Laplace };

inline std::string_view to_string(AnomalyFamily f) {
  return f == AnomalyFamily::Gaussian ? "gaussian" : "laplace";
}

namespace detail {

/// C = P^{-1/2} Sigma P^{-1/2}
inline Matrix whitened_covariance(const ShrinkageTarget& target, const Matrix& sigma) {
  target.validate();
  require(sigma.rows() == target.covariance.rows() && sigma.cols() == target.covariance.cols(),
          "sample covariance and target differ in dimension");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(target.covariance);
  const Matrix& v = eig.eigenvectors();
  const Matrix inv_half = v * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  const Matrix c = inv_half * sigma * inv_half;
  return 0.5 * (c + c.transpose());
}

}  // namespace detail

/**
 * (1/(n-1)) (n tr(C^2) / tr(C)^2 - 1). Zero iff C is a multiple of the
 * identity; for n = 1 this always holds and 0 is returned.
 */
inline double sphericity(const ShrinkageTarget& target, const Matrix& sigma) {
  const Matrix c = detail::whitened_covariance(target, sigma);
  const double tr = c.trace();
  if (!(tr > 0.0))
    throw FilterDivergence("sphericity undefined: sample covariance has zero trace (collapsed ensemble)");
  const auto n = static_cast<double>(c.rows());
  if (c.rows() == 1) return 0.0;
  const double tr_sq = c.cwiseProduct(c).sum();  // tr(C^2) for symmetric C
  return std::max(0.0, (n * tr_sq / (tr * tr) - 1.0) / (n - 1.0));
}

/**
 * RBLW shrinkage intensity
 *   min( (N-2)/(N(N+2)) + ((n+1)N - 2) / (U N (N+2) (n-1)), 1 ),
 * with U = 0 mapping to 1.
 */
inline double rblw_gamma(std::size_t ensemble_size, std::size_t state_dim, double sphericity_value) {
  detail::require(ensemble_size >= 1, "RBLW gamma needs a nonempty ensemble");
  detail::require(sphericity_value >= 0.0, "sphericity must be nonnegative");
  if (sphericity_value == 0.0) return 1.0;
  detail::require(state_dim >= 2, "RBLW gamma with positive sphericity needs n >= 2");
  const auto nn = static_cast<double>(ensemble_size);
  const auto n = static_cast<double>(state_dim);
  const double g = (nn - 2.0) / (nn * (nn + 2.0)) +
                   ((n + 1.0) * nn - 2.0) / (sphericity_value * nn * (nn + 2.0) * (n - 1.0));
  return std::min(g, 1.0);
}

/// tr(P^{-1/2} Sigma P^{-1/2}) / n
inline double mu_scale(const ShrinkageTarget& target, const Matrix& sigma) {
  const Matrix c = detail::whitened_covariance(target, sigma);
  return c.trace() / static_cast<double>(c.rows());
}

/// Index of the target with the largest sphericity; ties keep the lowest index.
inline std::size_t select_target(std::span<const ShrinkageTarget> targets, const Matrix& sigma) {
  detail::require(!targets.empty(), "select_target: empty target list");
  std::size_t best = 0;
  double best_u = sphericity(targets[0], sigma);
  for (std::size_t t = 1; t < targets.size(); ++t) {
    const double u = sphericity(targets[t], sigma);
    if (u > best_u) {
      best_u = u;
      best = t;
    }
  }
  return best;
}

/**
 * M zero-mean synthetic anomalies with covariance mu P, scaled by alpha.
 *
 * Gaussian columns are L z with L L^T = mu P; Laplace columns are
 * sqrt(W) L z with W ~ Exp(1), which keeps the same covariance. Each column
 * draws its n normals first, then (Laplace) its mixing variable. The sample
 * mean is removed before inflation.
 */
template <std::uniform_random_bit_generator Urbg>
Matrix sample_synthetic_anomalies(const ShrinkageTarget& target, double mu, std::size_t count,
                                  AnomalyFamily family, double inflation_alpha, Urbg& rng) {
  detail::require(count >= 2, "need at least two synthetic members");
  detail::require(mu > 0.0 && std::isfinite(mu), "mu must be positive");
  detail::require(inflation_alpha > 0.0, "inflation alpha must be positive");
  const Matrix scaled = mu * target.covariance;
  Eigen::LLT<Matrix> llt(scaled);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("Cholesky factorization of target '" + target.label + "' failed");
  const Matrix l = llt.matrixL();

  const auto n = target.covariance.rows();
  const auto m = static_cast<Eigen::Index>(count);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  Matrix z(n, m);
  Vector mix = Vector::Ones(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) z(i, j) = normal(rng);
    if (family == AnomalyFamily::Laplace) mix(j) = std::sqrt(expo(rng));
  }
  Matrix a = l * z;
  a *= mix.asDiagonal();
  return inflation_alpha * anomalies(a);
}

/// Dynamic members first, synthetic members after.
struct AugmentedEnsemble {
  Matrix states;
  Vector weights;
  std::size_t dynamic_count = 0;
  std::size_t synthetic_count = 0;
  double gamma = 0.0;
  double mu = 0.0;
  double sphericity = 0.0;
  std::size_t target_index = 0;
};

struct ShrinkageOptions {
  /// Replaces the RBLW estimate when set (diagnostics and tests).
  std::optional<double> gamma_override;
};

template <std::uniform_random_bit_generator Urbg>
AugmentedEnsemble build_augmented_ensemble(const Ensemble& dynamic,
                                           std::span<const ShrinkageTarget> targets,
                                           std::size_t synthetic_count, AnomalyFamily family,
                                           double inflation_alpha, Urbg& rng,
                                           const ShrinkageOptions& opts = {}) {
  const auto n_dyn = static_cast<std::size_t>(dynamic.size());
  detail::require(n_dyn >= 3, "stochastic shrinkage needs at least three dynamic members");
  detail::require(synthetic_count >= 2, "stochastic shrinkage needs at least two synthetic members");
  detail::require((dynamic.weights.array() - 1.0 / static_cast<double>(n_dyn)).abs().maxCoeff() <= 1e-12,
                  "dynamic ensemble must carry uniform weights");

  const Matrix sigma = sample_covariance(dynamic.states);
  if (sigma.isZero(0.0)) throw FilterDivergence("dynamic ensemble collapsed to a single point");

  AugmentedEnsemble out;
  out.dynamic_count = n_dyn;
  out.synthetic_count = synthetic_count;
  out.target_index = select_target(targets, sigma);
  const ShrinkageTarget& target = targets[out.target_index];
  out.sphericity = sphericity(target, sigma);
  out.mu = mu_scale(target, sigma);
  out.gamma = opts.gamma_override.value_or(
      rblw_gamma(n_dyn, static_cast<std::size_t>(sigma.rows()), out.sphericity));
  detail::require(out.gamma >= 0.0 && out.gamma <= 1.0, "shrinkage factor must lie in [0, 1]");

  const Matrix synthetic = sample_synthetic_anomalies(target, out.mu, synthetic_count, family,
                                                      inflation_alpha, rng);
  const Vector mean = dynamic.states.rowwise().mean();
  const auto nd = static_cast<Eigen::Index>(n_dyn);
  const auto ms = static_cast<Eigen::Index>(synthetic_count);
  out.states.resize(dynamic.dim(), nd + ms);
  out.states.leftCols(nd) = dynamic.states;
  out.states.rightCols(ms) = synthetic.colwise() + mean;
  out.weights.resize(nd + ms);
  out.weights.head(nd).setConstant((1.0 - out.gamma) / static_cast<double>(n_dyn));
  out.weights.tail(ms).setConstant(out.gamma / static_cast<double>(synthetic_count));
  return out;
}

}  // namespace fetpf
