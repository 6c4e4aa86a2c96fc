#pragma once

/**
 * @file climatology.hpp
 * @brief Climatological shrinkage targets for Lorenz '63.
 *
 * Targets are trace-state normalized (trace equals the state dimension).
 * Two sources are provided: the long-run covariance of the attractor and
 * k-means centroids (squared Frobenius distance) of a collection of
 * forecast covariances. Reference values of the climatology and the two
 * cluster targets are also available as literals.
 */

#include "fetpf/dynamics.hpp"
#include "fetpf/ensembles.hpp"
#include "fetpf/shrinkage.hpp"
#include "fetpf/types.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fetpf {

/// matrix * n / tr(matrix)
inline Matrix trace_normalize(const Matrix& matrix) {
  detail::require(matrix.rows() == matrix.cols(), "trace_normalize: matrix must be square");
  const double tr = matrix.trace();
  detail::require(tr > 0.0 && std::isfinite(tr), "trace_normalize: trace must be positive");
  return matrix * (static_cast<double>(matrix.rows()) / tr);
}

/// Trace-normalized, validated target.
inline ShrinkageTarget make_target(const Matrix& covariance, std::string label) {
  Matrix sym = 0.5 * (covariance + covariance.transpose());
  ShrinkageTarget t{trace_normalize(sym), std::move(label)};
  t.validate();
  return t;
}

namespace reference {

/// Attractor covariance of canonical Lorenz '63 (50000 samples).
inline Matrix climatology() {
  Matrix p(3, 3);
  p << 0.8616, 0.8618, -0.0148,  //
      0.8618, 1.1149, -0.0035,   //
      -0.0148, -0.0035, 1.0234;
  return p;
}

/// Forecast-covariance cluster with negative z correlations.
inline Matrix cluster1() {
  Matrix p(3, 3);
  p << 0.5017, 0.5524, -0.4587,  //
      0.5524, 1.0731, -0.6723,   //
      -0.4587, -0.6723, 1.4252;
  return p;
}

/// Forecast-covariance cluster with positive z correlations.
inline Matrix cluster2() {
  Matrix p(3, 3);
  p << 0.5443, 0.6830, 0.4330,  //
      0.6830, 1.2748, 0.6318,   //
      0.4330, 0.6318, 1.1808;
  return p;
}

}  // namespace reference

/// Time step bound used for every RK4 propagation in the experiments.
inline constexpr double kMaxRk4Step = 0.012;

inline std::size_t substeps_for(double interval) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(interval / kMaxRk4Step - 1e-9)));
}

/**
 * Starts from (1,1,1) plus a 1e-2 Gaussian perturbation, spins up 100 time
 * units, then records `sample_count` states `spacing` apart and returns
 * their trace-normalized sample covariance.
 */
template <std::uniform_random_bit_generator Urbg>
ShrinkageTarget attractor_covariance(std::size_t sample_count, double spacing, Urbg& rng) {
  detail::require(sample_count >= 2, "attractor covariance needs at least two samples");
  detail::require(spacing > 0.0, "sample spacing must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  StateVector x = StateVector::Ones(3);
  for (Eigen::Index i = 0; i < 3; ++i) x(i) += 1e-2 * normal(rng);
  x = propagate(x, 100.0, substeps_for(100.0));

  const std::size_t sub = substeps_for(spacing);
  Matrix samples(3, static_cast<Eigen::Index>(sample_count));
  for (std::size_t s = 0; s < sample_count; ++s) {
    x = propagate(x, spacing, sub);
    if (!x.allFinite()) throw std::runtime_error("attractor trajectory became non-finite");
    samples.col(static_cast<Eigen::Index>(s)) = x;
  }
  return make_target(sample_covariance(samples), "attractor");
}

struct CovarianceSample {
  Matrix matrix;
  std::size_t time_index = 0;
};

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
};

struct KMeansResult {
  std::vector<Matrix> centroids;
  std::vector<std::size_t> assignment;
  double inertia = 0.0;
  /// Inertia after each assignment step of the winning restart.
  std::vector<double> inertia_history;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double frobenius_sq(const Matrix& a, const Matrix& b) { return (a - b).squaredNorm(); }

// One Lloyd run from D^2-weighted seeding.
inline KMeansResult lloyd_once(std::span<const CovarianceSample> samples, std::size_t k,
                               std::uint64_t seed, std::size_t max_iterations) {
  std::mt19937_64 rng(seed);
  const std::size_t count = samples.size();
  KMeansResult r;

  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  r.centroids.push_back(samples[pick(rng)].matrix);
  std::vector<double> d2(count);
  while (r.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t s = 0; s < count; ++s) {
      double best = std::numeric_limits<double>::infinity();
      for (const Matrix& c : r.centroids) best = std::min(best, frobenius_sq(samples[s].matrix, c));
      d2[s] = best;
      total += best;
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      chosen = count - 1;
      for (std::size_t s = 0; s < count; ++s) {
        acc += d2[s];
        if (acc >= target && d2[s] > 0.0) {
          chosen = s;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    r.centroids.push_back(samples[chosen].matrix);
  }

  r.assignment.assign(count, k);
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t s = 0; s < count; ++s) {
      std::size_t best_c = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = frobenius_sq(samples[s].matrix, r.centroids[c]);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      if (r.assignment[s] != best_c) changed = true;
      r.assignment[s] = best_c;
      inertia += best;
    }
    r.inertia_history.push_back(inertia);
    r.inertia = inertia;
    if (!changed) break;

    std::vector<Matrix> sums(k, Matrix::Zero(samples[0].matrix.rows(), samples[0].matrix.cols()));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t s = 0; s < count; ++s) {
      sums[r.assignment[s]] += samples[s].matrix;
      ++sizes[r.assignment[s]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) {
        r.centroids[c] = sums[c] / static_cast<double>(sizes[c]);
        continue;
      }
      // Empty cluster: move it onto the sample farthest from its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t s = 0; s < count; ++s) {
        const double d = frobenius_sq(samples[s].matrix, r.centroids[r.assignment[s]]);
        if (d > far_d) {
          far_d = d;
          far = s;
        }
      }
      r.centroids[c] = samples[far].matrix;
    }
  }
  return r;
}

}  // namespace detail

/// Lloyd's algorithm under squared Frobenius distance, best of several restarts.
inline KMeansResult kmeans_frobenius(std::span<const CovarianceSample> samples, std::size_t k,
                                     std::uint64_t seed, const KMeansOptions& opts = {}) {
  detail::require(k >= 1, "k-means needs k >= 1");
  detail::require(samples.size() >= k, "k-means: fewer samples than clusters");
  for (const auto& s : samples)
    detail::require(s.matrix.rows() == samples[0].matrix.rows() && s.matrix.cols() == samples[0].matrix.cols(),
                    "k-means: samples differ in shape");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opts.restarts); ++r) {
    KMeansResult run = detail::lloyd_once(samples, k, detail::splitmix64(seed + r), opts.max_iterations);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

/// Trace-normalized k-means centroids labelled cluster1..clusterK.
inline std::vector<ShrinkageTarget> kmeans_covariances(std::span<const CovarianceSample> samples,
                                                       std::size_t k, std::uint64_t seed,
                                                       const KMeansOptions& opts = {}) {
  const KMeansResult r = kmeans_frobenius(samples, k, seed, opts);
  std::vector<ShrinkageTarget> out;
  out.reserve(k);
  for (std::size_t c = 0; c < k; ++c)
    out.push_back(ShrinkageTarget{trace_normalize(r.centroids[c]), "cluster" + std::to_string(c + 1)});
  return out;
}

}  // namespace fetpf
