#include "fetpf/climatology.hpp"
#include "fetpf/filters.hpp"

#include "oracles/fetpf_reference.hpp"
#include "oracles/transport_oracle.hpp"

#include <gtest/gtest.h>

#include <random>

namespace fetpf {
namespace {

Matrix random_states(std::mt19937_64& rng, Eigen::Index n, Eigen::Index k, double sd = 3.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(n, k);
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < n; ++i) m(i, j) = normal(rng);
  return m;
}

FilterConfig make_config(FilterVariant v, double tau = 0.0) {
  FilterConfig cfg;
  cfg.variant = v;
  cfg.tau = tau;
  cfg.targets = {make_target(reference::climatology(), "climatology")};
  return cfg;
}

TEST(CanonicalRejuvenation, ZeroTauIsIdentity) {
  std::mt19937_64 rng(1);
  const Matrix xa = random_states(rng, 3, 5);
  const Matrix af = anomalies(random_states(rng, 3, 5));
  std::mt19937_64 before = rng;
  EXPECT_EQ(canonical_rejuvenation(xa, af, 0.0, rng), xa);
  EXPECT_EQ(rng(), before());
}

TEST(CanonicalRejuvenation, ZeroAnomaliesAddNothing) {
  std::mt19937_64 rng(2);
  const Matrix xa = random_states(rng, 3, 5);
  EXPECT_EQ(canonical_rejuvenation(xa, Matrix::Zero(3, 5), 0.3, rng), xa);
}

TEST(CanonicalRejuvenation, PreservesMean) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix xa = random_states(rng, 3, 10);
    const Matrix af = anomalies(random_states(rng, 3, 10));
    const Matrix out = canonical_rejuvenation(xa, af, 0.5, rng);
    EXPECT_LT((out.rowwise().mean() - xa.rowwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT((out - xa).norm(), 0.0);
  }
}

TEST(CanonicalRejuvenation, SpreadScalesWithTau) {
  // E[perturbation covariance] = tau * forecast covariance.
  std::mt19937_64 rng(4);
  const Matrix af = anomalies(random_states(rng, 3, 20));
  const Matrix pf = af * af.transpose() / 19.0;
  Matrix acc = Matrix::Zero(3, 3);
  const int reps = 4000;
  for (int r = 0; r < reps; ++r) {
    const Matrix d = canonical_rejuvenation(Matrix::Zero(3, 20), af, 0.04, rng);
    acc += d * d.transpose() / 19.0 / reps;
  }
  EXPECT_LT((acc - 0.04 * pf).norm() / (0.04 * pf.norm()), 0.05);
}

TEST(Etpf, SingleMemberIsUnchanged) {
  std::mt19937_64 rng(5);
  const Matrix x = random_states(rng, 3, 1);
  const AnalysisResult r = etpf_step(Ensemble::uniform(x), 1.0, make_config(FilterVariant::ETPF, 0.04), rng);
  EXPECT_EQ(r.analysis.states, x);
}

TEST(Etpf, FlatLikelihoodGivesIdentityTransport) {
  std::mt19937_64 rng(6);
  Matrix x = random_states(rng, 3, 6);
  x.row(0).setConstant(2.0);
  const AnalysisResult r = etpf_step(Ensemble::uniform(x), -1.0, make_config(FilterVariant::ETPF), rng);
  EXPECT_LT((r.analysis.states - x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(r.transport_cost, 0.0, 1e-12);
}

TEST(Etpf, MatchesVertexEnumeration) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_states(rng, 3, 4);
    const double y = x(0, trial % 4) + 1.0;
    const FilterConfig cfg = make_config(FilterVariant::ETPF);
    const AnalysisResult r = etpf_step(Ensemble::uniform(x), y, cfg, rng);
    const Vector w = likelihood_weights(x, Vector::Constant(4, 0.25), y, cfg.observation);
    const auto opt = oracle::enumerate_transport(cost_matrix(x, x), 4.0 * w, Vector::Ones(4));
    EXPECT_NEAR(r.transport_cost, opt.cost, 1e-9);
    EXPECT_LT((r.analysis.states - x * opt.plan).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Etpf, TransportPreservesWeightedMean) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_states(rng, 3, 15);
    const AnalysisResult r = etpf_step(Ensemble::uniform(x), 0.5, make_config(FilterVariant::ETPF, 0.04), rng);
    EXPECT_LT((r.transported_mean - r.weighted_prior_mean).cwiseAbs().maxCoeff(), 1e-10);
    // Rejuvenation preserves the mean as well.
    EXPECT_LT((weighted_mean(r.analysis) - r.weighted_prior_mean).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Etpf, RejectsNonUniformForecast) {
  std::mt19937_64 rng(9);
  Vector w(3);
  w << 0.2, 0.3, 0.5;
  EXPECT_THROW(etpf_step(Ensemble(random_states(rng, 3, 3), w), 0.0, make_config(FilterVariant::ETPF), rng),
               std::invalid_argument);
}

TEST(Etpf2, UniformWeightsKeepForecast) {
  std::mt19937_64 rng(10);
  Matrix x = random_states(rng, 3, 6);
  x.row(0).setConstant(1.0);
  const AnalysisResult r = etpf2_step(Ensemble::uniform(x), 4.0, make_config(FilterVariant::ETPF2), rng);
  EXPECT_LT((r.analysis.states - x).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Etpf2, MatchesImportanceCovariance) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = random_states(rng, 3, 6);
    const AnalysisResult r = etpf2_step(Ensemble::uniform(x), x(0, 0) + 2.0, make_config(FilterVariant::ETPF2), rng);
    EXPECT_LT((r.transported_covariance - r.importance_covariance).norm(), 1e-8) << "trial " << trial;
    EXPECT_LT((r.transported_mean - r.weighted_prior_mean).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Etpf2, MeanEqualsEtpfMean) {
  std::mt19937_64 rng(12);
  const Matrix x = random_states(rng, 3, 8);
  std::mt19937_64 r1(1), r2(1);
  const AnalysisResult a = etpf_step(Ensemble::uniform(x), 0.3, make_config(FilterVariant::ETPF), r1);
  const AnalysisResult b = etpf2_step(Ensemble::uniform(x), 0.3, make_config(FilterVariant::ETPF2), r2);
  EXPECT_LT((a.transported_mean - b.transported_mean).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Etpf2, NeedsMoreMembersThanDimensions) {
  std::mt19937_64 rng(13);
  EXPECT_THROW(etpf2_step(Ensemble::uniform(random_states(rng, 3, 3)), 0.0, make_config(FilterVariant::ETPF2), rng),
               std::invalid_argument);
}

TEST(Fetpf, ZeroGammaReducesToEtpfWithoutRejuvenation) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_states(rng, 3, 7);
    FilterConfig cfg = make_config(FilterVariant::FETPF);
    cfg.synthetic_count = 20;
    cfg.shrinkage.gamma_override = 0.0;
    std::mt19937_64 r1(trial), r2(trial);
    const AnalysisResult f = fetpf_step(Ensemble::uniform(x), 1.5, cfg, r1);
    const AnalysisResult e = etpf_step(Ensemble::uniform(x), 1.5, make_config(FilterVariant::ETPF, 0.0), r2);
    EXPECT_LT((f.analysis.states - e.analysis.states).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(f.transport_cost, e.transport_cost, 1e-10);
  }
}

TEST(Fetpf, PreservesAugmentedWeightedMean) {
  std::mt19937_64 rng(15);
  for (const auto family : {AnomalyFamily::Gaussian, AnomalyFamily::Laplace}) {
    for (int trial = 0; trial < 10; ++trial) {
      FilterConfig cfg = make_config(FilterVariant::FETPF);
      cfg.family = family;
      cfg.inflation_alpha = 1.2;
      const AnalysisResult r = fetpf_step(Ensemble::uniform(random_states(rng, 3, 10)), -2.0, cfg, rng);
      EXPECT_LT((r.transported_mean - r.weighted_prior_mean).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_GT(r.gamma, 0.0);
      EXPECT_LE(r.gamma, 1.0);
    }
  }
}

TEST(Fetpf, ScalarMicroOracle) {
  FilterConfig cfg;
  cfg.variant = FilterVariant::FETPF;
  cfg.synthetic_count = 2;
  cfg.inflation_alpha = 1.3;
  cfg.targets = {ShrinkageTarget{Matrix::Constant(1, 1, 1.0), "scalar"}};
  cfg.observation = ObservationModel{0, 2.0};
  std::mt19937_64 draw(16);
  for (int trial = 0; trial < 50; ++trial) {
    const std::array<double, 3> x{draw() % 1000 / 100.0, draw() % 1000 / 100.0 - 5.0, draw() % 1000 / 100.0 - 2.0};
    const double y = 1.0;
    Matrix states(1, 3);
    states << x[0], x[1], x[2];
    for (const std::optional<double> g : {std::optional<double>{}, std::optional<double>{0.4}}) {
      cfg.shrinkage.gamma_override = g;
      std::mt19937_64 r1(trial), r2(trial);
      const AnalysisResult r = fetpf_step(Ensemble::uniform(states), y, cfg, r1);
      const auto ref = oracle::scalar_fetpf(x, y, 2.0, 1.3, r2, g);
      EXPECT_NEAR(r.gamma, ref.gamma, 1e-15);
      EXPECT_NEAR(r.transport_cost, ref.cost, 1e-10);
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(r.analysis.states(0, k), ref.analysis[k], 1e-10) << trial;
    }
  }
}

TEST(Fetpf, DeterministicForFixedSeed) {
  std::mt19937_64 rng(17);
  const Matrix x = random_states(rng, 3, 10);
  FilterConfig cfg = make_config(FilterVariant::FETPF);
  cfg.family = AnomalyFamily::Laplace;
  std::mt19937_64 r1(5), r2(5);
  EXPECT_EQ(fetpf_step(Ensemble::uniform(x), 0.0, cfg, r1).analysis.states,
            fetpf_step(Ensemble::uniform(x), 0.0, cfg, r2).analysis.states);
}

TEST(Fetpf, InvalidConfigThrows) {
  std::mt19937_64 rng(18);
  const Ensemble e = Ensemble::uniform(random_states(rng, 3, 6));
  FilterConfig cfg = make_config(FilterVariant::FETPF);
  cfg.targets.clear();
  EXPECT_THROW(fetpf_step(e, 0.0, cfg, rng), std::invalid_argument);
  cfg = make_config(FilterVariant::FETPF);
  cfg.targets = {ShrinkageTarget{Matrix::Identity(2, 2), "2d"}};
  EXPECT_THROW(fetpf_step(e, 0.0, cfg, rng), std::invalid_argument);
  cfg = make_config(FilterVariant::FETPF);
  cfg.observation.noise_variance = -1.0;
  EXPECT_THROW(fetpf_step(e, 0.0, cfg, rng), std::invalid_argument);
}

TEST(Assimilate, DispatchesOnVariant) {
  std::mt19937_64 rng(19);
  const Matrix x = random_states(rng, 3, 6);
  for (const auto v : {FilterVariant::ETPF, FilterVariant::ETPF2, FilterVariant::FETPF}) {
    std::mt19937_64 r1(3), r2(3);
    const FilterConfig cfg = make_config(v, 0.04);
    const Matrix direct = v == FilterVariant::ETPF    ? etpf_step(Ensemble::uniform(x), 0.0, cfg, r1).analysis.states
                          : v == FilterVariant::ETPF2 ? etpf2_step(Ensemble::uniform(x), 0.0, cfg, r1).analysis.states
                                                      : fetpf_step(Ensemble::uniform(x), 0.0, cfg, r1).analysis.states;
    EXPECT_EQ(assimilate(Ensemble::uniform(x), 0.0, cfg, r2).analysis.states, direct) << to_string(v);
  }
}

}  // namespace
}  // namespace fetpf
