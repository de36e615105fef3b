#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "panelqmle/errors.hpp"
#include "panelqmle/estimation.hpp"
#include "panelqmle/simulation.hpp"

using namespace panelqmle;

namespace {

DgpConfig base_config(int N, int T, double alpha, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.N = N;
  cfg.T = T;
  cfg.r = 1;
  cfg.alpha = alpha;
  cfg.factors = {SeriesSpec::polynomial({1.0, 1.0})};
  cfg.seed = seed;
  return cfg;
}

// y_i1 drawn, then y_it = alpha y_{i,t-1} + delta_t (+ lambda_i f_t) with no shocks.
PanelData deterministic_panel(int N, int T, double alpha, double lambda_sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  PanelData d;
  d.Y.resize(N, T);
  for (int i = 0; i < N; ++i) {
    const double lam = lambda_sd * z(rng);
    d.Y(i, 0) = 2.0 * z(rng);
    for (int t = 1; t < T; ++t) d.Y(i, t) = alpha * d.Y(i, t - 1) + 0.3 * t + lam * (1.0 + 0.5 * std::cos(t));
  }
  return d;
}

}  // namespace

TEST(Init, NoiselessAutoregressionRecoversAlpha) {
  for (double alpha : {-0.4, 0.3, 0.8}) {
    const PanelData d = deterministic_panel(200, 6, alpha, 0.0, 4);
    EXPECT_NEAR(init_params(d, 1).alpha, alpha, 1e-6);
  }
}

TEST(Init, ZeroVarianceIsDegenerate) {
  PanelData d;
  d.Y = Eigen::MatrixXd::Ones(30, 6);
  EXPECT_THROW(init_params(d, 1), NumericDegeneracy);
}

TEST(Init, StrongFactorStartWithinThirtyPercent) {
  // f_1 = 0 keeps y_i1 uncorrelated with the loadings, so the moment start is consistent.
  DgpConfig cfg = base_config(2000, 10, 0.5, 7);
  SeriesSpec f;
  f.kind = SeriesSpec::Kind::table;
  f.table = {0.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0};
  cfg.factors = {f};
  const SimulatedPanel sim = simulate_panel(cfg);
  const ModelParams p0 = init_params(sim.data, 1);
  const Eigen::MatrixXd F_true = effective_factors(sim.truth);
  const double est = p0.F.squaredNorm() / cfg.T;
  const double truth = F_true.squaredNorm() / cfg.T;
  EXPECT_LT(std::abs(est - truth) / truth, 0.3);
  EXPECT_TRUE(p0.F.allFinite());
  EXPECT_TRUE(p0.Dvec.allFinite());
  EXPECT_LE(std::abs(p0.alpha), 0.99);
}

TEST(Qmle, ExactRecursionWithoutShocksOrLoadings) {
  const double alpha = 0.6;
  const PanelData d = deterministic_panel(100, 6, alpha, 0.0, 12);
  const FitResult fit = estimate_qmle(d, 1);
  EXPECT_NEAR(fit.params.alpha, alpha, 1e-6);
}

TEST(Qmle, AscentAndNormalization) {
  const SimulatedPanel sim = simulate_panel(base_config(300, 8, 0.5, 3));
  const FitResult fit = estimate_qmle(sim.data, 1);
  EXPECT_TRUE(fit.converged);
  EXPECT_GE(fit.loglik, fit.loglik_init);
  for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k) {
    EXPECT_GE(fit.loglik_trace[k], fit.loglik_trace[k - 1] - 1e-9 * std::abs(fit.loglik_trace[k - 1]));
  }
  EXPECT_GT(fit.params.F(0, 0), 0.0);
  EXPECT_GT(fit.se_alpha, 0.0);
  EXPECT_NEAR(loglik_concentrated(fit.params, sim.data), fit.loglik, 1e-8 * std::abs(fit.loglik));
  EXPECT_LT(fit.grad_norm, 1e-6 * (1.0 + std::abs(fit.loglik)));
  EXPECT_NEAR(fit.params.alpha, 0.5, 0.1);
}

TEST(Qmle, TwoFactorsNormalized) {
  DgpConfig cfg = base_config(500, 10, 0.4, 5);
  cfg.r = 2;
  SeriesSpec s;
  s.kind = SeriesSpec::Kind::sine;
  s.amplitude = 1.5;
  s.frequency = 1.0;
  cfg.factors.push_back(s);
  const FitResult fit = estimate_qmle(simulate_panel(cfg).data, 2);
  EXPECT_TRUE(fit.converged);
  const Eigen::MatrixXd G = fit.params.F.transpose() * fit.params.Dvec.cwiseInverse().asDiagonal() * fit.params.F;
  EXPECT_LT(std::abs(G(0, 1)), 1e-8 * G(0, 0));
  EXPECT_GE(G(0, 0), G(1, 1));
}

TEST(Qmle, DeterministicAndPermutationInvariant) {
  const SimulatedPanel sim = simulate_panel(base_config(200, 7, 0.3, 9));
  const FitResult a = estimate_qmle(sim.data, 1);
  const FitResult b = estimate_qmle(sim.data, 1);
  EXPECT_EQ(a.params.alpha, b.params.alpha);
  EXPECT_EQ(a.loglik, b.loglik);

  std::vector<int> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(perm.begin(), perm.end(), rng);
  PanelData shuffled;
  shuffled.Y.resize(200, 7);
  for (int i = 0; i < 200; ++i) shuffled.Y.row(i) = sim.data.Y.row(perm[i]);
  const FitResult c = estimate_qmle(shuffled, 1);
  EXPECT_NEAR(c.params.alpha, a.params.alpha, 1e-7);
  EXPECT_NEAR(c.loglik, a.loglik, 1e-8 * std::abs(a.loglik));
}

TEST(Qmle, RejectsTooManyFactors) {
  const SimulatedPanel sim = simulate_panel(base_config(100, 5, 0.3, 2));
  EXPECT_THROW(estimate_qmle(sim.data, 3), InvalidInput);
}

TEST(StandardError, ClosedFormExample) {
  FitResult fit;
  fit.params.alpha = 0.0;
  fit.params.Dvec = Eigen::VectorXd::Ones(10);
  fit.N = 100;
  fit.T = 10;
  EXPECT_NEAR(standard_error_alpha(fit), 1.0 / std::sqrt(1000.0 * 0.9), 1e-15);
  EXPECT_NEAR(standard_error_alpha(fit), 0.03333, 5e-5);
  FitResult twice = fit;
  twice.N = 200;
  const double ratio = std::pow(standard_error_alpha(twice), 2) / std::pow(standard_error_alpha(fit), 2);
  EXPECT_NEAR(ratio, 0.5, 0.025);
}

TEST(StandardError, OutsideUnitIntervalUsesTraceForm) {
  FitResult fit;
  fit.params.alpha = 1.05;
  fit.params.Dvec = Eigen::VectorXd::Ones(6);
  fit.N = 100;
  fit.T = 6;
  EXPECT_GT(standard_error_alpha(fit), 0.0);
}

TEST(FactorSe, UnitVariance) {
  FitResult fit;
  fit.params.Dvec = Eigen::VectorXd::Ones(5);
  fit.N = 100;
  const Eigen::VectorXd se = estimate_factors_se(fit);
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(se(t), 0.1, 1e-15);
}

TEST(FixedEffects, NoiselessObjectiveReachesZero) {
  const PanelData d = deterministic_panel(100, 8, 0.5, 1.0, 31);
  const FEFitResult fe = estimate_fixed_effects(d, 1);
  EXPECT_LT(fe.objective, 1e-12 * d.Y.squaredNorm());
  EXPECT_NEAR(fe.alpha, 0.5, 1e-6);
}

TEST(FixedEffects, MonotoneObjective) {
  const SimulatedPanel sim = simulate_panel(base_config(300, 10, 0.5, 13));
  const FEFitResult fe = estimate_fixed_effects(sim.data, 1);
  EXPECT_TRUE(fe.converged);
  for (std::size_t k = 1; k < fe.objective_trace.size(); ++k) {
    EXPECT_LE(fe.objective_trace[k], fe.objective_trace[k - 1] * (1.0 + 1e-12));
  }
  EXPECT_EQ(fe.F.rows(), 10);
  EXPECT_EQ(fe.F.row(0).squaredNorm(), 0.0);
  EXPECT_GT(fe.sigma2, 0.0);
}

TEST(FixedEffects, NickellBiasWithoutFactors) {
  DgpConfig cfg = base_config(1000, 6, 0.5, 21);
  cfg.factors = {SeriesSpec::constant_value(0.0)};
  double mean = 0.0;
  const int reps = 20;
  for (int k = 0; k < reps; ++k) mean += estimate_fixed_effects(simulate_replication(cfg, k).data, 1).alpha;
  mean /= reps;
  EXPECT_LT(mean - 0.5, -0.05);
}

TEST(FixedEffects, AdditiveEffectsBiasIsNegativeOrderOneOverT) {
  DgpConfig cfg = base_config(1000, 10, 0.5, 23);
  cfg.factors = {SeriesSpec::constant_value(1.0)};
  double mean = 0.0;
  const int reps = 20;
  for (int k = 0; k < reps; ++k) mean += estimate_fixed_effects(simulate_replication(cfg, k).data, 1).alpha;
  mean /= reps;
  EXPECT_LT(mean - 0.5, -0.05);
  EXPECT_GT(mean - 0.5, -0.4);
}
