#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "panelqmle/efficiency.hpp"
#include "panelqmle/errors.hpp"
#include "panelqmle/structural.hpp"

using namespace panelqmle;

namespace {

// Direct double sum over (t, s) without the recursion.
double gamma_double_sum(double alpha, const Eigen::VectorXd& s2) {
  const int T = static_cast<int>(s2.size());
  double total = 0.0;
  for (int t = 1; t < T; ++t) {
    double inner = 0.0;
    for (int k = 0; k < t; ++k) inner += std::pow(alpha, 2 * k) * s2(t - 1 - k);
    total += inner / s2(t);
  }
  return total / T;
}

double nu_dense(double alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& D) {
  const int T = static_cast<int>(D.size());
  const StructuralSet s = build_structural(alpha, T);
  const Eigen::MatrixXd Dinv = D.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd M = Dinv - Dinv * F * (F.transpose() * Dinv * F).inverse() * F.transpose() * Dinv;
  const Eigen::MatrixXd LF = s.L * F;
  return (LF.transpose() * M * LF).trace() / T;
}

}  // namespace

TEST(Gamma, ZeroAlphaUnitVariance) {
  EXPECT_NEAR(gamma_T_closed(0.0, Eigen::VectorXd::Ones(10)), 0.9, 1e-15);
}

TEST(Gamma, HomoskedasticLimit) {
  const double g = gamma_T_closed(0.5, Eigen::VectorXd::Ones(500));
  EXPECT_LT(std::abs(g - 4.0 / 3.0) / (4.0 / 3.0), 0.01);
}

TEST(Gamma, HandEvaluatedHeteroskedastic) {
  Eigen::VectorXd s2(3);
  s2 << 1, 2, 1;
  EXPECT_NEAR(gamma_T_closed(0.5, s2), (0.5 + 2.25) / 3.0, 1e-15);
  EXPECT_NEAR(gamma_double_sum(0.5, s2), (0.5 + 2.25) / 3.0, 1e-15);
}

TEST(Gamma, TraceFormMatchesClosedForm) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> ua(-0.99, 0.99), uv(0.1, 5.0);
  std::uniform_int_distribution<int> uT(2, 100);
  for (int rep = 0; rep < 300; ++rep) {
    const int T = uT(rng);
    const double a = ua(rng);
    Eigen::VectorXd s2(T);
    for (int t = 0; t < T; ++t) s2(t) = uv(rng);
    const double c = gamma_T_closed(a, s2);
    EXPECT_NEAR(gamma_T_trace(a, s2), c, 1e-12 * std::max(1.0, c));
    EXPECT_NEAR(gamma_double_sum(a, s2), c, 1e-12 * std::max(1.0, c));
  }
}

TEST(Gamma, TraceFormSpecialCases) {
  Eigen::VectorXd s2(2);
  s2 << 3.0, 0.5;
  EXPECT_NEAR(gamma_T_trace(0.7, s2), 3.0 / (2 * 0.5), 1e-14);
  EXPECT_NEAR(gamma_T_trace(0.0, Eigen::VectorXd::Constant(8, 2.5)), 7.0 / 8.0, 1e-15);
}

TEST(Gamma, HomoskedasticGapDecaysLikeOneOverT) {
  const double limit = 1.0 / (1.0 - 0.25);
  double prev = 0.0;
  for (int T : {50, 100, 200, 400}) {
    const double gap = std::abs(gamma_T_closed(0.5, Eigen::VectorXd::Ones(T)) - limit);
    if (prev > 0.0) EXPECT_NEAR(prev / gap, 2.0, 0.05);
    EXPECT_LT(gap * T, 2.0);
    prev = gap;
  }
}

TEST(Gamma, RejectsInvalid) {
  EXPECT_THROW(gamma_T_closed(1.0, Eigen::VectorXd::Ones(5)), InvalidInput);
  Eigen::VectorXd bad = Eigen::VectorXd::Ones(5);
  bad(1) = 0.0;
  EXPECT_THROW(gamma_T_closed(0.2, bad), InvalidInput);
}

TEST(Nu, LastUnitVectorGivesZero) {
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(7, 1);
  F(6, 0) = 1.0;
  EXPECT_NEAR(nu_T(0.5, F, Eigen::VectorXd::Ones(7)), 0.0, 1e-15);
}

TEST(Nu, MatchesDenseTraceOnRoughFactors) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z;
  Eigen::MatrixXd F(50, 2);
  for (int t = 0; t < 50; ++t)
    for (int k = 0; k < 2; ++k) F(t, k) = z(rng);
  const Eigen::VectorXd D = Eigen::VectorXd::LinSpaced(50, 0.5, 1.5);
  EXPECT_NEAR(nu_T(0.6, F, D), nu_dense(0.6, F, D), 1e-10);
  EXPECT_GE(nu_T(0.6, F, D), 0.0);
}

TEST(Nu, SmoothFactorsDecay) {
  double prev = INFINITY;
  for (int T : {50, 100, 200, 400, 800}) {
    Eigen::MatrixXd F(T, 1);
    for (int t = 1; t <= T; ++t) F(t - 1, 0) = 1.0 + static_cast<double>(t) / T;
    const double nu = nu_T(0.5, F, Eigen::VectorXd::Ones(T));
    EXPECT_LT(nu, prev);
    prev = nu;
  }
  EXPECT_LT(prev, 0.01);
}

TEST(Nu, ZeroWhenLFInColumnSpace) {
  // alpha = 0, F = [e_2, e_3]: LF = JF = [e_3, 0].
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(3, 2);
  F(1, 0) = 1.0;
  F(2, 1) = 1.0;
  EXPECT_NEAR(nu_T(0.0, F, Eigen::VectorXd::Ones(3)), 0.0, 1e-15);
}

TEST(HNorm, Formula) {
  EXPECT_EQ(h_norm_sq(0.0, Eigen::MatrixXd::Zero(5, 1), 1.2, 0.3, Eigen::VectorXd::Ones(5)), 0.0);
  EXPECT_NEAR(h_norm_sq(1.0, Eigen::MatrixXd::Zero(5, 1), 4.0 / 3.0, 0.0, Eigen::VectorXd::Ones(5)), 4.0 / 3.0,
              1e-15);
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(3, 1);
  f(1, 0) = 2.0;
  Eigen::VectorXd s2(3);
  s2 << 1.0, 4.0, 1.0;
  EXPECT_NEAR(h_norm_sq(0.5, f, 1.0, 1.0, s2), 0.25 * 2.0 + 1.0, 1e-15);
}

TEST(Report, BoundsOrdered) {
  Eigen::MatrixXd F(30, 1);
  for (int t = 0; t < 30; ++t) F(t, 0) = std::sin(0.7 * t) + 0.2;
  const EfficiencyReport rep = efficiency_report(0.5, F, Eigen::VectorXd::Constant(30, 1.5));
  EXPECT_LE(rep.bound_alpha_ell2, rep.bound_alpha_ellinf);
  EXPECT_NEAR(rep.bound_alpha_ellinf, 1.0 / rep.gamma_T, 1e-15);
  EXPECT_EQ(rep.factor_bounds.size(), 30u);
  EXPECT_DOUBLE_EQ(rep.factor_bounds[3], 1.5);
}

TEST(LagTraces, ConvergeToClosedFormIntegrals) {
  const int T = 2000;
  Eigen::MatrixXd F(T, 1);
  for (int t = 1; t <= T; ++t) F(t - 1, 0) = 1.0 + static_cast<double>(t) / T;
  const LagTraces lt = lag_traces(0.5, F, Eigen::VectorXd::Ones(T));
  const double cross = lag_trace_limit_cross(0.5, {1.0, 1.0}, 1.0);
  const double quad = lag_trace_limit_quad(0.5, {1.0, 1.0}, 1.0);
  EXPECT_NEAR(poly_square_integral({1.0, 1.0}, 1.0), 7.0 / 3.0, 1e-15);
  EXPECT_LT(std::abs(lt.cross(0, 0) - cross) / cross, 0.02);
  EXPECT_LT(std::abs(lt.quad(0, 0) - quad) / quad, 0.02);
}
