// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "panelqmle/efficiency.hpp"
#include "panelqmle/estimation.hpp"
#include "panelqmle/likelihood.hpp"
#include "panelqmle/local_expansion.hpp"
#include "panelqmle/parallel.hpp"
#include "panelqmle/simulation.hpp"
#include "panelqmle/structural.hpp"

using namespace panelqmle;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_jobs = 1;

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

SeriesSpec rising() { return SeriesSpec::polynomial({1.0, 1.0}); }

// Mean-zero factor, three cycles over the sample.
SeriesSpec oscillating() {
  SeriesSpec s;
  s.kind = SeriesSpec::Kind::sine;
  s.amplitude = 1.0;
  s.frequency = 3.0;
  return s;
}


DgpConfig mc_design(std::uint64_t seed) {
  DgpConfig cfg;
  cfg.N = 1000;
  cfg.T = 20;
  cfg.r = 1;
  cfg.alpha = 0.5;
  cfg.factors = {rising()};
  cfg.sigma2 = SeriesSpec::constant_value(1.0);
  cfg.seed = seed;
  return cfg;
}

DgpConfig attainment_design(std::uint64_t seed) {
  DgpConfig cfg = mc_design(seed);
  cfg.factors = {oscillating()};
  return cfg;
}

// Shared by criteria 3 and 6.
const MonteCarloSummary& gaussian_mc() {
  static const MonteCarloSummary s = mc_estimation(attainment_design(20240601), 500, EstimatorChoice::qmle, g_jobs);
  return s;
}

Outcome c1_bound_value() {
  const double g = gamma_T_closed(0.5, Eigen::VectorXd::Ones(500));
  const double rel_g = std::abs(g - 4.0 / 3.0) / (4.0 / 3.0);
  const double rel_b = std::abs(1.0 / g - 0.75) / 0.75;
  return {rel_g < 0.01 && rel_b < 0.01, "gamma_T=" + fmt("%.6f", g) + " bound=" + fmt("%.6f", 1.0 / g)};
}

Outcome c2_trace_vs_closed() {
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> ua(-0.99, 0.99), uv(0.05, 10.0);
  std::uniform_int_distribution<int> uT(2, 100);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const int T = uT(rng);
    const double a = ua(rng);
    Eigen::VectorXd s2(T);
    for (int t = 0; t < T; ++t) s2(t) = uv(rng);
    const double c = gamma_T_closed(a, s2);
    worst = std::max(worst, std::abs(gamma_T_trace(a, s2) - c) / std::max(1.0, std::abs(c)));
  }
  return {worst <= 1e-12, "max scaled diff=" + fmt("%.3e", worst) + " over 1000 draws"};
}

Outcome variance_attainment(const MonteCarloSummary& s, bool check_bias) {
  const double ratio = s.variance_scaled / s.bound;
  const double z = s.bias / s.mc_se;
  bool pass = s.valid && std::abs(ratio - 1.0) <= 0.2;
  if (check_bias) pass = pass && std::abs(z) <= 3.0;
  std::string d = "NT var=" + fmt("%.4f", s.variance_scaled) + " bound=" + fmt("%.4f", s.bound) +
                  " ratio=" + fmt("%.3f", ratio) + " bias=" + fmt("%.2e", s.bias) + " (" + fmt("%.2f", z) +
                  " MC se) failures=" + std::to_string(s.failures);
  return {pass, d};
}

Outcome c3_gaussian() { return variance_attainment(gaussian_mc(), true); }

Outcome c4_student_t() {
  DgpConfig cfg = attainment_design(20240602);
  cfg.shocks = {ShockSpec::Kind::student_t, 8.0};
  return variance_attainment(mc_estimation(cfg, 500, EstimatorChoice::qmle, g_jobs), false);
}

Outcome c5_factor_bound() {
  DgpConfig cfg = attainment_design(20240603);
  cfg.T = 60;
  cfg.sigma2 = rising();
  const MonteCarloSummary s = mc_estimation(cfg, 2000, EstimatorChoice::qmle, g_jobs);
  double worst = 0.0;
  int worst_t = 0;
  for (int t = 0; t < s.T; ++t) {
    const double rel = std::abs(s.factor_var_scaled[t] / s.sigma2_true[t] - 1.0);
    if (rel > worst) {
      worst = rel;
      worst_t = t + 1;
    }
  }
  return {s.valid && worst <= 0.2, "T=60 reps=2000 max |ratio-1|=" + fmt("%.3f", worst) + " at t=" +
                                       std::to_string(worst_t) + " failures=" + std::to_string(s.failures)};
}

Outcome c6_coverage() {
  const MonteCarloSummary& s = gaussian_mc();
  return {s.valid && s.coverage_95 >= 0.92 && s.coverage_95 <= 0.98, "coverage=" + fmt("%.3f", s.coverage_95)};
}

Outcome c7_nickell() {
  DgpConfig cfg = mc_design(20240607);
  cfg.T = 10;
  cfg.factors = {SeriesSpec::constant_value(1.0)};
  const FeComparison cmp = compare_fe_qmle(cfg, 200, {10, 20}, g_jobs);
  const FeComparisonRow& r10 = cmp.rows[0];
  const FeComparisonRow& r20 = cmp.rows[1];
  const bool pass = cmp.valid && std::abs(r10.bias_fe) > 5.0 * std::abs(r10.bias_qmle) &&
                    std::abs(r20.bias_fe) < std::abs(r10.bias_fe);
  return {pass, "T=10 bias_FE=" + fmt("%.4f", r10.bias_fe) + " bias_QMLE=" + fmt("%.4f", r10.bias_qmle) +
                    " T=20 bias_FE=" + fmt("%.4f", r20.bias_fe)};
}

Outcome c8_expansion() {
  DgpConfig cfg = mc_design(20240608);
  const std::vector<LrLadderRow> rows = lr_ladder(cfg, 1.0, {SeriesSpec::constant_value(0.5)},
                                                  PerturbationMode::ell_infinity, {{100, 10}, {400, 20}, {1600, 40}},
                                                  200, g_jobs);
  bool pass = true;
  std::string d = "median |residual|:";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    d += " (" + std::to_string(rows[k].N) + "," + std::to_string(rows[k].T) + ")=" +
         fmt("%.4g", rows[k].median_abs_residual);
    if (k > 0 && !(rows[k].median_abs_residual < rows[k - 1].median_abs_residual)) pass = false;
  }
  return {pass, d};
}

Outcome c9_variance_formula() {
  DgpConfig cfg = mc_design(20240609);
  cfg.N = 500;
  cfg.T = 12;
  cfg.sigma2 = SeriesSpec::polynomial({1.0, 0.5});
  cfg.loadings.kind = LoadingSpec::Kind::rademacher_scaled;
  const ModelParams th = stationary_truth(cfg);
  const int T = cfg.T;

  std::vector<Perturbation> perts(3);
  perts[0].mode = PerturbationMode::ell_infinity;
  perts[0].atilde = 1.0;
  perts[0].Ftilde = SeriesSpec::polynomial({0.5, -1.0, 0.5}).evaluate(T);

  perts[1].mode = PerturbationMode::smooth_C;
  perts[1].atilde = 1.0;
  perts[1].Ftilde = smooth_orthogonal_perturbation({SeriesSpec::polynomial({0.0, 0.0, 2.0})}, th.F, th.Dvec);

  // Two-point f~ with (MLF)'f~ = 0, so the d1-d3 covariance vanishes.
  const Eigen::VectorXd mlf = apply_projection_M(th.F, th.Dvec, apply_L(th.alpha, th.F)).col(0);
  const int t1 = 3, t2 = 8;
  Eigen::MatrixXd f2 = Eigen::MatrixXd::Zero(T, 1);
  f2(t1, 0) = mlf(t2);
  f2(t2, 0) = -mlf(t1);
  f2 *= 1.5 / f2.norm();
  perts[2].mode = PerturbationMode::ell_2;
  perts[2].atilde = 1.0;
  perts[2].Ftilde = f2;

  bool pass = true;
  std::string d;
  for (const Perturbation& p : perts) {
    const LanReport rep = lan_diagnostics(cfg, p, 2000, g_jobs);
    const double ratio = rep.variance / rep.target_variance;
    if (!(std::abs(ratio - 1.0) <= 0.1)) pass = false;
    d += std::string(d.empty() ? "" : " ") + mode_name(p.mode) + ": emp/formula=" + fmt("%.3f", ratio);
  }
  return {pass, d};
}

Outcome c10_orthogonality() {
  DgpConfig cfg = mc_design(20240610);
  cfg.N = 500;
  cfg.T = 10;
  cfg.sigma2 = SeriesSpec::polynomial({1.0, 1.0});
  const OrthogonalityReport rep = efficient_score_orthogonality(cfg, 2000, g_jobs);
  const bool pass = rep.max_abs_corr < 0.07 && rep.projection_rel_error_population < 0.02 &&
                    rep.projection_rel_error_regression < 0.02;
  return {pass, "max|corr|=" + fmt("%.4f", rep.max_abs_corr) + " band=" + fmt("%.4f", rep.noise_band) +
                    " proj err pop=" + fmt("%.2e", rep.projection_rel_error_population) +
                    " reg=" + fmt("%.2e", rep.projection_rel_error_regression)};
}

Outcome c11_lag_traces() {
  const double alpha = 0.5;
  const int T = 2000;
  const Eigen::MatrixXd F = rising().evaluate(T);
  const LagTraces lt = lag_traces(alpha, F, Eigen::VectorXd::Ones(T));
  const double cross = lag_trace_limit_cross(alpha, {1.0, 1.0}, 1.0);
  const double quad = lag_trace_limit_quad(alpha, {1.0, 1.0}, 1.0);
  const double ec = std::abs(lt.cross(0, 0) - cross) / cross;
  const double eq = std::abs(lt.quad(0, 0) - quad) / quad;
  std::vector<double> nus;
  bool decreasing = true;
  for (int TT : {50, 100, 200, 400, 800}) {
    nus.push_back(nu_T(alpha, rising().evaluate(TT), Eigen::VectorXd::Ones(TT)));
    if (nus.size() > 1 && !(nus.back() < nus[nus.size() - 2])) decreasing = false;
  }
  const bool pass = ec <= 0.02 && eq <= 0.02 && decreasing && nus[3] < nus[1];
  return {pass, "cross rel err=" + fmt("%.4f", ec) + " quad rel err=" + fmt("%.4f", eq) +
                    " nu(100)=" + fmt("%.4g", nus[1]) + " nu(400)=" + fmt("%.4g", nus[3])};
}

Outcome c12_numerics() {
  std::mt19937_64 rng(1212);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> uv(0.3, 3.0);
  double wood = 0.0;
  for (int T : {8, 16, 40}) {
    for (int r : {1, 3}) {
      Eigen::MatrixXd F(T, r);
      for (int t = 0; t < T; ++t)
        for (int k = 0; k < r; ++k) F(t, k) = z(rng);
      Eigen::VectorXd D(T);
      for (int t = 0; t < T; ++t) D(t) = uv(rng);
      const Eigen::MatrixXd dense = (F * F.transpose() + Eigen::MatrixXd(D.asDiagonal())).inverse();
      wood = std::max(wood, (factorize_covariance(F, D).inv - dense).norm() / dense.norm());
    }
  }

  double score_err = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    DgpConfig cfg = mc_design(500 + rep);
    cfg.N = 60;
    cfg.T = 8;
    const SimulatedPanel sim = simulate_panel(cfg);
    ModelParams p = sim.truth.theta0;
    p.alpha += 0.05;
    p.F.array() += 0.1;
    const PanelMoments m = compute_moments(sim.data);
    const Eigen::VectorXd a = score_analytic(p, m);
    const Eigen::VectorXd n = score_numeric(p, m, 1e-5);
    score_err = std::max(score_err, (a - n).norm() / std::max(1.0, n.norm()));
  }

  double lerr = 0.0;
  for (double alpha : {-0.9, 0.0, 0.5, 0.95}) {
    const int T = 30;
    const StructuralSet s = build_structural(alpha, T);
    Eigen::MatrixXd Binv = Eigen::MatrixXd::Zero(T, T);
    for (int k = 0; k < T; ++k)
      for (int t = k; t < T; ++t) Binv(t, k) = t == k ? 1.0 : alpha * Binv(t - 1, k);
    lerr = std::max(lerr, (s.L - s.J * Binv).cwiseAbs().maxCoeff());
  }

  DgpConfig cfg = mc_design(77);
  cfg.N = 80;
  cfg.T = 6;
  cfg.r = 2;
  cfg.factors.push_back(SeriesSpec::polynomial({0.5, -1.0, 2.0}));
  const SimulatedPanel sim = simulate_panel(cfg);
  const ModelParams& p = sim.truth.theta0;
  const double base = loglik_concentrated(p, sim.data);
  ModelParams rot = p;
  const double c = std::cos(0.7), s = std::sin(0.7);
  Eigen::Matrix2d R;
  R << c, -s, s, c;
  rot.F = p.F * R;
  PanelData shifted = sim.data;
  for (int t = 0; t < cfg.T; ++t) shifted.Y.col(t).array() += 3.0 * t - 1.0;
  const double inv_err = std::max(std::abs(loglik_concentrated(rot, sim.data) - base),
                                  std::abs(loglik_concentrated(p, shifted) - base)) /
                         std::max(1.0, std::abs(base));

  const bool pass = wood <= 1e-10 && score_err <= 1e-5 && lerr <= 1e-13 && inv_err <= 1e-9;
  return {pass, "woodbury=" + fmt("%.2e", wood) + " score=" + fmt("%.2e", score_err) + " L=" + fmt("%.2e", lerr) +
                    " invariance=" + fmt("%.2e", inv_err)};
}

}  // namespace

int main(int argc, char** argv) {
  g_jobs = argc > 1 ? std::max(1, std::atoi(argv[1])) : default_jobs();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"bound value at T=500", c1_bound_value},
      {"trace vs closed-form gamma_T", c2_trace_vs_closed},
      {"variance attainment, Gaussian", c3_gaussian},
      {"variance attainment, student-t(8)", c4_student_t},
      {"factor variance bound", c5_factor_bound},
      {"95% interval coverage", c6_coverage},
      {"fixed-effects bias ordering", c7_nickell},
      {"likelihood-ratio expansion ladder", c8_expansion},
      {"Delta variance formula per mode", c9_variance_formula},
      {"efficient-score orthogonality", c10_orthogonality},
      {"lag-trace limits and nu_T decay", c11_lag_traces},
      {"numerical infrastructure", c12_numerics},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[k].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!out.pass) ++failures;
    std::printf("%s  %2zu  %-36s %s [%.1fs]\n", out.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
