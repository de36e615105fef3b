#include "panelqmle/local_expansion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "panelqmle/efficiency.hpp"
#include "panelqmle/errors.hpp"
#include "panelqmle/parallel.hpp"
#include "panelqmle/structural.hpp"

namespace panelqmle {

const char* mode_name(PerturbationMode mode) {
  switch (mode) {
    case PerturbationMode::ell_infinity: return "ell_infinity";
    case PerturbationMode::smooth_C: return "smooth_C";
    case PerturbationMode::ell_2: return "ell_2";
  }
  return "?";
}

PerturbationMode parse_mode(const std::string& name) {
  if (name == "ell_infinity" || name == "ell_inf") return PerturbationMode::ell_infinity;
  if (name == "smooth_C" || name == "smooth_c") return PerturbationMode::smooth_C;
  if (name == "ell_2" || name == "ell2") return PerturbationMode::ell_2;
  throw InvalidInput("unknown perturbation mode '" + name + "' (expected ell_infinity, smooth_C or ell_2)");
}

namespace {

// M X, falling back to D^{-1} X when there are no factors.
Eigen::MatrixXd apply_M(const Eigen::MatrixXd& F, const Eigen::VectorXd& D, const Eigen::MatrixXd& X) {
  if (F.cols() == 0) return D.cwiseInverse().asDiagonal() * X;
  return apply_projection_M(F, D, X);
}

double gamma_of(double alpha, const Eigen::VectorXd& D) {
  return std::abs(alpha) < 1.0 ? gamma_T_closed(alpha, D) : gamma_T_trace(alpha, D);
}

double nu_of(double alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& D) {
  return F.cols() == 0 ? 0.0 : nu_T(alpha, F, D);
}

double sum_prod(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) { return (A.array() * B.array()).sum(); }

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

void require_gaussian(const DgpConfig& config, const char* who) {
  if (config.shocks.kind != ShockSpec::Kind::gaussian) {
    throw InvalidInput(std::string(who) + ": requires Gaussian shocks");
  }
}

}  // namespace

void validate_perturbation(const Perturbation& pert, const ModelParams& theta0) {
  const int T = theta0.T();
  if (pert.Ftilde.rows() != T || pert.Ftilde.cols() != theta0.r()) {
    throw InvalidInput("perturbation: F~ must be " + std::to_string(T) + " x " + std::to_string(theta0.r()));
  }
  if (!std::isfinite(pert.atilde) || !pert.Ftilde.allFinite()) throw InvalidInput("perturbation: non-finite entries");
  if (std::abs(pert.atilde) > pert.bound) throw InvalidInput("perturbation: |a~| exceeds the bound");
  const double ss = pert.Ftilde.squaredNorm();
  if (pert.mode == PerturbationMode::ell_2) {
    if (ss > pert.bound) throw InvalidInput("perturbation: sum_t ||f~_t||^2 exceeds the ell_2 bound");
    return;
  }
  if (ss / T > pert.bound) throw InvalidInput("perturbation: (1/T) sum_t ||f~_t||^2 exceeds the bound");
  if (pert.mode == PerturbationMode::smooth_C && theta0.r() > 0) {
    const Eigen::MatrixXd inner = pert.Ftilde.transpose() * theta0.Dvec.cwiseInverse().asDiagonal() * theta0.F / T;
    const double worst = inner.cwiseAbs().maxCoeff();
    if (worst > kSmoothOrthogonalityTol) {
      throw InvalidInput("perturbation: smooth_C requires F~ to be D-orthogonal to F (max inner product " +
                         std::to_string(worst) + ")");
    }
  }
}

Eigen::MatrixXd smooth_orthogonal_perturbation(const std::vector<SeriesSpec>& psi_tilde, const Eigen::MatrixXd& F,
                                               const Eigen::VectorXd& Dvec) {
  const int T = static_cast<int>(Dvec.size());
  if (static_cast<Eigen::Index>(psi_tilde.size()) != F.cols()) {
    throw InvalidInput("smooth perturbation: need one series per factor column");
  }
  Eigen::MatrixXd Ft(T, F.cols());
  for (Eigen::Index k = 0; k < F.cols(); ++k) Ft.col(k) = psi_tilde[k].evaluate(T);
  if (F.cols() == 0) return Ft;
  const Eigen::MatrixXd DinvF = Dvec.cwiseInverse().asDiagonal() * F;
  const Eigen::MatrixXd G = F.transpose() * DinvF;
  return Ft - F * G.ldlt().solve(DinvF.transpose() * Ft);
}

double variance_formula(const Perturbation& pert, const ModelParams& theta0) {
  const double T = theta0.T();
  const Eigen::MatrixXd& F = theta0.F;
  const Eigen::VectorXd& D = theta0.Dvec;
  const double a = pert.atilde;
  const double gamma = gamma_of(theta0.alpha, D);
  const Eigen::MatrixXd DinvFt = D.cwiseInverse().asDiagonal() * pert.Ftilde;
  switch (pert.mode) {
    case PerturbationMode::ell_infinity: {
      const Eigen::MatrixXd MFt = apply_M(F, D, pert.Ftilde);
      const double cross = F.cols() == 0 ? 0.0 : sum_prod(apply_L(theta0.alpha, F), MFt) / T;
      return sum_prod(pert.Ftilde, MFt) / T + a * a * (gamma + nu_of(theta0.alpha, F, D)) + 2.0 * a * cross;
    }
    case PerturbationMode::smooth_C:
      return sum_prod(pert.Ftilde, DinvFt) / T + a * a * gamma;
    case PerturbationMode::ell_2:
      return sum_prod(pert.Ftilde, DinvFt) + a * a * (gamma + nu_of(theta0.alpha, F, D));
  }
  return 0.0;
}

DeltaTerms delta_terms(const Perturbation& pert, const TruthRecord& truth) {
  const ModelParams& th = truth.theta0;
  validate_perturbation(pert, th);
  const double N = static_cast<double>(truth.eps.rows());
  const double T = th.T();
  if (truth.eps.cols() != th.T() || truth.lambda.rows() != truth.eps.rows() || truth.lambda.cols() != th.r()) {
    throw InvalidInput("delta_terms: truth record dimensions are inconsistent");
  }
  const double rootNT = std::sqrt(N * T);
  const Eigen::MatrixXd Et = truth.eps.transpose();  // T x N
  const Eigen::MatrixXd DinvE = th.Dvec.cwiseInverse().asDiagonal() * Et;
  const bool uses_M = pert.mode != PerturbationMode::smooth_C;
  Eigen::MatrixXd MEL;  // sum_i (M eps_i) lambda_i', T x r
  if (uses_M) MEL = apply_M(th.F, th.Dvec, Et) * truth.lambda;
  const Eigen::MatrixXd DEL = DinvE * truth.lambda;

  DeltaTerms out;
  switch (pert.mode) {
    case PerturbationMode::ell_infinity:
      out.d1 = sum_prod(pert.Ftilde, MEL) / rootNT;
      break;
    case PerturbationMode::smooth_C:
      out.d1 = sum_prod(pert.Ftilde, DEL) / rootNT;
      break;
    case PerturbationMode::ell_2:
      out.d1 = sum_prod(pert.Ftilde, DEL) / std::sqrt(N);
      break;
  }
  out.d2 = pert.atilde * sum_prod(apply_L(th.alpha, Et), DinvE) / rootNT;
  if (uses_M && th.r() > 0) out.d3 = pert.atilde * sum_prod(apply_L(th.alpha, th.F), MEL) / rootNT;
  out.variance_formula = variance_formula(pert, th);
  out.lr_exact = std::numeric_limits<double>::quiet_NaN();
  out.residual = std::numeric_limits<double>::quiet_NaN();
  return out;
}

DeltaTerms delta_terms(const Perturbation& pert, const TruthRecord& truth, const PanelData& data) {
  DeltaTerms out = delta_terms(pert, truth);
  out.lr_exact = lr_exact(pert, truth.theta0, data);
  out.residual = out.lr_exact - (out.delta() - 0.5 * out.variance_formula);
  return out;
}

double lr_exact(const Perturbation& pert, const ModelParams& theta0, const PanelData& data) {
  validate_perturbation(pert, theta0);
  if (data.T() != theta0.T()) throw InvalidInput("lr_exact: panel length does not match the parameters");
  const double N = data.N();
  const double T = data.T();
  const PanelMoments m = compute_moments(data);
  ModelParams moved = theta0;
  moved.alpha = theta0.alpha + pert.atilde / std::sqrt(N * T);
  const double scale = pert.mode == PerturbationMode::ell_2 ? 1.0 / std::sqrt(N) : 1.0 / std::sqrt(N * T);
  moved.F = theta0.F + scale * pert.Ftilde;
  return loglik_concentrated(moved, m) - loglik_concentrated(theta0, m);
}

ScoreComponents score_components(const TruthRecord& truth) {
  const ModelParams& th = truth.theta0;
  const double N = static_cast<double>(truth.eps.rows());
  const int T = th.T();
  const int r = th.r();
  const double rootNT = std::sqrt(N * T);
  const Eigen::MatrixXd Et = truth.eps.transpose();
  const Eigen::MatrixXd DinvE = th.Dvec.cwiseInverse().asDiagonal() * Et;
  ScoreComponents out;
  out.delta2 = sum_prod(apply_L(th.alpha, Et), DinvE) / rootNT;
  const Eigen::MatrixXd MEL = apply_M(th.F, th.Dvec, Et) * truth.lambda;
  out.delta3 = r > 0 ? sum_prod(apply_L(th.alpha, th.F), MEL) / rootNT : 0.0;
  out.V.resize(static_cast<Eigen::Index>(T) * r);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < r; ++k) out.V(t * r + k) = MEL(t, k) / std::sqrt(N);
  return out;
}

OrthogonalityReport efficient_score_orthogonality(const DgpConfig& config, int reps, int jobs) {
  if (reps < 1000) throw InvalidInput("efficient_score_orthogonality: reps must be at least 1000");
  config.validate();
  require_gaussian(config, "efficient_score_orthogonality");
  if (config.r < 1) throw InvalidInput("efficient_score_orthogonality: needs r >= 1");
  std::vector<ScoreComponents> comps(reps);
  parallel_for(static_cast<std::size_t>(reps), jobs,
               [&](std::size_t k) { comps[k] = score_components(simulate_truth(config, k)); });

  const ModelParams theta0 = stationary_truth(config);
  const int T = config.T, r = config.r;
  const int p = T * r;
  Eigen::MatrixXd V(reps, p);
  Eigen::VectorXd d2(reps), d3(reps);
  for (int k = 0; k < reps; ++k) {
    V.row(k) = comps[k].V.transpose();
    d2(k) = comps[k].delta2;
    d3(k) = comps[k].delta3;
  }

  OrthogonalityReport rep;
  rep.reps = reps;
  rep.noise_band = 1.0 / std::sqrt(static_cast<double>(reps));
  rep.corr.resize(T, r);
  const Eigen::VectorXd d2c = d2.array() - d2.mean();
  for (int j = 0; j < p; ++j) {
    const Eigen::VectorXd vc = V.col(j).array() - V.col(j).mean();
    const double denom = std::sqrt(d2c.squaredNorm() * vc.squaredNorm());
    rep.corr(j / r, j % r) = denom > 0.0 ? d2c.dot(vc) / denom : 0.0;
  }
  rep.max_abs_corr = rep.corr.cwiseAbs().maxCoeff();
  std::vector<double> d2v(d2.data(), d2.data() + reps);
  rep.var_delta2 = variance_of(d2v);
  rep.gamma_T = gamma_of(config.alpha, theta0.Dvec);

  // E(VV') = Psi (x) M with t-major stacking, E(V Delta_NT3) = T^{-1/2} vec_t-major(M L F Psi).
  const double psi = config.loadings.scale * config.loadings.scale;
  const Eigen::MatrixXd M = projection_M(theta0.F, theta0.Dvec);
  Eigen::MatrixXd EVV = Eigen::MatrixXd::Zero(p, p);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < T; ++s)
      for (int k = 0; k < r; ++k) EVV(t * r + k, s * r + k) = psi * M(t, s);
  const Eigen::MatrixXd MLF = M * apply_L(config.alpha, theta0.F) * psi / std::sqrt(static_cast<double>(T));
  Eigen::VectorXd EVd3(p);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < r; ++k) EVd3(t * r + k) = MLF(t, k);
  const Eigen::VectorXd coef_pop = EVV.completeOrthogonalDecomposition().solve(EVd3);
  const Eigen::VectorXd pred_pop = V * coef_pop;
  rep.projection_rel_error_population = (pred_pop - d3).norm() / d3.norm();

  const Eigen::VectorXd coef_reg = V.completeOrthogonalDecomposition().solve(d3);
  rep.projection_rel_error_regression = (V * coef_reg - d3).norm() / d3.norm();
  return rep;
}

double ks_distance_normal(std::vector<double> xs, double sd) {
  if (xs.empty()) throw InvalidInput("ks_distance_normal: empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  if (!(sd > 0.0)) {
    const bool all_zero = std::all_of(xs.begin(), xs.end(), [](double x) { return x == 0.0; });
    return all_zero ? 0.0 : 1.0;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-xs[i] / (sd * std::sqrt(2.0)));
    worst = std::max({worst, std::abs((i + 1) / n - cdf), std::abs(cdf - i / n)});
  }
  return worst;
}

LanReport lan_diagnostics(const DgpConfig& config, const Perturbation& pert, int reps, int jobs) {
  if (reps < 2) throw InvalidInput("lan_diagnostics: reps must be at least 2");
  config.validate();
  require_gaussian(config, "lan_diagnostics");
  const ModelParams theta0 = stationary_truth(config);
  validate_perturbation(pert, theta0);

  LanReport rep;
  rep.reps = reps;
  rep.deltas.resize(reps);
  parallel_for(static_cast<std::size_t>(reps), jobs,
               [&](std::size_t k) { rep.deltas[k] = delta_terms(pert, simulate_truth(config, k)).delta(); });
  rep.mean = mean_of(rep.deltas);
  rep.variance = variance_of(rep.deltas);
  rep.target_variance = variance_formula(pert, theta0);
  const double gamma = gamma_of(config.alpha, theta0.Dvec);
  const double nu = nu_of(config.alpha, theta0.F, theta0.Dvec);
  const double fscale = pert.mode == PerturbationMode::ell_2 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(config.T));
  rep.h_norm_sq = h_norm_sq(pert.atilde, pert.Ftilde * fscale, gamma, nu, theta0.Dvec);
  rep.ks_distance = ks_distance_normal(rep.deltas, std::sqrt(rep.target_variance));
  return rep;
}

std::vector<SimplificationRow> smooth_design_simplification_check(double alpha, const std::vector<SeriesSpec>& psi,
                                                             const SeriesSpec& sigma2,
                                                             const std::vector<SeriesSpec>& psi_tilde, double atilde,
                                                             const std::vector<int>& T_grid) {
  if (psi.empty()) throw InvalidInput("smooth_design_simplification_check: need at least one factor");
  std::vector<SimplificationRow> rows;
  for (int T : T_grid) {
    if (T < 2) throw InvalidInput("smooth_design_simplification_check: T must be at least 2");
    Eigen::MatrixXd F(T, static_cast<Eigen::Index>(psi.size()));
    for (std::size_t k = 0; k < psi.size(); ++k) F.col(static_cast<Eigen::Index>(k)) = psi[k].evaluate(T);
    const Eigen::VectorXd D = sigma2.evaluate(T);
    const Eigen::MatrixXd Ft = smooth_orthogonal_perturbation(psi_tilde, F, D);
    const Eigen::VectorXd Dinv = D.cwiseInverse();

    SimplificationRow row;
    row.T = T;
    row.nu_T = nu_T(alpha, F, D);
    const Eigen::MatrixXd MFt = apply_projection_M(F, D, Ft);
    row.cross_term = sum_prod(apply_L(alpha, F), MFt) / T;
    row.var_d3 = atilde * atilde * row.nu_T;
    // var(d1(A) - d1(M)) = (1/T) tr(F~'(A - M) D (A - M) F~) with (1/N) sum lambda lambda' = I.
    const Eigen::MatrixXd gapD = Dinv.asDiagonal() * Ft - MFt;
    row.substitution_gap = std::sqrt(std::max(0.0, sum_prod(gapD, D.asDiagonal() * gapD) / T));
    const CovarianceFactorization cf = factorize_covariance(F, D);
    const Eigen::MatrixXd gapS = cf.inv * Ft - MFt;
    row.substitution_gap_sigma = std::sqrt(std::max(0.0, sum_prod(gapS, D.asDiagonal() * gapS) / T));
    row.orthogonality = (Ft.transpose() * Dinv.asDiagonal() * F / T).cwiseAbs().maxCoeff();
    rows.push_back(row);
  }
  return rows;
}

std::vector<LrLadderRow> lr_ladder(const DgpConfig& base, double atilde, const std::vector<SeriesSpec>& psi_tilde,
                                   PerturbationMode mode, const std::vector<std::pair<int, int>>& ladder, int reps,
                                   int jobs) {
  if (reps < 2) throw InvalidInput("lr_ladder: reps must be at least 2");
  if (static_cast<int>(psi_tilde.size()) != base.r) throw InvalidInput("lr_ladder: need one f~ series per factor");
  std::vector<LrLadderRow> rows;
  for (const auto& [N, T] : ladder) {
    DgpConfig cfg = base;
    cfg.N = N;
    cfg.T = T;
    cfg.validate();
    const ModelParams theta0 = stationary_truth(cfg);
    Perturbation pert;
    pert.atilde = atilde;
    pert.mode = mode;
    if (mode == PerturbationMode::smooth_C) {
      pert.Ftilde = smooth_orthogonal_perturbation(psi_tilde, theta0.F, theta0.Dvec);
    } else {
      pert.Ftilde.resize(T, cfg.r);
      for (int k = 0; k < cfg.r; ++k) pert.Ftilde.col(k) = psi_tilde[k].evaluate(T);
    }
    validate_perturbation(pert, theta0);

    std::vector<DeltaTerms> terms(reps);
    parallel_for(static_cast<std::size_t>(reps), jobs, [&](std::size_t k) {
      const SimulatedPanel sim = simulate_replication(cfg, k);
      terms[k] = delta_terms(pert, sim.truth, sim.data);
    });
    LrLadderRow row;
    row.N = N;
    row.T = T;
    row.reps = reps;
    row.regime = regime_label(N, T);
    std::vector<double> absres, res, lr;
    for (const DeltaTerms& d : terms) {
      absres.push_back(std::abs(d.residual));
      res.push_back(d.residual);
      lr.push_back(d.lr_exact);
    }
    std::sort(absres.begin(), absres.end());
    const std::size_t n = absres.size();
    row.median_abs_residual = n % 2 ? absres[n / 2] : 0.5 * (absres[n / 2 - 1] + absres[n / 2]);
    row.mean_residual = mean_of(res);
    row.mean_lr = mean_of(lr);
    row.variance_formula = terms.front().variance_formula;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace panelqmle
