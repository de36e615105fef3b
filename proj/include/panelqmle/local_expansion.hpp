#pragma once

// Local likelihood-ratio expansion around the true parameter: the exact log-likelihood ratio
// at theta0 + theta~ / rate, the linear terms Delta_NT, their variance, and LAN diagnostics.
// Everything here needs the simulated truth (loadings and shocks), so inputs are TruthRecords.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelqmle/likelihood.hpp"
#include "panelqmle/simulation.hpp"

namespace panelqmle {

enum class PerturbationMode { ell_infinity, smooth_C, ell_2 };

const char* mode_name(PerturbationMode mode);
// Accepts ell_infinity / ell_inf, smooth_C, ell_2; throws InvalidInput otherwise.
PerturbationMode parse_mode(const std::string& name);

struct Perturbation {
  double atilde = 0.0;
  Eigen::MatrixXd Ftilde;  // T x r
  PerturbationMode mode = PerturbationMode::ell_infinity;
  double bound = 1e3;  // M in the local parameter set
};

// D-weighted orthogonality tolerance for smooth_C perturbations.
inline constexpr double kSmoothOrthogonalityTol = 1e-2;

// Checks dimensions and the mode's local parameter set:
//   ell_infinity: (1/T) sum_t ||f~_t||^2 <= bound
//   smooth_C:     same, plus max |(1/T) sum_t f~_t f_t' / sigma_t^2| <= kSmoothOrthogonalityTol
//   ell_2:        sum_t ||f~_t||^2 <= bound
void validate_perturbation(const Perturbation& pert, const ModelParams& theta0);

// F~ = psi~(t/T) with the D^{-1}-weighted projection on F removed on the grid.
Eigen::MatrixXd smooth_orthogonal_perturbation(const std::vector<SeriesSpec>& psi_tilde, const Eigen::MatrixXd& F,
                                               const Eigen::VectorXd& Dvec);

struct DeltaTerms {
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
  double variance_formula = 0.0;
  double lr_exact = 0.0;
  double residual = 0.0;  // lr_exact - (d1 + d2 + d3 - variance_formula / 2)

  double delta() const { return d1 + d2 + d3; }
};

// Closed-form E[Delta^2] for the mode, assuming (1/N) sum_i lambda_i lambda_i' = I_r:
//   ell_infinity: (1/T)tr(F~'MF~) + a~^2 gamma_T + a~^2 nu_T + 2 a~ (1/T)tr((LF)'MF~)
//   smooth_C:     (1/T)tr(F~'D^{-1}F~) + a~^2 gamma_T
//   ell_2:        tr(F~'D^{-1}F~) + a~^2 (gamma_T + nu_T)
double variance_formula(const Perturbation& pert, const ModelParams& theta0);

// d1, d2, d3 and variance_formula; lr_exact and residual are NaN.
DeltaTerms delta_terms(const Perturbation& pert, const TruthRecord& truth);
// Also fills lr_exact and residual from the realized panel.
DeltaTerms delta_terms(const Perturbation& pert, const TruthRecord& truth, const PanelData& data);

// l(alpha + a~/sqrt(NT), F + F~ c) - l(alpha, F) for the concentrated likelihood, D fixed, with
// c = 1/sqrt(NT) (ell_infinity, smooth_C) or 1/sqrt(N) (ell_2).
double lr_exact(const Perturbation& pert, const ModelParams& theta0, const PanelData& data);

// Delta_NT2 = (NT)^{-1/2} sum_i (L eps_i)'D^{-1} eps_i, Delta_NT3 = (NT)^{-1/2} sum_i lambda_i'(LF)'M eps_i,
// and the factor scores v_t = N^{-1/2} sum_i lambda_i (M eps_i)_t stacked as V (T*r, t-major).
struct ScoreComponents {
  double delta2 = 0.0;
  double delta3 = 0.0;
  Eigen::VectorXd V;
};

ScoreComponents score_components(const TruthRecord& truth);

struct OrthogonalityReport {
  int reps = 0;
  Eigen::MatrixXd corr;  // T x r, corr(Delta_NT2, v_t)
  double max_abs_corr = 0.0;
  double noise_band = 0.0;  // 1 / sqrt(reps)
  double var_delta2 = 0.0;
  double gamma_T = 0.0;
  double projection_rel_error_population = 0.0;  // using E(VV') and E(V Delta_NT3) in closed form
  double projection_rel_error_regression = 0.0;  // least squares of Delta_NT3 on V across reps
};

// reps >= 1000 independent truth draws of config (Gaussian shocks required).
OrthogonalityReport efficient_score_orthogonality(const DgpConfig& config, int reps, int jobs);

struct LanReport {
  int reps = 0;
  double mean = 0.0;
  double variance = 0.0;
  double target_variance = 0.0;  // variance_formula
  double h_norm_sq = 0.0;        // a~^2 (gamma_T + nu_T) + sum_t ||f~_t||^2 / sigma_t^2 (ell_2 scaling)
  double ks_distance = 0.0;      // sup |F_emp - Phi(x / sqrt(target))|
  std::vector<double> deltas;
};

// Delta over reps truth draws for a fixed perturbation (Gaussian shocks required).
LanReport lan_diagnostics(const DgpConfig& config, const Perturbation& pert, int reps, int jobs);

struct SimplificationRow {
  int T = 0;
  double nu_T = 0.0;
  double cross_term = 0.0;         // (1/T) tr((LF)'MF~)
  double var_d3 = 0.0;             // a~^2 nu_T
  double substitution_gap = 0.0;   // rms of d1(M) - d1(D^{-1})
  double substitution_gap_sigma = 0.0;  // rms of d1(M) - d1((FF'+D)^{-1})
  double orthogonality = 0.0;      // max |(1/T) F~'D^{-1}F|
};

// Magnitudes of the terms dropped under smooth factors: f_t = psi(t/T), sigma_t^2 = sigma2(t/T),
// f~ from psi_tilde orthogonalized on each grid.
std::vector<SimplificationRow> smooth_design_simplification_check(double alpha, const std::vector<SeriesSpec>& psi,
                                                             const SeriesSpec& sigma2,
                                                             const std::vector<SeriesSpec>& psi_tilde, double atilde,
                                                             const std::vector<int>& T_grid);

struct LrLadderRow {
  int N = 0;
  int T = 0;
  int reps = 0;
  double median_abs_residual = 0.0;
  double mean_residual = 0.0;
  double mean_lr = 0.0;
  double variance_formula = 0.0;
  std::string regime;
};

// For each (N, T) rung: simulate reps panels, evaluate delta_terms with the perturbation
// a~ and f~_t = psi_tilde(t/T), and summarize |residual|.
std::vector<LrLadderRow> lr_ladder(const DgpConfig& base, double atilde, const std::vector<SeriesSpec>& psi_tilde,
                                   PerturbationMode mode, const std::vector<std::pair<int, int>>& ladder, int reps,
                                   int jobs);

// sup_x |F_n(x) - Phi(x / sd)| for the empirical CDF of xs.
double ks_distance_normal(std::vector<double> xs, double sd);

}  // namespace panelqmle
