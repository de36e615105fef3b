#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelqmle/likelihood.hpp"
#include "panelqmle/structural.hpp"

namespace panelqmle {

struct EstimationOptions {
  // Stage 1: coordinate ascent (closed-form alpha, EM step for F and D).
  int max_stage1_cycles = 500;
  double stage1_tol = 1e-9;
  // Stage 2: BFGS on (alpha, vec F, log sigma_t^2) with the analytic score.
  int max_iterations = 2000;
  double rel_tol = 1e-10;
  double grad_tol = 1e-6;  // scaled by (1 + |loglik|)
  // Stage 3: damped Newton on the free coordinates if BFGS stalls.
  int max_newton_iterations = 100;
  double variance_floor = kVarianceFloor;
};

struct FitResult {
  ModelParams params;  // F normalized; delta = B(alpha_hat) ybar
  double loglik = 0.0;
  double loglik_init = 0.0;
  int iterations = 0;  // stage-2 iterations
  int stage1_cycles = 0;
  bool converged = false;
  double grad_norm = 0.0;  // infinity norm of the score at the result, active floor bounds excluded
  double se_alpha = 0.0;
  int N = 0;
  int T = 0;
  std::vector<double> loglik_trace;  // value after every accepted update, both stages
  std::vector<std::string> warnings;
};

// Starting values: alpha from the Anderson-Hsiao moment on cross-sectionally demeaned data
// (pooled least squares when the moment is degenerate), clipped to [-0.99, 0.99]; F and D from
// the leading r eigenpairs of B(alpha) S B(alpha)'. Throws NumericDegeneracy for data with no
// cross-sectional variation.
ModelParams init_params(const PanelMoments& moments, int r);
ModelParams init_params(const PanelData& data, int r);

FitResult estimate_qmle(const PanelData& data, int r, const EstimationOptions& options = {});
// Same estimator on precomputed moments; skips the raw-data validation.
FitResult estimate_qmle(const PanelMoments& moments, int r, const EstimationOptions& options = {});

// (N T gamma_T(alpha_hat, D_hat))^{-1/2}.
double standard_error_alpha(const FitResult& fit);

// Per-t standard error of each coordinate of f_hat_t: sqrt(sigma_t^2 / N).
Eigen::VectorXd estimate_factors_se(const FitResult& fit);

struct FixedEffectsOptions {
  double tol = 1e-9;  // relative objective change
  int max_iterations = 5000;
};

struct FEFitResult {
  double alpha = 0.0;
  Eigen::MatrixXd Lambda;  // N x r
  Eigen::MatrixXd F;       // T x r; row t=1 is zero (not in the objective)
  Eigen::VectorXd delta;   // delta_1 = 0 for the same reason
  double sigma2 = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

// Homoskedastic fixed-effects estimator: alternating least squares for (alpha, delta) and
// principal components for (Lambda, F) on sum_i sum_{t>=2} (y_it - alpha y_{i,t-1} - delta_t
// - lambda_i'f_t)^2. Throws ConvergenceFailure if the objective increases.
FEFitResult estimate_fixed_effects(const PanelData& data, int r, const FixedEffectsOptions& options = {});

}  // namespace panelqmle
