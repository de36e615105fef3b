#pragma once

// Finite-T efficiency quantities for alpha and the factors.
//
//   gamma_T = (1/T) tr(L D L' D^{-1})          variance of the efficient score for alpha
//   nu_T    = (1/T) tr[(LF)' M (LF)]           extra information under l2 perturbations
//
// giving the bounds 1/gamma_T (l-infinity neighborhoods) and 1/(gamma_T + nu_T) (l2
// neighborhoods) for sqrt(NT)(alpha_hat - alpha), and sigma_t^2 I_r for sqrt(N)(f_hat_t - f_t).

#include <vector>

#include <Eigen/Dense>

namespace panelqmle {

// Double-sum form: (1/T) sum_{t>=2} sigma_t^{-2} (sigma_{t-1}^2 + alpha^2 sigma_{t-2}^2 + ...
// + alpha^{2(t-2)} sigma_1^2). Requires |alpha| < 1 and positive variances.
double gamma_T_closed(double alpha, const Eigen::VectorXd& sigma2);

// Same quantity assembled from explicit T x T matrices.
double gamma_T_trace(double alpha, const Eigen::VectorXd& sigma2);

double nu_T(double alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec);

// atilde^2 (gamma + nu) + sum_s sigma_s^{-2} ftilde_s' ftilde_s, with ftilde as a T x r matrix.
double h_norm_sq(double atilde, const Eigen::MatrixXd& ftilde, double gamma, double nu,
                 const Eigen::VectorXd& sigma2);

struct EfficiencyReport {
  double gamma_T = 0.0;
  double nu_T = 0.0;
  double bound_alpha_ellinf = 0.0;  // 1 / gamma_T
  double bound_alpha_ell2 = 0.0;    // 1 / (gamma_T + nu_T)
  std::vector<double> factor_bounds;  // sigma_t^2
};

EfficiencyReport efficiency_report(double alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec);

// (1/T) F'L'D^{-1}F and (1/T) F'L'D^{-1}LF. For f_t = psi(t/T) these approach
// (1-alpha)^{-1} and (1-alpha)^{-2} times the integral of psi psi' / sigma^2.
struct LagTraces {
  Eigen::MatrixXd cross;
  Eigen::MatrixXd quad;
};

LagTraces lag_traces(double alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec);

// Integral over [0, 1] of psi(s)^2 / sigma2 for psi(s) = sum_k coeffs[k] s^k and constant sigma2.
double poly_square_integral(const std::vector<double>& coeffs, double sigma2);

// Limits of lag_traces for a single polynomial factor and constant variance.
double lag_trace_limit_cross(double alpha, const std::vector<double>& coeffs, double sigma2);
double lag_trace_limit_quad(double alpha, const std::vector<double>& coeffs, double sigma2);

}  // namespace panelqmle
