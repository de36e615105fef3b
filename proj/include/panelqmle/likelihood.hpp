#pragma once

// Gaussian quasi log-likelihood of the system B y_i = delta + F lambda_i + eps_i, its
// concentrated form (delta profiled out), scores, and the rotation normalization of F.

#include <Eigen/Dense>

namespace panelqmle {

struct ModelParams {
  double alpha = 0.0;
  Eigen::VectorXd delta;  // time effects, length T
  Eigen::MatrixXd F;      // T x r, rows are f_t'
  Eigen::VectorXd Dvec;   // sigma_t^2, length T
  bool normalized = false;

  int T() const { return static_cast<int>(Dvec.size()); }
  int r() const { return static_cast<int>(F.cols()); }
};

// Outcomes y_it, one row per individual.
struct PanelData {
  Eigen::MatrixXd Y;  // N x T

  int N() const { return static_cast<int>(Y.rows()); }
  int T() const { return static_cast<int>(Y.cols()); }
};

// Cross-section mean and (1/N) sum_i (y_i - ybar)(y_i - ybar)'. The concentrated likelihood
// depends on the data only through these.
struct PanelMoments {
  int N = 0;
  int T = 0;
  Eigen::VectorXd ybar;
  Eigen::MatrixXd S;
};

PanelMoments compute_moments(const PanelData& data);

// B(alpha) S B(alpha)', symmetrized.
Eigen::MatrixXd transformed_covariance(double alpha, const Eigen::MatrixXd& S);

// Largest factor count for which FF' + D can be identified from a T x T covariance
// (Ledermann bound: (T - r)^2 >= T + r).
int max_identifiable_factors(int T);

// Input checks applied before estimation: finite outcomes, T >= 4, N > T (full-rank sample
// covariance), 1 <= r <= max_identifiable_factors(T). Throws InvalidInput.
void validate_for_estimation(const PanelData& data, int r);

// -(N/2) log|FF'+D| - 1/2 sum_i (B y_i - delta)'(FF'+D)^{-1}(B y_i - delta).
double loglik_full(const ModelParams& params, const PanelData& data);

// -(N/2) log|FF'+D| - 1/2 sum_i (y_i - ybar)'B'(FF'+D)^{-1}B(y_i - ybar). `delta` is ignored.
double loglik_concentrated(const ModelParams& params, const PanelData& data);
double loglik_concentrated(const ModelParams& params, const PanelMoments& moments);

// The delta maximizing loglik_full for given (alpha, F, D): B(alpha) ybar.
Eigen::VectorXd profiled_delta(double alpha, const PanelMoments& moments);

// Free-parameter vector layout used by the scores and the optimizer:
// [alpha, vec(F) (column-major), log sigma_1^2, ..., log sigma_T^2].
struct ParamLayout {
  int T = 0;
  int r = 0;

  int size() const { return 1 + T * r + T; }
  static constexpr int alpha() { return 0; }
  int factor(int t, int k) const { return 1 + k * T + t; }
  int log_variance(int t) const { return 1 + T * r + t; }
};

Eigen::VectorXd pack_params(const ModelParams& params);
// Rebuilds (alpha, F, D) from a packed vector; delta is left empty.
ModelParams unpack_params(const Eigen::VectorXd& x, int T, int r);

// Central finite differences of loglik_concentrated over the packed vector. step in [1e-7, 1e-4].
Eigen::VectorXd score_numeric(const ModelParams& params, const PanelMoments& moments, double step);
Eigen::VectorXd score_numeric(const ModelParams& params, const PanelData& data, double step);

// Closed-form gradient of loglik_concentrated over the packed vector.
Eigen::VectorXd score_analytic(const ModelParams& params, const PanelMoments& moments);
Eigen::VectorXd score_analytic(const ModelParams& params, const PanelData& data);

struct NormalizedFactors {
  Eigen::MatrixXd F;         // F * rotation
  Eigen::MatrixXd rotation;  // orthogonal r x r
};

// Rotates F so that F'D^{-1}F is diagonal with nonincreasing entries, then flips column signs
// so the first nonzero entry of each column is positive. Throws NumericDegeneracy when F is
// rank deficient in the D^{-1} metric.
NormalizedFactors normalize_F(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec);

}  // namespace panelqmle
