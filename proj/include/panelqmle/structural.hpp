#pragma once

// Structural matrices of the simultaneous-equations form B y_i = delta + F lambda_i + eps_i
// and the low-rank-plus-diagonal covariance algebra built on FF' + D.

#include <Eigen/Dense>

namespace panelqmle {

// Lower bound on idiosyncratic variances accepted by the covariance algebra.
inline constexpr double kVarianceFloor = 1e-8;
// Condition number of I_r + F'D^{-1}F above which a factorization is rejected.
inline constexpr double kCoreConditionLimit = 1e12;

struct StructuralSet {
  double alpha = 0.0;
  int T = 0;
  Eigen::MatrixXd B;  // unit diagonal, -alpha on the first subdiagonal
  Eigen::MatrixXd J;  // shift: ones on the first subdiagonal
  Eigen::MatrixXd L;  // L(t, s) = alpha^(t-s-1) for t > s; equals J B^{-1}
};

StructuralSet build_structural(double alpha, int T);

// Column-wise products with B, J and L in O(T) per column, without forming the matrices.
Eigen::MatrixXd apply_B(double alpha, const Eigen::MatrixXd& X);
Eigen::MatrixXd apply_J(const Eigen::MatrixXd& X);
Eigen::MatrixXd apply_L(double alpha, const Eigen::MatrixXd& X);

/// Woodbury representation of Sigma = FF' + D.
///
/// `inv` is assembled as D^{-1} - D^{-1}F (I_r + F'D^{-1}F)^{-1} F'D^{-1}, never by a dense
/// T x T inversion; `small_core` holds the r x r inverse in the middle.
struct CovarianceFactorization {
  Eigen::MatrixXd F;
  Eigen::VectorXd Dvec;
  double logdet = 0.0;
  Eigen::MatrixXd inv;
  Eigen::MatrixXd small_core;
  double core_condition = 1.0;

  int T() const { return static_cast<int>(Dvec.size()); }
  int r() const { return static_cast<int>(F.cols()); }
};

// Throws InvalidInput for variances below kVarianceFloor or non-finite entries, and
// NumericDegeneracy when I_r + F'D^{-1}F has condition number above kCoreConditionLimit.
CovarianceFactorization factorize_covariance(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec);

// M = D^{-1} - D^{-1}F (F'D^{-1}F)^{-1} F'D^{-1}, so that M F = 0 and M D M = M.
// Throws NumericDegeneracy when F'D^{-1}F is singular.
Eigen::MatrixXd projection_M(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec);

// M X computed through the r x r system only; O(T r cols).
Eigen::MatrixXd apply_projection_M(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec,
                                   const Eigen::MatrixXd& X);

}  // namespace panelqmle
