#include "panelqmle/structural.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "panelqmle/errors.hpp"

namespace panelqmle {

namespace {

void check_dimensions(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec) {
  if (Dvec.size() == 0) throw InvalidInput("covariance: empty variance vector");
  if (F.rows() != Dvec.size()) {
    throw InvalidInput("covariance: F has " + std::to_string(F.rows()) + " rows but D has " +
                       std::to_string(Dvec.size()) + " entries");
  }
  if (!F.allFinite()) throw InvalidInput("covariance: F has non-finite entries");
  for (Eigen::Index t = 0; t < Dvec.size(); ++t) {
    if (!std::isfinite(Dvec(t)) || Dvec(t) < kVarianceFloor * (1.0 - 1e-12)) {
      std::ostringstream msg;
      msg << "covariance: variance at t=" << t + 1 << " is " << Dvec(t) << ", below the floor 1e-8";
      throw InvalidInput(msg.str());
    }
  }
}

// Gram matrix F'D^{-1}F, symmetric by construction.
Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dinv) {
  Eigen::MatrixXd G = F.transpose() * Dinv.asDiagonal() * F;
  return 0.5 * (G + G.transpose());
}

}  // namespace

StructuralSet build_structural(double alpha, int T) {
  if (T < 2) throw InvalidInput("build_structural: T must be at least 2, got " + std::to_string(T));
  if (!std::isfinite(alpha)) throw InvalidInput("build_structural: alpha must be finite");

  StructuralSet s;
  s.alpha = alpha;
  s.T = T;
  s.B = Eigen::MatrixXd::Identity(T, T);
  s.J = Eigen::MatrixXd::Zero(T, T);
  s.L = Eigen::MatrixXd::Zero(T, T);
  for (int t = 1; t < T; ++t) {
    s.B(t, t - 1) = -alpha;
    s.J(t, t - 1) = 1.0;
  }
  for (int s_col = 0; s_col < T; ++s_col) {
    double p = 1.0;
    for (int t = s_col + 1; t < T; ++t) {
      s.L(t, s_col) = p;
      p *= alpha;
    }
  }
  return s;
}

Eigen::MatrixXd apply_B(double alpha, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out = X;
  const Eigen::Index T = X.rows();
  for (Eigen::Index t = T - 1; t >= 1; --t) out.row(t) -= alpha * X.row(t - 1);
  return out;
}

Eigen::MatrixXd apply_J(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(X.rows(), X.cols());
  if (X.rows() > 1) out.bottomRows(X.rows() - 1) = X.topRows(X.rows() - 1);
  return out;
}

Eigen::MatrixXd apply_L(double alpha, const Eigen::MatrixXd& X) {
  // (LX)_t = alpha (LX)_{t-1} + X_{t-1}
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(X.rows(), X.cols());
  for (Eigen::Index t = 1; t < X.rows(); ++t) out.row(t) = alpha * out.row(t - 1) + X.row(t - 1);
  return out;
}

CovarianceFactorization factorize_covariance(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec) {
  check_dimensions(F, Dvec);
  [[maybe_unused]] const Eigen::Index T = Dvec.size();
  const Eigen::Index r = F.cols();

  CovarianceFactorization cf;
  cf.F = F;
  cf.Dvec = Dvec;
  const Eigen::VectorXd Dinv = Dvec.cwiseInverse();
  const double logdet_D = Dvec.array().log().sum();

  if (r == 0) {
    cf.logdet = logdet_D;
    cf.inv = Dinv.asDiagonal();
    cf.small_core.resize(0, 0);
    return cf;
  }

  Eigen::MatrixXd core = Eigen::MatrixXd::Identity(r, r) + weighted_gram(F, Dinv);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(core, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  cf.core_condition = hi / lo;
  if (!(lo > 0.0) || !std::isfinite(cf.core_condition) || cf.core_condition > kCoreConditionLimit) {
    throw NumericDegeneracy("factorize_covariance: I_r + F'D^{-1}F is ill-conditioned (condition " +
                            std::to_string(cf.core_condition) + ")");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(core);
  cf.small_core = llt.solve(Eigen::MatrixXd::Identity(r, r));
  cf.small_core = 0.5 * (cf.small_core + cf.small_core.transpose());
  cf.logdet = logdet_D + 2.0 * llt.matrixLLT().diagonal().array().log().sum();

  const Eigen::MatrixXd DinvF = Dinv.asDiagonal() * F;
  cf.inv = -DinvF * cf.small_core * DinvF.transpose();
  cf.inv.diagonal() += Dinv;

#ifndef NDEBUG
  if (T <= 16) {
    Eigen::MatrixXd sigma = F * F.transpose();
    sigma.diagonal() += Dvec;
    const Eigen::MatrixXd dense = sigma.llt().solve(Eigen::MatrixXd::Identity(T, T));
    const double rel = (dense - cf.inv).norm() / dense.norm();
    if (rel > 1e-8) throw std::logic_error("factorize_covariance: Woodbury inverse disagrees with dense inverse");
  }
#endif
  return cf;
}

Eigen::MatrixXd apply_projection_M(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec,
                                   const Eigen::MatrixXd& X) {
  check_dimensions(F, Dvec);
  if (X.rows() != Dvec.size()) throw InvalidInput("apply_projection_M: row mismatch");
  const Eigen::VectorXd Dinv = Dvec.cwiseInverse();
  const Eigen::MatrixXd gram = weighted_gram(F, Dinv);
  if (F.cols() == 0) throw NumericDegeneracy("projection_M: F has no columns");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  if (!(hi > 0.0) || lo <= 1e-12 * hi) {
    throw NumericDegeneracy("projection_M: F'D^{-1}F is singular (factors are rank deficient)");
  }
  const Eigen::MatrixXd DinvX = Dinv.asDiagonal() * X;
  const Eigen::MatrixXd coef = gram.llt().solve(F.transpose() * DinvX);
  return DinvX - Dinv.asDiagonal() * (F * coef);
}

Eigen::MatrixXd projection_M(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec) {
  const Eigen::Index T = Dvec.size();
  Eigen::MatrixXd M = apply_projection_M(F, Dvec, Eigen::MatrixXd::Identity(T, T));
  return 0.5 * (M + M.transpose());
}

}  // namespace panelqmle
