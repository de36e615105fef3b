#include "panelqmle/efficiency.hpp"

#include <cmath>
#include <string>

#include "panelqmle/errors.hpp"
#include "panelqmle/structural.hpp"

namespace panelqmle {

namespace {

void check_variances(const Eigen::VectorXd& sigma2, const char* who) {
  if (sigma2.size() < 2) throw InvalidInput(std::string(who) + ": need T >= 2");
  for (Eigen::Index t = 0; t < sigma2.size(); ++t) {
    if (!std::isfinite(sigma2(t)) || sigma2(t) <= 0.0) {
      throw InvalidInput(std::string(who) + ": variance at t=" + std::to_string(t + 1) + " is not positive");
    }
  }
}

}  // namespace

double gamma_T_closed(double alpha, const Eigen::VectorXd& sigma2) {
  if (!(std::abs(alpha) < 1.0)) throw InvalidInput("gamma_T_closed: requires |alpha| < 1");
  check_variances(sigma2, "gamma_T_closed");
  const Eigen::Index T = sigma2.size();
  const double a2 = alpha * alpha;
  // lagged(t) = sigma_{t-1}^2 + alpha^2 sigma_{t-2}^2 + ... accumulated recursively
  double lagged = 0.0;
  double sum = 0.0;
  for (Eigen::Index t = 1; t < T; ++t) {
    lagged = sigma2(t - 1) + a2 * lagged;
    sum += lagged / sigma2(t);
  }
  return sum / static_cast<double>(T);
}

double gamma_T_trace(double alpha, const Eigen::VectorXd& sigma2) {
  check_variances(sigma2, "gamma_T_trace");
  const int T = static_cast<int>(sigma2.size());
  const StructuralSet s = build_structural(alpha, T);
  const Eigen::MatrixXd LDLt = s.L * sigma2.asDiagonal() * s.L.transpose();
  return (LDLt * sigma2.cwiseInverse().asDiagonal()).trace() / T;
}

double nu_T(double alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec) {
  const Eigen::MatrixXd LF = apply_L(alpha, F);
  const Eigen::MatrixXd MLF = apply_projection_M(F, Dvec, LF);
  const double value = (LF.array() * MLF.array()).sum() / static_cast<double>(Dvec.size());
  // M is PSD; clip rounding below zero.
  return value < 0.0 ? 0.0 : value;
}

double h_norm_sq(double atilde, const Eigen::MatrixXd& ftilde, double gamma, double nu,
                 const Eigen::VectorXd& sigma2) {
  if (ftilde.rows() != sigma2.size()) throw InvalidInput("h_norm_sq: ftilde rows must match the variance vector");
  double sum = atilde * atilde * (gamma + nu);
  for (Eigen::Index t = 0; t < ftilde.rows(); ++t) sum += ftilde.row(t).squaredNorm() / sigma2(t);
  return sum;
}

EfficiencyReport efficiency_report(double alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec) {
  EfficiencyReport rep;
  rep.gamma_T = gamma_T_closed(alpha, Dvec);
  rep.nu_T = F.cols() > 0 ? nu_T(alpha, F, Dvec) : 0.0;
  rep.bound_alpha_ellinf = 1.0 / rep.gamma_T;
  rep.bound_alpha_ell2 = 1.0 / (rep.gamma_T + rep.nu_T);
  rep.factor_bounds.assign(Dvec.data(), Dvec.data() + Dvec.size());
  return rep;
}

LagTraces lag_traces(double alpha, const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec) {
  if (F.rows() != Dvec.size()) throw InvalidInput("lag_traces: F rows must match D");
  const double T = static_cast<double>(Dvec.size());
  const Eigen::MatrixXd LF = apply_L(alpha, F);
  const Eigen::MatrixXd DinvF = Dvec.cwiseInverse().asDiagonal() * F;
  const Eigen::MatrixXd DinvLF = Dvec.cwiseInverse().asDiagonal() * LF;
  return {LF.transpose() * DinvF / T, LF.transpose() * DinvLF / T};
}

double poly_square_integral(const std::vector<double>& coeffs, double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidInput("poly_square_integral: sigma2 must be positive");
  // int_0^1 s^(j+k) ds = 1 / (j + k + 1)
  double sum = 0.0;
  for (std::size_t j = 0; j < coeffs.size(); ++j)
    for (std::size_t k = 0; k < coeffs.size(); ++k)
      sum += coeffs[j] * coeffs[k] / static_cast<double>(j + k + 1);
  return sum / sigma2;
}

double lag_trace_limit_cross(double alpha, const std::vector<double>& coeffs, double sigma2) {
  if (!(std::abs(alpha) < 1.0)) throw InvalidInput("lag_trace_limit_cross: requires |alpha| < 1");
  return poly_square_integral(coeffs, sigma2) / (1.0 - alpha);
}

double lag_trace_limit_quad(double alpha, const std::vector<double>& coeffs, double sigma2) {
  if (!(std::abs(alpha) < 1.0)) throw InvalidInput("lag_trace_limit_quad: requires |alpha| < 1");
  return poly_square_integral(coeffs, sigma2) / ((1.0 - alpha) * (1.0 - alpha));
}

}  // namespace panelqmle
