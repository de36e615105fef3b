#include "panelqmle/likelihood.hpp"

#include <cmath>
#include <string>

#include "panelqmle/errors.hpp"
#include "panelqmle/structural.hpp"

namespace panelqmle {

namespace {

void check_params(const ModelParams& params, int T) {
  if (params.Dvec.size() != T) {
    throw InvalidInput("model params: D has " + std::to_string(params.Dvec.size()) +
                       " entries but the panel has T=" + std::to_string(T));
  }
  if (params.F.rows() != T) throw InvalidInput("model params: F row count does not match T");
  if (!std::isfinite(params.alpha)) throw InvalidInput("model params: alpha is not finite");
}

}  // namespace

Eigen::MatrixXd transformed_covariance(double alpha, const Eigen::MatrixXd& S) {
  const Eigen::MatrixXd BS = apply_B(alpha, S);
  Eigen::MatrixXd C = apply_B(alpha, BS.transpose());
  return 0.5 * (C + C.transpose());
}

PanelMoments compute_moments(const PanelData& data) {
  if (data.N() < 1 || data.T() < 1) throw InvalidInput("panel: empty outcome array");
  PanelMoments m;
  m.N = data.N();
  m.T = data.T();
  m.ybar = data.Y.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.Y.rowwise() - m.ybar.transpose();
  m.S = (centered.transpose() * centered) / static_cast<double>(m.N);
  m.S = 0.5 * (m.S + m.S.transpose());
  return m;
}

int max_identifiable_factors(int T) {
  int r = 0;
  while ((T - (r + 1)) * (T - (r + 1)) >= T + (r + 1)) ++r;
  return r;
}

void validate_for_estimation(const PanelData& data, int r) {
  const int N = data.N();
  const int T = data.T();
  if (!data.Y.allFinite()) throw InvalidInput("panel: outcomes contain non-finite values");
  if (T < 4) throw InvalidInput("panel: T=" + std::to_string(T) + " is below the minimum panel length 4");
  if (N < 2) throw InvalidInput("panel: N=" + std::to_string(N) + " is below 2");
  if (N <= T) {
    throw InvalidInput("panel: N=" + std::to_string(N) + " must exceed T=" + std::to_string(T) +
                       " so the sample covariance has full rank");
  }
  if (r < 1) throw InvalidInput("r must be at least 1, got " + std::to_string(r));
  const int r_max = max_identifiable_factors(T);
  if (r > r_max) {
    throw InvalidInput("r=" + std::to_string(r) + " exceeds the identifiable maximum " +
                       std::to_string(r_max) + " for T=" + std::to_string(T));
  }
}

double loglik_full(const ModelParams& params, const PanelData& data) {
  check_params(params, data.T());
  if (params.delta.size() != data.T()) throw InvalidInput("loglik_full: delta length does not match T");
  const CovarianceFactorization cf = factorize_covariance(params.F, params.Dvec);
  // Residuals B y_i - delta as columns.
  const Eigen::MatrixXd R = apply_B(params.alpha, data.Y.transpose()).colwise() - params.delta;
  const double quad = (R.array() * (cf.inv * R).array()).sum();
  const double value = -0.5 * data.N() * cf.logdet - 0.5 * quad;
  if (!std::isfinite(value)) throw NumericDegeneracy("loglik_full: non-finite value");
  return value;
}

double loglik_concentrated(const ModelParams& params, const PanelMoments& moments) {
  check_params(params, moments.T);
  const CovarianceFactorization cf = factorize_covariance(params.F, params.Dvec);
  const Eigen::MatrixXd C = transformed_covariance(params.alpha, moments.S);
  const double trace = (cf.inv.array() * C.array()).sum();
  const double value = -0.5 * moments.N * (cf.logdet + trace);
  if (!std::isfinite(value)) throw NumericDegeneracy("loglik_concentrated: non-finite value");
  return value;
}

double loglik_concentrated(const ModelParams& params, const PanelData& data) {
  return loglik_concentrated(params, compute_moments(data));
}

Eigen::VectorXd profiled_delta(double alpha, const PanelMoments& moments) {
  return apply_B(alpha, moments.ybar);
}

Eigen::VectorXd pack_params(const ModelParams& params) {
  const ParamLayout lay{params.T(), params.r()};
  Eigen::VectorXd x(lay.size());
  x(ParamLayout::alpha()) = params.alpha;
  for (int k = 0; k < lay.r; ++k)
    for (int t = 0; t < lay.T; ++t) x(lay.factor(t, k)) = params.F(t, k);
  for (int t = 0; t < lay.T; ++t) x(lay.log_variance(t)) = std::log(params.Dvec(t));
  return x;
}

ModelParams unpack_params(const Eigen::VectorXd& x, int T, int r) {
  const ParamLayout lay{T, r};
  if (x.size() != lay.size()) throw InvalidInput("unpack_params: vector length does not match (T, r)");
  ModelParams p;
  p.alpha = x(ParamLayout::alpha());
  p.F.resize(T, r);
  p.Dvec.resize(T);
  for (int k = 0; k < r; ++k)
    for (int t = 0; t < T; ++t) p.F(t, k) = x(lay.factor(t, k));
  for (int t = 0; t < T; ++t) p.Dvec(t) = std::exp(x(lay.log_variance(t)));
  return p;
}

Eigen::VectorXd score_numeric(const ModelParams& params, const PanelMoments& moments, double step) {
  if (!(step >= 1e-7 && step <= 1e-4)) throw InvalidInput("score_numeric: step must lie in [1e-7, 1e-4]");
  check_params(params, moments.T);
  const int T = params.T();
  const int r = params.r();
  const Eigen::VectorXd x0 = pack_params(params);
  Eigen::VectorXd g(x0.size());
  for (Eigen::Index j = 0; j < x0.size(); ++j) {
    Eigen::VectorXd xp = x0, xm = x0;
    xp(j) += step;
    xm(j) -= step;
    const double fp = loglik_concentrated(unpack_params(xp, T, r), moments);
    const double fm = loglik_concentrated(unpack_params(xm, T, r), moments);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericDegeneracy("score_numeric: non-finite likelihood at a perturbed point");
    }
    g(j) = (fp - fm) / (2.0 * step);
  }
  return g;
}

Eigen::VectorXd score_numeric(const ModelParams& params, const PanelData& data, double step) {
  return score_numeric(params, compute_moments(data), step);
}

Eigen::VectorXd score_analytic(const ModelParams& params, const PanelMoments& moments) {
  check_params(params, moments.T);
  const int T = params.T();
  const int r = params.r();
  const double N = moments.N;
  const CovarianceFactorization cf = factorize_covariance(params.F, params.Dvec);
  const Eigen::MatrixXd& P = cf.inv;

  const Eigen::MatrixXd BS = apply_B(params.alpha, moments.S);  // B S
  const Eigen::MatrixXd C = transformed_covariance(params.alpha, moments.S);
  const Eigen::MatrixXd PC = P * C;
  const Eigen::MatrixXd Omega = P - PC * P;  // d(-2 l / N) / d Sigma

  const ParamLayout lay{T, r};
  Eigen::VectorXd g(lay.size());
  // d l / d alpha = N tr(P J S B'), with J S B' = J (B S)'.
  const Eigen::MatrixXd JSBt = apply_J(BS.transpose());
  g(ParamLayout::alpha()) = N * (P.array() * JSBt.transpose().array()).sum();

  const Eigen::MatrixXd gF = -N * (Omega * params.F);
  for (int k = 0; k < r; ++k)
    for (int t = 0; t < T; ++t) g(lay.factor(t, k)) = gF(t, k);
  for (int t = 0; t < T; ++t) g(lay.log_variance(t)) = -0.5 * N * Omega(t, t) * params.Dvec(t);
  return g;
}

Eigen::VectorXd score_analytic(const ModelParams& params, const PanelData& data) {
  return score_analytic(params, compute_moments(data));
}

NormalizedFactors normalize_F(const Eigen::MatrixXd& F, const Eigen::VectorXd& Dvec) {
  if (F.rows() != Dvec.size()) throw InvalidInput("normalize_F: F row count does not match D");
  if ((Dvec.array() <= 0.0).any()) throw InvalidInput("normalize_F: variances must be positive");
  const Eigen::Index r = F.cols();
  NormalizedFactors out;
  if (r == 0) {
    out.F = F;
    out.rotation.resize(0, 0);
    return out;
  }
  Eigen::MatrixXd gram = F.transpose() * Dvec.cwiseInverse().asDiagonal() * F;
  gram = 0.5 * (gram + gram.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd& ev = eig.eigenvalues();  // ascending
  if (!(ev(r - 1) > 0.0) || ev(0) <= 1e-12 * ev(r - 1)) {
    throw NumericDegeneracy("normalize_F: F is rank deficient in the D^{-1} metric");
  }
  out.rotation = eig.eigenvectors().rowwise().reverse();
  out.F = F * out.rotation;
  for (Eigen::Index k = 0; k < r; ++k) {
    for (Eigen::Index t = 0; t < out.F.rows(); ++t) {
      const double v = out.F(t, k);
      if (v == 0.0) continue;
      if (v < 0.0) {
        out.F.col(k) *= -1.0;
        out.rotation.col(k) *= -1.0;
      }
      break;
    }
  }
  return out;
}

}  // namespace panelqmle
