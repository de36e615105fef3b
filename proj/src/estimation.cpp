#include "panelqmle/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "panelqmle/efficiency.hpp"
#include "panelqmle/errors.hpp"

namespace panelqmle {

namespace {

double frob_dot(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) { return (A.array() * B.array()).sum(); }

// Exact maximizer of the concentrated likelihood in alpha for fixed Sigma: the quadratic form
// tr(P B S B') is quadratic in alpha and the log-determinant does not involve alpha.
double best_alpha(const Eigen::MatrixXd& P, const Eigen::MatrixXd& S, double current) {
  const Eigen::MatrixXd JS = apply_J(S);
  const Eigen::MatrixXd JSJt = apply_J(JS.transpose());
  const double lin = frob_dot(P, JS.transpose());
  const double quad = frob_dot(P, JSJt);
  if (!(quad > 0.0) || !std::isfinite(lin / quad)) return current;
  return lin / quad;
}

// One EM step for the factor model C ~ FF' + D.
void em_step(const Eigen::MatrixXd& C, Eigen::MatrixXd& F, Eigen::VectorXd& D, double floor) {
  const Eigen::Index r = F.cols();
  const CovarianceFactorization cf = factorize_covariance(F, D);
  const Eigen::MatrixXd beta = (cf.inv * F).transpose();  // r x T
  const Eigen::MatrixXd CBt = C * beta.transpose();       // T x r
  Eigen::MatrixXd Ezz = Eigen::MatrixXd::Identity(r, r) - beta * F + beta * CBt;
  Ezz = 0.5 * (Ezz + Ezz.transpose());
  const Eigen::MatrixXd F_new = Ezz.llt().solve(CBt.transpose()).transpose();
  Eigen::VectorXd D_new = C.diagonal() - (F_new.array() * CBt.array()).rowwise().sum().matrix();
  for (Eigen::Index t = 0; t < D_new.size(); ++t) D_new(t) = std::max(D_new(t), floor);
  F = F_new;
  D = D_new;
}

bool diverged(const ModelParams& p) {
  return !std::isfinite(p.alpha) || std::abs(p.alpha) > 1e6 || !p.F.allFinite() || p.F.cwiseAbs().maxCoeff() > 1e10;
}

}  // namespace

ModelParams init_params(const PanelMoments& moments, int r) {
  const int T = moments.T;
  if (T < 3) throw InvalidInput("init_params: need T >= 3 for the IV moment");
  if (r < 1 || r >= T) throw InvalidInput("init_params: r must lie in [1, T-1]");
  const Eigen::MatrixXd& S = moments.S;
  const double scale = S.diagonal().mean();
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw NumericDegeneracy("init_params: data have no cross-sectional variation");
  }

  // sum_i y~_i1 (dy~_i3 - alpha dy~_i2) = 0 on demeaned data, written in terms of S.
  double alpha = 0.0;
  const double num = S(0, 2) - S(0, 1);
  const double den = S(0, 1) - S(0, 0);
  if (std::abs(den) > 1e-10 * scale) {
    alpha = num / den;
  } else {
    double sxy = 0.0, sxx = 0.0;
    for (int t = 1; t < T; ++t) {
      sxy += S(t, t - 1);
      sxx += S(t - 1, t - 1);
    }
    if (!(sxx > 1e-14 * scale)) throw NumericDegeneracy("init_params: pooled least-squares denominator vanishes");
    alpha = sxy / sxx;
  }
  if (!std::isfinite(alpha)) alpha = 0.0;
  alpha = std::clamp(alpha, -0.99, 0.99);

  const Eigen::MatrixXd C = transformed_covariance(alpha, S);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  const Eigen::VectorXd& ev = eig.eigenvalues();  // ascending
  const double noise = std::max(ev.head(T - r).mean(), 0.0);
  const double c_scale = std::max(C.diagonal().mean(), 1e-300);

  ModelParams p;
  p.alpha = alpha;
  p.F.resize(T, r);
  for (int k = 0; k < r; ++k) {
    const double lead = ev(T - 1 - k);
    const double load = std::max({lead - noise, 1e-3 * std::max(lead, 0.0), 1e-6 * c_scale});
    p.F.col(k) = eig.eigenvectors().col(T - 1 - k) * std::sqrt(load);
  }
  p.Dvec.resize(T);
  for (int t = 0; t < T; ++t) {
    const double resid = C(t, t) - p.F.row(t).squaredNorm();
    p.Dvec(t) = std::max({resid, 0.05 * C(t, t), kVarianceFloor});
  }
  p.delta = profiled_delta(alpha, moments);
  if (!p.F.allFinite() || !p.Dvec.allFinite()) throw NumericDegeneracy("init_params: non-finite starting values");
  return p;
}

ModelParams init_params(const PanelData& data, int r) { return init_params(compute_moments(data), r); }

FitResult estimate_qmle(const PanelData& data, int r, const EstimationOptions& options) {
  validate_for_estimation(data, r);
  return estimate_qmle(compute_moments(data), r, options);
}

FitResult estimate_qmle(const PanelMoments& moments, int r, const EstimationOptions& options) {
  const int T = moments.T;
  const double N = moments.N;
  const double floor = std::max(options.variance_floor, kVarianceFloor);

  FitResult fit;
  fit.N = moments.N;
  fit.T = T;

  ModelParams cur = init_params(moments, r);
  double ll = loglik_concentrated(cur, moments);
  fit.loglik_init = ll;
  fit.loglik_trace.push_back(ll);

  // Stage 1: coordinate ascent.
  for (int cycle = 0; cycle < options.max_stage1_cycles; ++cycle) {
    ModelParams next = cur;
    try {
      const CovarianceFactorization cf = factorize_covariance(next.F, next.Dvec);
      next.alpha = best_alpha(cf.inv, moments.S, next.alpha);
      em_step(transformed_covariance(next.alpha, moments.S), next.F, next.Dvec, floor);
    } catch (const NumericDegeneracy&) {
      break;
    }
    if (diverged(next)) throw ConvergenceFailure("estimate_qmle: parameters diverged during coordinate ascent");
    double ll_next = 0.0;
    try {
      ll_next = loglik_concentrated(next, moments);
    } catch (const NumericDegeneracy&) {
      break;
    }
    if (ll_next < ll) break;  // flooring can cost a rounding-level decrease; stop there
    const double change = ll_next - ll;
    cur = next;
    ll = ll_next;
    fit.loglik_trace.push_back(ll);
    ++fit.stage1_cycles;
    if (change <= options.stage1_tol * std::max(1.0, std::abs(ll))) break;
  }

  // Stage 2: BFGS on f(x) = -l(x) / N.
  const ParamLayout lay{T, r};
  const int n = lay.size();
  const double log_floor = std::log(floor);
  auto objective = [&](const Eigen::VectorXd& x) -> double {
    try {
      const double v = -loglik_concentrated(unpack_params(x, T, r), moments) / N;
      return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  auto gradient = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return -score_analytic(unpack_params(x, T, r), moments) / N;
  };

  Eigen::VectorXd x = pack_params(cur);
  double f = -ll / N;
  Eigen::VectorXd g = gradient(x);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool fresh_H = true;
  double last_change = std::numeric_limits<double>::infinity();
  if (fit.loglik_trace.size() >= 2) {
    last_change = fit.loglik_trace.back() - fit.loglik_trace[fit.loglik_trace.size() - 2];
  }

  // Variances held at the floor whose gradient points further down are active bounds.
  auto at_bound = [&](const Eigen::VectorXd& xv, const Eigen::VectorXd& gv, int t) {
    const int j = lay.log_variance(t);
    return xv(j) <= log_floor + 1e-9 && gv(j) > 0.0;
  };
  auto projected_norm = [&](const Eigen::VectorXd& xv, const Eigen::VectorXd& gv) {
    Eigen::VectorXd pg = gv;
    for (int t = 0; t < T; ++t)
      if (at_bound(xv, gv, t)) pg(lay.log_variance(t)) = 0.0;
    return pg.cwiseAbs().maxCoeff() * N;
  };
  auto converged_now = [&](double loglik, double change, const Eigen::VectorXd& xv, const Eigen::VectorXd& gv) {
    return std::abs(change) <= options.rel_tol * std::max(1.0, std::abs(loglik)) &&
           projected_norm(xv, gv) < options.grad_tol * (1.0 + std::abs(loglik));
  };
  auto clamp_floor = [&](Eigen::VectorXd& xv) {
    for (int t = 0; t < T; ++t) xv(lay.log_variance(t)) = std::max(xv(lay.log_variance(t)), log_floor);
  };

  bool done = converged_now(-f * N, last_change, x, g);
  int it = 0;
  while (!done && it < options.max_iterations) {
    ++it;
    Eigen::VectorXd d = -H * g;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      H.setIdentity();
      fresh_H = true;
      d = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = f;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * d;
      clamp_floor(x_new);
      f_new = objective(x_new);
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!fresh_H) {
        H.setIdentity();
        fresh_H = true;
        continue;
      }
      done = projected_norm(x, g) < options.grad_tol * (1.0 + std::abs(f * N));
      break;
    }
    const Eigen::VectorXd g_new = gradient(x_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_H) H *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
      fresh_H = false;
    }
    const double change = (f - f_new) * N;
    x = x_new;
    f = f_new;
    g = g_new;
    fit.loglik_trace.push_back(-f * N);
    ModelParams probe = unpack_params(x, T, r);
    if (diverged(probe)) throw ConvergenceFailure("estimate_qmle: likelihood ascent diverged");
    done = converged_now(-f * N, change, x, g);
  }

  // Stage 3, only when BFGS stalls (typically a variance pinned at the floor): damped Newton
  // steps on the free coordinates with a finite-difference Hessian of the analytic gradient.
  for (int polish = 0; !done && polish < options.max_newton_iterations; ++polish) {
    ++it;
    std::vector<int> free;
    for (int j = 0; j < n; ++j) free.push_back(j);
    for (int t = 0; t < T; ++t)
      if (at_bound(x, g, t)) free.erase(std::find(free.begin(), free.end(), lay.log_variance(t)));
    const int m = static_cast<int>(free.size());
    Eigen::MatrixXd Hm(m, m);
    for (int a = 0; a < m; ++a) {
      const double h = 1e-6 * std::max(1.0, std::abs(x(free[a])));
      Eigen::VectorXd xp = x, xm = x;
      xp(free[a]) += h;
      xm(free[a]) -= h;
      const bool one_sided = free[a] >= lay.log_variance(0) && xm(free[a]) < log_floor;
      const Eigen::VectorXd dg =
          one_sided ? Eigen::VectorXd((gradient(xp) - g) / h) : Eigen::VectorXd((gradient(xp) - gradient(xm)) / (2.0 * h));
      for (int b = 0; b < m; ++b) Hm(b, a) = dg(free[b]);
    }
    Hm = 0.5 * (Hm + Hm.transpose());
    if (!Hm.allFinite()) break;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Hm);
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    const Eigen::VectorXd lam = eig.eigenvalues().cwiseAbs().cwiseMax(1e-12 * top + 1e-300);
    Eigen::VectorXd gm(m);
    for (int a = 0; a < m; ++a) gm(a) = g(free[a]);
    const Eigen::VectorXd dm = -(eig.eigenvectors() * (eig.eigenvectors().transpose() * gm).cwiseQuotient(lam));
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    for (int a = 0; a < m; ++a) d(free[a]) = dm(a);
    const double slope = gm.dot(dm);
    if (!(slope < 0.0)) break;
    // Affine-invariant test: the predicted Newton gain in loglik is below the change tolerance
    // at a point where the Hessian is positive definite.
    if (eig.eigenvalues().minCoeff() > 0.0 && -0.5 * slope * N <= options.rel_tol * std::max(1.0, std::abs(f * N))) {
      done = true;
      fit.warnings.push_back("converged on the Newton decrement; score norm " + std::to_string(projected_norm(x, g)));
      break;
    }
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = f;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * d;
      clamp_floor(x_new);
      f_new = objective(x_new);
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      done = projected_norm(x, g) < options.grad_tol * (1.0 + std::abs(f * N));
      break;
    }
    const double change = (f - f_new) * N;
    x = x_new;
    f = f_new;
    g = gradient(x);
    fit.loglik_trace.push_back(-f * N);
    if (diverged(unpack_params(x, T, r))) throw ConvergenceFailure("estimate_qmle: likelihood ascent diverged");
    done = converged_now(-f * N, change, x, g);
  }

  fit.iterations = it;
  fit.converged = done;
  ModelParams est = unpack_params(x, T, r);
  fit.loglik = -f * N;
  fit.grad_norm = projected_norm(x, g);

  const NormalizedFactors nf = normalize_F(est.F, est.Dvec);
  est.F = nf.F;
  est.normalized = true;
  est.delta = profiled_delta(est.alpha, moments);
  fit.params = est;

  if (std::abs(est.alpha) >= 1.0) {
    fit.warnings.push_back("alpha_hat=" + std::to_string(est.alpha) + " lies outside (-1, 1)");
  }
  if (!fit.converged) fit.warnings.push_back("optimizer stopped before meeting the convergence criteria");
  for (int t = 0; t < T; ++t) {
    if (est.Dvec(t) <= floor * (1.0 + 1e-6)) {
      fit.warnings.push_back("sigma2 at t=" + std::to_string(t + 1) + " sits at the variance floor (Heywood case)");
    }
  }
  fit.se_alpha = standard_error_alpha(fit);
  return fit;
}

double standard_error_alpha(const FitResult& fit) {
  const Eigen::VectorXd& D = fit.params.Dvec;
  // The double-sum form needs |alpha| < 1; the trace form is defined for any finite alpha.
  const double gamma =
      std::abs(fit.params.alpha) < 1.0 ? gamma_T_closed(fit.params.alpha, D) : gamma_T_trace(fit.params.alpha, D);
  return 1.0 / std::sqrt(static_cast<double>(fit.N) * fit.T * gamma);
}

Eigen::VectorXd estimate_factors_se(const FitResult& fit) {
  return (fit.params.Dvec / static_cast<double>(fit.N)).cwiseSqrt();
}

namespace {

// Rank-r principal components of W (N x T1): W ~ Lambda F' with F'F / T1 = I.
void principal_components(const Eigen::MatrixXd& W, int r, Eigen::MatrixXd& Lambda, Eigen::MatrixXd& F) {
  const Eigen::Index T1 = W.cols();
  Eigen::MatrixXd WtW = W.transpose() * W;
  WtW = 0.5 * (WtW + WtW.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(WtW);
  const Eigen::MatrixXd V = eig.eigenvectors().rightCols(r).rowwise().reverse();
  F = V * std::sqrt(static_cast<double>(T1));
  Lambda = W * V / std::sqrt(static_cast<double>(T1));
}

struct FeState {
  double alpha = 0.0;
  Eigen::VectorXd delta;  // length T-1, for t = 2..T
  Eigen::MatrixXd Lambda;
  Eigen::MatrixXd F;      // (T-1) x r
};

// Least squares for (alpha, delta) given the common component X (N x (T-1)).
void update_alpha_delta(const Eigen::MatrixXd& Ylag, const Eigen::MatrixXd& Ycur, const Eigen::MatrixXd& X,
                        FeState& st) {
  const Eigen::MatrixXd Z = Ycur - X;
  const Eigen::RowVectorXd zbar = Z.colwise().mean();
  const Eigen::RowVectorXd lbar = Ylag.colwise().mean();
  const Eigen::MatrixXd Zc = Z.rowwise() - zbar;
  const Eigen::MatrixXd Lc = Ylag.rowwise() - lbar;
  const double den = Lc.squaredNorm();
  if (!(den > 0.0)) throw NumericDegeneracy("estimate_fixed_effects: lagged outcomes have no within-period variation");
  st.alpha = (Lc.array() * Zc.array()).sum() / den;
  st.delta = (zbar - st.alpha * lbar).transpose();
}

// Profiled objective over alpha: residual eigenvalues of the period-demeaned Z'Z beyond the first r.
double fe_profiled_objective(const Eigen::MatrixXd& Cll, const Eigen::MatrixXd& Clc, const Eigen::MatrixXd& Ccc,
                             double alpha, int r) {
  Eigen::MatrixXd M = Ccc - alpha * (Clc + Clc.transpose()) + alpha * alpha * Cll;
  M = 0.5 * (M + M.transpose());
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M, Eigen::EigenvaluesOnly).eigenvalues();
  return ev.head(ev.size() - r).sum();
}

double fe_grid_start(const Eigen::MatrixXd& Ylag, const Eigen::MatrixXd& Ycur, int r) {
  const Eigen::MatrixXd Lc = Ylag.rowwise() - Ylag.colwise().mean();
  const Eigen::MatrixXd Cc = Ycur.rowwise() - Ycur.colwise().mean();
  const Eigen::MatrixXd Cll = Lc.transpose() * Lc;
  const Eigen::MatrixXd Clc = Lc.transpose() * Cc;
  const Eigen::MatrixXd Ccc = Cc.transpose() * Cc;
  double best_alpha = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int k = -100; k <= 150; ++k) {
    const double a = 0.01 * k;
    const double v = fe_profiled_objective(Cll, Clc, Ccc, a, r);
    if (v < best) {
      best = v;
      best_alpha = a;
    }
  }
  return best_alpha;
}

double fe_objective(const Eigen::MatrixXd& Ylag, const Eigen::MatrixXd& Ycur, const FeState& st) {
  const Eigen::MatrixXd E =
      (Ycur - st.alpha * Ylag).rowwise() - st.delta.transpose() - st.Lambda * st.F.transpose();
  return E.squaredNorm();
}

}  // namespace

FEFitResult estimate_fixed_effects(const PanelData& data, int r, const FixedEffectsOptions& options) {
  validate_for_estimation(data, r);
  const int N = data.N();
  const int T = data.T();
  const Eigen::MatrixXd Ylag = data.Y.leftCols(T - 1);
  const Eigen::MatrixXd Ycur = data.Y.rightCols(T - 1);

  FeState st;
  st.alpha = fe_grid_start(Ylag, Ycur, r);
  st.delta = (Ycur.colwise().mean() - st.alpha * Ylag.colwise().mean()).transpose();
  {
    const Eigen::MatrixXd W = (Ycur - st.alpha * Ylag).rowwise() - st.delta.transpose();
    principal_components(W, r, st.Lambda, st.F);
  }
  double obj = fe_objective(Ylag, Ycur, st);

  FEFitResult res;
  res.objective_trace.push_back(obj);
  int it = 0;
  bool converged = false;
  while (it < options.max_iterations) {
    ++it;
    update_alpha_delta(Ylag, Ycur, st.Lambda * st.F.transpose(), st);
    const Eigen::MatrixXd W = (Ycur - st.alpha * Ylag).rowwise() - st.delta.transpose();
    principal_components(W, r, st.Lambda, st.F);
    const double obj_new = fe_objective(Ylag, Ycur, st);
    if (obj_new > obj * (1.0 + 1e-10) + 1e-12) {
      throw ConvergenceFailure("estimate_fixed_effects: objective increased from " + std::to_string(obj) + " to " +
                               std::to_string(obj_new) + " at iteration " + std::to_string(it));
    }
    res.objective_trace.push_back(obj_new);
    const double change = obj - obj_new;
    obj = obj_new;
    if (change <= options.tol * std::max(obj, 1e-300) || obj <= 1e-24) {
      converged = true;
      break;
    }
  }

  res.alpha = st.alpha;
  res.Lambda = st.Lambda;
  res.F = Eigen::MatrixXd::Zero(T, r);
  res.F.bottomRows(T - 1) = st.F;
  res.delta = Eigen::VectorXd::Zero(T);
  res.delta.tail(T - 1) = st.delta;
  res.objective = obj;
  res.sigma2 = obj / (static_cast<double>(N) * (T - 1));
  res.iterations = it;
  res.converged = converged;
  return res;
}

}  // namespace panelqmle
