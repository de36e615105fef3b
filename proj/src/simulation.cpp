#include "panelqmle/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "panelqmle/efficiency.hpp"
#include "panelqmle/errors.hpp"
#include "panelqmle/estimation.hpp"
#include "panelqmle/parallel.hpp"

namespace panelqmle {

SeriesSpec SeriesSpec::constant_value(double v) {
  SeriesSpec s;
  s.kind = Kind::constant;
  s.value = v;
  return s;
}

SeriesSpec SeriesSpec::polynomial(std::vector<double> c) {
  SeriesSpec s;
  s.kind = Kind::poly;
  s.coeffs = std::move(c);
  return s;
}

Eigen::VectorXd SeriesSpec::evaluate(int T) const {
  if (T < 1) throw InvalidInput("series: T must be positive");
  Eigen::VectorXd out(T);
  for (int t = 1; t <= T; ++t) {
    const double s = static_cast<double>(t) / T;
    double v = 0.0;
    switch (kind) {
      case Kind::constant:
        v = value;
        break;
      case Kind::linear:
        v = intercept + slope * s;
        break;
      case Kind::poly: {
        double p = 1.0;
        for (double c : coeffs) {
          v += c * p;
          p *= s;
        }
        break;
      }
      case Kind::sine:
        v = offset + amplitude * std::sin(2.0 * M_PI * frequency * s + phase);
        break;
      case Kind::table:
        if (static_cast<int>(table.size()) != T) {
          throw InvalidInput("series: table has " + std::to_string(table.size()) + " values but T=" +
                             std::to_string(T));
        }
        v = table[t - 1];
        break;
    }
    out(t - 1) = v;
  }
  return out;
}

const char* kind_name(SeriesSpec::Kind kind) {
  switch (kind) {
    case SeriesSpec::Kind::constant: return "constant";
    case SeriesSpec::Kind::linear: return "linear";
    case SeriesSpec::Kind::poly: return "poly";
    case SeriesSpec::Kind::sine: return "sine";
    case SeriesSpec::Kind::table: return "table";
  }
  return "?";
}

const char* kind_name(ShockSpec::Kind kind) {
  switch (kind) {
    case ShockSpec::Kind::gaussian: return "gaussian";
    case ShockSpec::Kind::student_t: return "student_t";
    case ShockSpec::Kind::centered_chi2: return "centered_chi2";
  }
  return "?";
}

const char* kind_name(LoadingSpec::Kind kind) {
  switch (kind) {
    case LoadingSpec::Kind::gaussian: return "gaussian";
    case LoadingSpec::Kind::rademacher_scaled: return "rademacher_scaled";
  }
  return "?";
}

void DgpConfig::validate() const {
  if (N < 1) throw InvalidInput("config: N must be at least 1");
  if (T < 2) throw InvalidInput("config: T must be at least 2");
  if (r < 0) throw InvalidInput("config: r must be nonnegative");
  if (static_cast<int>(factors.size()) != r) {
    throw InvalidInput("config: r=" + std::to_string(r) + " but " + std::to_string(factors.size()) +
                       " factor series given");
  }
  if (!std::isfinite(alpha) || !(std::abs(alpha) < 1.0)) throw InvalidInput("config: alpha must satisfy |alpha| < 1");
  if (burn_in < 100) throw InvalidInput("config: burn_in must be at least 100");
  if (shocks.kind != ShockSpec::Kind::gaussian && !(shocks.df >= 5.0)) {
    throw InvalidInput("config: shock degrees of freedom must be at least 5");
  }
  if (!(loadings.scale > 0.0) || !std::isfinite(loadings.scale)) throw InvalidInput("config: loading scale must be positive");
  const Eigen::VectorXd s2 = sigma2.evaluate(T);
  for (int t = 0; t < T; ++t) {
    if (!std::isfinite(s2(t)) || !(s2(t) > 0.0)) {
      throw InvalidInput("config: sigma2 at t=" + std::to_string(t + 1) + " is not positive");
    }
  }
  if (!delta.evaluate(T).allFinite()) throw InvalidInput("config: delta series has non-finite values");
  for (int k = 0; k < r; ++k) {
    if (!factors[k].evaluate(T).allFinite()) {
      throw InvalidInput("config: factor series " + std::to_string(k + 1) + " has non-finite values");
    }
  }
}

namespace {

class ShockSampler {
 public:
  explicit ShockSampler(const ShockSpec& spec) : spec_(spec) {
    if (spec.kind == ShockSpec::Kind::student_t) {
      student_ = std::student_t_distribution<double>(spec.df);
      scale_ = std::sqrt((spec.df - 2.0) / spec.df);
    } else if (spec.kind == ShockSpec::Kind::centered_chi2) {
      chi_ = std::chi_squared_distribution<double>(spec.df);
      scale_ = 1.0 / std::sqrt(2.0 * spec.df);
    }
  }

  double operator()(Rng& rng) {
    switch (spec_.kind) {
      case ShockSpec::Kind::gaussian: return normal_(rng);
      case ShockSpec::Kind::student_t: return student_(rng) * scale_;
      case ShockSpec::Kind::centered_chi2: return (chi_(rng) - spec_.df) * scale_;
    }
    return 0.0;
  }

 private:
  ShockSpec spec_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::student_t_distribution<double> student_{5.0};
  std::chi_squared_distribution<double> chi_{5.0};
  double scale_ = 1.0;
};

Eigen::MatrixXd draw_loadings(const DgpConfig& config, Rng& rng) {
  Eigen::MatrixXd lambda(config.N, config.r);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int i = 0; i < config.N; ++i) {
    for (int k = 0; k < config.r; ++k) {
      const double z = config.loadings.kind == LoadingSpec::Kind::gaussian ? normal(rng) : (coin(rng) ? 1.0 : -1.0);
      lambda(i, k) = config.loadings.scale * z;
    }
  }
  if (config.loadings.kind == LoadingSpec::Kind::rademacher_scaled) {
    // Signs standardized so each column has centered sample variance scale^2.
    for (int k = 0; k < config.r; ++k) {
      const double m = lambda.col(k).mean();
      const double v = (lambda.col(k).array() - m).square().mean();
      if (v > 0.0) lambda.col(k) = ((lambda.col(k).array() - m) * (config.loadings.scale / std::sqrt(v))).matrix();
    }
  }
  return lambda;
}

ModelParams nominal_params(const DgpConfig& config) {
  ModelParams p;
  p.alpha = config.alpha;
  p.delta = config.delta.evaluate(config.T);
  p.Dvec = config.sigma2.evaluate(config.T);
  p.F.resize(config.T, config.r);
  for (int k = 0; k < config.r; ++k) p.F.col(k) = config.factors[k].evaluate(config.T);
  return p;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                   : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

double draw_standardized_shock(const ShockSpec& spec, Rng& rng) {
  ShockSampler sampler(spec);
  return sampler(rng);
}

ModelParams stationary_truth(const DgpConfig& config) {
  config.validate();
  ModelParams p = nominal_params(config);
  const double a = config.alpha;
  const int steps = config.burn_in + 1;
  const double g1 = a == 0.0 ? 1.0 : (1.0 - std::pow(a, steps)) / (1.0 - a);
  const double v1 = a == 0.0 ? 1.0 : (1.0 - std::pow(a * a, steps)) / (1.0 - a * a);
  p.delta(0) *= g1;
  p.F.row(0) *= g1;
  p.Dvec(0) *= v1;
  return p;
}

SimulatedPanel simulate_replication(const DgpConfig& config, std::uint64_t k) {
  const ModelParams theta0 = stationary_truth(config);
  const ModelParams nominal = nominal_params(config);
  const int N = config.N, T = config.T;
  const double a = config.alpha;

  SimulatedPanel out;
  out.truth.stream_seed = derive_stream_seed(config.seed, k);
  Rng rng(out.truth.stream_seed);
  ShockSampler shock(config.shocks);
  out.truth.lambda = draw_loadings(config, rng);
  out.truth.eps.resize(N, T);
  out.data.Y.resize(N, T);

  const Eigen::VectorXd sd = nominal.Dvec.cwiseSqrt();
  for (int i = 0; i < N; ++i) {
    const Eigen::VectorXd common = nominal.F * out.truth.lambda.row(i).transpose();
    // Pre-sample t = -burn_in+1, ..., 1 with parameters frozen at t = 1, starting from y = 0.
    double y = 0.0;
    double composite = 0.0;
    for (int s = 0; s <= config.burn_in; ++s) {
      const double e = sd(0) * shock(rng);
      y = a * y + nominal.delta(0) + common(0) + e;
      composite = a * composite + e;
    }
    out.data.Y(i, 0) = y;
    out.truth.eps(i, 0) = composite;
    for (int t = 1; t < T; ++t) {
      const double e = sd(t) * shock(rng);
      y = a * y + nominal.delta(t) + common(t) + e;
      out.data.Y(i, t) = y;
      out.truth.eps(i, t) = e;
    }
  }
  out.truth.theta0 = theta0;
  out.truth.nominal = nominal;
  return out;
}

SimulatedPanel simulate_panel(const DgpConfig& config) { return simulate_replication(config, 0); }

TruthRecord simulate_truth(const DgpConfig& config, std::uint64_t k) {
  TruthRecord truth;
  truth.theta0 = stationary_truth(config);
  truth.nominal = nominal_params(config);
  truth.stream_seed = derive_stream_seed(config.seed, k);
  Rng rng(truth.stream_seed);
  ShockSampler shock(config.shocks);
  truth.lambda = draw_loadings(config, rng);
  const int N = config.N, T = config.T;
  const double a = config.alpha;
  const Eigen::VectorXd sd = truth.nominal.Dvec.cwiseSqrt();
  const double sd1 = std::sqrt(truth.theta0.Dvec(0));
  truth.eps.resize(N, T);
  for (int i = 0; i < N; ++i) {
    if (config.shocks.kind == ShockSpec::Kind::gaussian) {
      truth.eps(i, 0) = sd1 * shock(rng);
    } else {
      double composite = 0.0;
      for (int s = 0; s <= config.burn_in; ++s) composite = a * composite + sd(0) * shock(rng);
      truth.eps(i, 0) = composite;
    }
    for (int t = 1; t < T; ++t) truth.eps(i, t) = sd(t) * shock(rng);
  }
  return truth;
}

Eigen::MatrixXd effective_factors(const TruthRecord& truth) {
  const Eigen::Index r = truth.lambda.cols();
  if (r == 0) return truth.theta0.F;
  const Eigen::MatrixXd centered = truth.lambda.rowwise() - truth.lambda.colwise().mean();
  Eigen::MatrixXd psi = centered.transpose() * centered / static_cast<double>(truth.lambda.rows());
  psi = 0.5 * (psi + psi.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(psi);
  return truth.theta0.F * eig.operatorSqrt();
}

std::string regime_label(int N, int T) {
  const double ratio = static_cast<double>(N) / (static_cast<double>(T) * T * T);
  return ratio > 1.0 ? "outside asymptotic regime" : "within asymptotic regime";
}

namespace {

// N ||f_hat_t - f_t||^2 / r after normalizing the truth the same way and aligning column signs.
Eigen::VectorXd factor_errors(const Eigen::MatrixXd& F_hat, const TruthRecord& truth, int N) {
  const Eigen::Index r = F_hat.cols();
  Eigen::MatrixXd F_true = effective_factors(truth);
  if (r > 1) F_true = normalize_F(F_true, truth.theta0.Dvec).F;
  Eigen::MatrixXd aligned = F_hat;
  for (Eigen::Index k = 0; k < r; ++k) {
    if (aligned.col(k).dot(F_true.col(k)) < 0.0) aligned.col(k) *= -1.0;
  }
  return (aligned - F_true).rowwise().squaredNorm() * (static_cast<double>(N) / static_cast<double>(r));
}

ReplicationResult run_replication(const DgpConfig& config, std::uint64_t k, EstimatorChoice estimator) {
  ReplicationResult row;
  row.replication = k;
  try {
    const SimulatedPanel sim = simulate_replication(config, k);
    if (estimator == EstimatorChoice::qmle) {
      const FitResult fit = estimate_qmle(sim.data, config.r);
      row.alpha_hat = fit.params.alpha;
      row.se = fit.se_alpha;
      row.loglik = fit.loglik;
      row.iterations = fit.iterations;
      row.ok = fit.converged;
      if (!fit.converged) row.error = "not converged";
      row.factor_sq_error = factor_errors(fit.params.F, sim.truth, config.N);
    } else {
      const FEFitResult fe = estimate_fixed_effects(sim.data, config.r);
      row.alpha_hat = fe.alpha;
      const Eigen::VectorXd s2 = Eigen::VectorXd::Constant(config.T, fe.sigma2);
      const double gamma = std::abs(fe.alpha) < 1.0 ? gamma_T_closed(fe.alpha, s2) : gamma_T_trace(fe.alpha, s2);
      row.se = 1.0 / std::sqrt(static_cast<double>(config.N) * config.T * gamma);
      row.loglik = -fe.objective;
      row.iterations = fe.iterations;
      row.ok = fe.converged;
      if (!fe.converged) row.error = "not converged";
    }
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

}  // namespace

MonteCarloSummary mc_estimation(const DgpConfig& config, int reps, EstimatorChoice estimator, int jobs) {
  if (reps < 50) throw InvalidInput("mc_estimation: reps must be at least 50");
  config.validate();
  if (config.r < 1) throw InvalidInput("mc_estimation: estimation needs r >= 1");

  MonteCarloSummary sum;
  sum.reps = reps;
  sum.N = config.N;
  sum.T = config.T;
  sum.alpha = config.alpha;
  sum.regime = regime_label(config.N, config.T);
  sum.rows.resize(reps);
  parallel_for(static_cast<std::size_t>(reps), jobs,
               [&](std::size_t k) { sum.rows[k] = run_replication(config, k, estimator); });

  const ModelParams theta0 = stationary_truth(config);
  sum.sigma2_true.assign(theta0.Dvec.data(), theta0.Dvec.data() + theta0.Dvec.size());
  sum.gamma_T = gamma_T_closed(config.alpha, theta0.Dvec);
  sum.bound = 1.0 / sum.gamma_T;

  int covered = 0;
  Eigen::VectorXd fsum = Eigen::VectorXd::Zero(config.T);
  int fcount = 0;
  double sq = 0.0;
  for (const ReplicationResult& row : sum.rows) {
    if (!row.ok) {
      ++sum.failures;
      continue;
    }
    sum.alpha_hats.push_back(row.alpha_hat);
    const double err = row.alpha_hat - config.alpha;
    sq += err * err;
    if (std::abs(err) <= 1.96 * row.se) ++covered;
    if (row.factor_sq_error.size() == config.T) {
      fsum += row.factor_sq_error;
      ++fcount;
    }
  }
  const double n_ok = static_cast<double>(sum.alpha_hats.size());
  const double NT = static_cast<double>(config.N) * config.T;
  sum.bias = mean_of(sum.alpha_hats) - config.alpha;
  const double var = sample_variance(sum.alpha_hats);
  sum.mc_se = std::sqrt(var / n_ok);
  sum.variance_scaled = NT * var;
  sum.mse_scaled = NT * sq / n_ok;
  sum.coverage_95 = n_ok > 0 ? covered / n_ok : 0.0;
  if (fcount > 0) {
    fsum /= static_cast<double>(fcount);
    sum.factor_var_scaled.assign(fsum.data(), fsum.data() + fsum.size());
  }
  sum.valid = sum.failures <= 0.1 * reps;
  return sum;
}

FeComparison compare_fe_qmle(const DgpConfig& config, int reps, const std::vector<int>& T_grid, int jobs) {
  if (reps < 50) throw InvalidInput("compare_fe_qmle: reps must be at least 50");
  config.validate();
  if (config.r < 1) throw InvalidInput("compare_fe_qmle: estimation needs r >= 1");
  const std::vector<int> grid = T_grid.empty() ? std::vector<int>{config.T} : T_grid;

  FeComparison out;
  for (int T : grid) {
    DgpConfig cfg = config;
    cfg.T = T;
    cfg.validate();
    const Eigen::VectorXd s2 = cfg.sigma2.evaluate(T);
    if ((s2.array() - s2(0)).abs().maxCoeff() > 1e-12 * s2(0)) {
      throw InvalidInput("compare_fe_qmle: the fixed-effects comparator needs constant sigma2");
    }
    std::vector<ReplicationResult> q(reps), f(reps);
    parallel_for(static_cast<std::size_t>(reps), jobs, [&](std::size_t k) {
      q[k] = run_replication(cfg, k, EstimatorChoice::qmle);
      f[k] = run_replication(cfg, k, EstimatorChoice::fixed_effects);
    });
    FeComparisonRow row;
    row.T = T;
    std::vector<double> ok_q, ok_f;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int k = 0; k < reps; ++k) {
      row.alpha_qmle.push_back(q[k].ok ? q[k].alpha_hat : nan);
      row.alpha_fe.push_back(f[k].ok ? f[k].alpha_hat : nan);
      if (q[k].ok) ok_q.push_back(q[k].alpha_hat); else ++row.failures_qmle;
      if (f[k].ok) ok_f.push_back(f[k].alpha_hat); else ++row.failures_fe;
    }
    row.bias_qmle = mean_of(ok_q) - cfg.alpha;
    row.bias_fe = mean_of(ok_f) - cfg.alpha;
    row.mc_se_qmle = std::sqrt(sample_variance(ok_q) / ok_q.size());
    row.mc_se_fe = std::sqrt(sample_variance(ok_f) / ok_f.size());
    row.bias_ratio = row.bias_qmle == 0.0 ? std::numeric_limits<double>::infinity()
                                          : std::abs(row.bias_fe) / std::abs(row.bias_qmle);
    if (row.failures_qmle > 0.1 * reps || row.failures_fe > 0.1 * reps) out.valid = false;
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace panelqmle
