#pragma once

// Data generation from y_it = alpha y_{i,t-1} + delta_t + lambda_i'f_t + eps_it and Monte Carlo
// experiments for the QMLE and the fixed-effects comparator.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panelqmle/likelihood.hpp"
#include "panelqmle/rng.hpp"

namespace panelqmle {

// A deterministic sequence indexed by t = 1..T through s = t/T.
struct SeriesSpec {
  enum class Kind { constant, linear, poly, sine, table };
  Kind kind = Kind::constant;
  double value = 0.0;                // constant
  double intercept = 0.0, slope = 0.0;  // linear: intercept + slope * s
  std::vector<double> coeffs;        // poly: sum_k coeffs[k] s^k
  double offset = 0.0, amplitude = 1.0, frequency = 1.0, phase = 0.0;  // sine
  std::vector<double> table;         // explicit values for t = 1..T

  static SeriesSpec constant_value(double v);
  static SeriesSpec polynomial(std::vector<double> c);
  Eigen::VectorXd evaluate(int T) const;
};

const char* kind_name(SeriesSpec::Kind kind);

struct ShockSpec {
  enum class Kind { gaussian, student_t, centered_chi2 };
  Kind kind = Kind::gaussian;
  double df = 0.0;
};

const char* kind_name(ShockSpec::Kind kind);

struct LoadingSpec {
  // rademacher_scaled: random signs, centered and rescaled so each column has sample variance scale^2.
  enum class Kind { gaussian, rademacher_scaled };
  Kind kind = Kind::gaussian;
  double scale = 1.0;
};

const char* kind_name(LoadingSpec::Kind kind);

struct DgpConfig {
  int N = 0;
  int T = 0;
  int r = 0;
  double alpha = 0.0;
  SeriesSpec delta;                 // default: zero
  std::vector<SeriesSpec> factors;  // one per factor column
  SeriesSpec sigma2 = SeriesSpec::constant_value(1.0);
  ShockSpec shocks;
  LoadingSpec loadings;
  int burn_in = 200;
  std::uint64_t seed = 0;

  // Throws InvalidInput: N >= 1, T >= 2, r = factors.size(), |alpha| < 1, burn_in >= 100,
  // df >= 5 for non-Gaussian shocks, positive finite variances, finite series values.
  void validate() const;
};

// Everything the expansion diagnostics need and real data never provide. Column 0 of eps and
// row 0 of theta0 hold the first-observation projection objects: after the frozen pre-sample,
// y_i1 = delta_1* + lambda_i'f_1* + eps_i1* exactly.
struct TruthRecord {
  Eigen::MatrixXd lambda;  // N x r
  Eigen::MatrixXd eps;     // N x T
  ModelParams theta0;      // (alpha, delta*, F*, D*)
  ModelParams nominal;     // the configured series without the first-observation adjustment
  std::uint64_t stream_seed = 0;
};

struct SimulatedPanel {
  PanelData data;
  TruthRecord truth;
};

// Projection parameters (delta*, F*, D*) implied by the configured series and the burn-in.
ModelParams stationary_truth(const DgpConfig& config);

// Replication k draws from the stream derive_stream_seed(config.seed, k).
SimulatedPanel simulate_replication(const DgpConfig& config, std::uint64_t k);
// Same as replication 0.
SimulatedPanel simulate_panel(const DgpConfig& config);

// Loadings and shocks only, with eps_i1* drawn from its exact law (a single scaled draw for
// Gaussian shocks, the burn-in sum otherwise). Used where outcomes are not needed.
TruthRecord simulate_truth(const DgpConfig& config, std::uint64_t k);

// Standardized shock with unit variance.
double draw_standardized_shock(const ShockSpec& spec, Rng& rng);

// F* Psi_N^{1/2} with Psi_N the centered sample covariance of the loadings: the factor matrix
// that FF' + D actually describes for this cross-section.
Eigen::MatrixXd effective_factors(const TruthRecord& truth);

// "outside asymptotic regime" when N / T^3 > 1.
std::string regime_label(int N, int T);

enum class EstimatorChoice { qmle, fixed_effects };

struct ReplicationResult {
  std::uint64_t replication = 0;
  bool ok = false;  // converged without error
  double alpha_hat = 0.0;
  double se = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  std::string error;
  Eigen::VectorXd factor_sq_error;  // N * ||f_hat_t - f_t||^2 / r, aligned
};

struct MonteCarloSummary {
  int reps = 0;
  int N = 0;
  int T = 0;
  double alpha = 0.0;
  std::vector<ReplicationResult> rows;  // indexed by replication
  std::vector<double> alpha_hats;       // successful replications only
  double bias = 0.0;
  double mc_se = 0.0;                   // sd(alpha_hat) / sqrt(successes)
  double variance_scaled = 0.0;         // N T var(alpha_hat)
  double mse_scaled = 0.0;              // N T mean (alpha_hat - alpha)^2
  double coverage_95 = 0.0;
  double gamma_T = 0.0;                 // at the true (alpha, D*)
  double bound = 0.0;                   // 1 / gamma_T
  std::vector<double> factor_var_scaled;  // per t, qmle only
  std::vector<double> sigma2_true;        // D*
  int failures = 0;
  bool valid = true;  // false when failures exceed 10% of reps
  std::string regime;
};

// Parallel simulate -> estimate loop; reps >= 50. Results depend only on (config, reps).
MonteCarloSummary mc_estimation(const DgpConfig& config, int reps, EstimatorChoice estimator, int jobs);

struct FeComparisonRow {
  int T = 0;
  double bias_qmle = 0.0;
  double bias_fe = 0.0;
  double mc_se_qmle = 0.0;
  double mc_se_fe = 0.0;
  double bias_ratio = 0.0;  // |bias_fe| / |bias_qmle|
  int failures_qmle = 0;
  int failures_fe = 0;
  std::vector<double> alpha_qmle;  // paired by replication; NaN on failure
  std::vector<double> alpha_fe;
};

struct FeComparison {
  std::vector<FeComparisonRow> rows;  // one per T in the grid
  bool valid = true;
};

// Both estimators on identical panels for each T in T_grid (config.T if empty). Requires a
// homoskedastic config.
FeComparison compare_fe_qmle(const DgpConfig& config, int reps, const std::vector<int>& T_grid, int jobs);

}  // namespace panelqmle
