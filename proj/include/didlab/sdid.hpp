#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "didlab/panel.hpp"

namespace didlab {

struct SdidConfig {
  std::optional<double> zeta_omega;  // unset: (n_treated * T_post)^(1/4) * noise sd of donor first differences
  double zeta_lambda = 0.0;          // time weights carry no ridge beyond the simplex
  enum class Solver { frank_wolfe, projected_gradient };
  Solver solver = Solver::frank_wolfe;
  int max_iters = 10000;
  double tolerance = 1e-12;          // minimum relative objective decrease
  int placebo_reps = 250;
  std::uint64_t seed = 1;
};

struct SimplexFit {
  Eigen::VectorXd weights;   // on the simplex
  double intercept = 0.0;
  double objective = 0.0;    // residual sum of squares + ridge
  double mspe = 0.0;         // mean squared residual (no ridge)
  int iterations = 0;
};

// min over the simplex of ||A w + c 1 - b||^2 + zeta^2 * n_rows * ||w||^2,
// with a free intercept c. Deterministic given the config.
SimplexFit simplex_regression(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                              double zeta, const SdidConfig& config);

// Unit weights: donors' pre-period series (rows = pre periods) fitted to the
// cohort's pre-period mean outcome.
SimplexFit sdid_unit_weights(const Eigen::MatrixXd& donors_pre, const Eigen::VectorXd& target_pre,
                             const SdidConfig& config);

// Time weights: donors' pre-period columns fitted to donor post-period means
// (rows = donors).
SimplexFit sdid_time_weights(const Eigen::MatrixXd& donors_pre, const Eigen::VectorXd& donors_post_mean,
                             const SdidConfig& config);

struct SdidCohortResult {
  PeriodId adoption;
  std::vector<int> treated_units;
  std::vector<int> donor_units;
  Eigen::VectorXd omega;   // over donor_units
  Eigen::VectorXd lambda;  // over pre periods
  double intercept = 0.0;
  double tau = 0.0;
  long n_treated_cells = 0;
  double mspe_monthly = 0.0;
};

struct SdidResult {
  std::vector<SdidCohortResult> cohorts;
  double tau_pooled = 0.0;
  double se_placebo = std::numeric_limits<double>::quiet_NaN();
  double mspe_monthly = 0.0;  // treated-cell weighted average over cohorts
  std::vector<std::string> notes;
};

// Staggered synthetic DD: per adoption period, simplex unit/time weights and
// the weighted two-by-two contrast; pooled across cohorts by treated-cell
// counts. Donors are units never treated within the panel window with
// complete outcome series.
SdidResult sdid_estimate(const Panel& panel, const SdidConfig& config);

// Placebo variance: reassigns the cohort structure to random donors, re-runs
// the estimator, and returns the standard deviation over replications.
double sdid_placebo_se(const Panel& panel, const SdidConfig& config);

// Estimate plus placebo standard error.
SdidResult sdid_run(const Panel& panel, const SdidConfig& config);

struct SeasonalBalance {
  double pre_summer_share = 0.0;   // April-September among pre-treatment months
  double post_summer_share = 0.0;
  bool imbalance_flag = false;     // |pre - post| > 2 percentage points
  double seasonal_residual = 0.0;  // mean summer minus mean winter pre-fit residual
};

SeasonalBalance seasonal_balance_report(const Panel& panel, const SdidConfig& config);

}  // namespace didlab
