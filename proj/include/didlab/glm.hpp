#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "didlab/fe.hpp"

namespace didlab {

struct PpmlResult {
  Eigen::VectorXd coef;      // per regressor column
  VcovResult vcov;
  Eigen::VectorXd eta;       // fitted log means
  int iterations = 0;
  bool converged = false;
};

// Poisson pseudo-maximum-likelihood with absorbed fixed effects, fitted by
// IRLS around the weighted within solver. Counts must be nonnegative with at
// least one positive count per absorbed level (separation check).
PpmlResult ppml_fit(const FeRows& rows, const Eigen::MatrixXd& X,
                    const std::vector<std::string>& names,
                    const std::vector<Factor>& extra_factors = {}, double tol = 1e-9,
                    int max_outer = 200);

struct TslsResult {
  double estimate = 0.0;
  double se = 0.0;
  double first_stage_F = 0.0;  // cluster-robust joint Wald / #instruments
  int n_instruments = 0;
};

// Two-stage least squares with one endogenous regressor after absorbing the
// FeRows fixed-effect structure; city-clustered covariance. The reported
// first-stage statistic equals the Kleibergen-Paap rk Wald F in this
// one-endogenous-regressor case.
TslsResult tsls_fit(const FeRows& rows, const Eigen::VectorXd& endog,
                    const Eigen::MatrixXd& instruments,
                    const std::vector<std::string>& instrument_names,
                    const std::vector<Factor>& extra_factors = {});

}  // namespace didlab
