#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace didlab {

// Observation-level design for the explicit-regressor solvers. Rows carry a
// weight and a cluster id; absorbed fixed effects are handled upstream.
struct DesignMatrix {
  std::vector<std::string> columns;
  Eigen::MatrixXd X;        // n x k
  Eigen::VectorXd weights;  // n, >= 0
  std::vector<int> cluster; // n
};

struct WlsFit {
  Eigen::VectorXd coef;      // k; NaN for dropped columns
  std::vector<int> kept;     // indices of retained columns, in input order
  std::vector<std::string> dropped;
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;
};

// Minimizes sum_i w_i (y_i - x_i'b)^2. Rank-deficient columns are dropped
// deterministically: the first-listed column of a collinear set is kept.
WlsFit solve_wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                 const Eigen::VectorXd& weights,
                 const std::vector<std::string>& names = {});

struct VcovResult {
  Eigen::MatrixXd cov;       // over kept coefficients
  std::vector<int> kept;
  int n_clusters = 0;
  double small_sample_factor = 1.0;
};

// Sandwich (X'WX)^-1 (sum_c s_c s_c') (X'WX)^-1 with s_c = sum_{i in c} w_i x_i u_i,
// scaled by G/(G-1) * (N-1)/(N-K). K counts the kept columns plus any degrees
// of freedom absorbed upstream (df_absorbed).
VcovResult cluster_robust_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                               const Eigen::VectorXd& weights, const std::vector<int>& cluster,
                               const std::vector<int>& kept, int df_absorbed = 0);

// HC1 heteroskedasticity-robust covariance (each observation its own cluster,
// factor N/(N-K)).
VcovResult hc1_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                    const Eigen::VectorXd& weights, const std::vector<int>& kept,
                    int df_absorbed = 0);

}  // namespace didlab
