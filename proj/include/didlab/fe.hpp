#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "didlab/wls.hpp"

namespace didlab {

// One categorical factor to absorb. When `slope_var` is non-empty the factor
// additionally absorbs a level-specific slope on that variable (used for
// unit-specific linear time trends).
struct Factor {
  std::string name;
  std::vector<int> level;   // per row, 0..n_levels-1
  int n_levels = 0;
  Eigen::VectorXd slope_var;  // empty, or one value per row
  bool has_slope() const { return slope_var.size() > 0; }
};

// Weighted alternating demeaning over a list of factors. Columns are swept
// until the largest single update falls below tol.
class Absorber {
 public:
  Absorber(std::vector<Factor> factors, const Eigen::VectorXd& weights);

  struct Effects {
    // per factor: level intercepts (and slopes when the factor has one)
    std::vector<Eigen::VectorXd> intercept;
    std::vector<Eigen::VectorXd> slope;
    int sweeps = 0;
    bool converged = false;
  };

  // Demeans `col` in place; returns the accumulated per-level effects.
  Effects demean(Eigen::VectorXd& col, double tol = 1e-10, int max_sweeps = 10000) const;

  // Demeans several columns (no effect recovery); used for partialling
  // regressors out of the fixed-effect structure.
  void demean_matrix(Eigen::MatrixXd& cols, double tol = 1e-10, int max_sweeps = 10000) const;

  const std::vector<Factor>& factors() const { return factors_; }

  // Degrees of freedom absorbed: sum of level counts (plus slopes) minus the
  // usual one-redundancy-per-extra-factor adjustment.
  int absorbed_df() const;

 private:
  std::vector<Factor> factors_;
  Eigen::VectorXd weights_;
  // per factor/level: row indices and weight sums, precomputed
  std::vector<std::vector<std::vector<int>>> rows_;
  std::vector<std::vector<double>> wsum_;
  // per factor/level slope regressors: sum w*s, sum w*s^2
  std::vector<std::vector<double>> swsum_;
  std::vector<std::vector<double>> sswsum_;
};

// Row layout shared by the high-level fitters: one observation per
// (unit, period) cell in the estimation sample.
struct FeRows {
  std::vector<int> unit;    // per row
  std::vector<int> period;  // per row
  Eigen::VectorXd y;
  Eigen::VectorXd weight;
  int n_units = 0;
  int n_periods = 0;
  // group per unit for Eq.-style group-specific period effects; empty = one group
  std::vector<int> group_of_unit;
  int n_groups = 1;
  bool unit_trends = false;
};

enum class FeMethod { demean, dense };

// Two-way (optionally group-interacted, optionally unit-trend) fixed-effect
// decomposition of y. Normalization: per group, the earliest period present
// in the estimation sample has beta = 0; unit trends are centered at the
// weighted sample-mean period index.
struct FeFit {
  std::vector<double> alpha;          // per unit; NaN if the unit is absent
  Eigen::MatrixXd beta;               // n_groups x n_periods; NaN where inestimable
  std::vector<int> group_of_unit;     // per unit (all zero when no groups)
  int n_groups = 1;
  std::vector<double> unit_trend;     // per unit; empty when trends are off
  double trend_center = 0.0;          // mean period index used for centering
  std::vector<int> row_unit, row_period;
  Eigen::VectorXd residuals;          // per estimation row
  std::string normalization;
  int sweeps = 0;
  bool converged = false;

  bool has_period(int group, int period) const;
  // alpha_u + beta_{g(u),t} (+ trend); NaN when any part is inestimable
  double predict(int unit, int period) const;
};

FeFit fit_two_way_fe(const FeRows& rows, FeMethod method = FeMethod::demean,
                     double tol = 1e-10, int max_sweeps = 10000);

// Partialled-out regression: absorbs the FeRows structure from y and the
// explicit regressor columns, solves WLS on the demeaned data and returns
// cluster-robust (by unit) inference.
struct WithinFitResult {
  WlsFit wls;            // on demeaned data
  VcovResult vcov;       // city-clustered unless hc1 = true
  Eigen::VectorXd y_demeaned;
  Eigen::MatrixXd x_demeaned;
  int df_absorbed = 0;
};

WithinFitResult within_wls(const FeRows& rows, const Eigen::MatrixXd& X,
                           const std::vector<std::string>& names, bool hc1 = false,
                           double tol = 1e-10, int max_sweeps = 10000);

// Extra absorbed factors (e.g. country x year cells) appended to the unit
// and period factors.
WithinFitResult within_wls(const FeRows& rows, const Eigen::MatrixXd& X,
                           const std::vector<std::string>& names,
                           const std::vector<Factor>& extra_factors, bool hc1,
                           double tol = 1e-10, int max_sweeps = 10000);

// Connectivity check of the unit/period incidence graph, per group. Returns
// one representative unit id list per extra component (empty = connected).
std::vector<std::vector<int>> disconnected_components(const FeRows& rows);

}  // namespace didlab
