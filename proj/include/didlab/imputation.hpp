#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "didlab/fe.hpp"
#include "didlab/panel.hpp"
#include "didlab/weights.hpp"

namespace didlab {

enum class OutcomeKind { log_accidents, slight_share };

// Outcome per grid cell (NaN = missing): ln(accidents), or the slight-injury
// share in percentage points.
std::vector<double> outcome_values(const Panel& panel, OutcomeKind kind);

enum class CohortGranularity { quarter, half_year };

struct CohortRules {
  std::optional<PeriodId> merge_until;  // launches on/before -> one cohort
  std::optional<PeriodId> merge_since;  // launches on/after -> one cohort
  std::vector<std::pair<std::string, std::string>> merges;  // label -> label
  bool merge_singletons = true;         // fold single-unit cohorts into the nearest
};

struct CohortMap {
  CohortGranularity granularity = CohortGranularity::quarter;
  std::vector<int> cohort_of_unit;      // -1 for units without a launch
  std::vector<std::string> labels;      // per cohort id, ordered by launch time
  std::vector<long> cohort_time;        // representative month index per cohort
  std::vector<std::string> warnings;
};

CohortMap build_cohorts(const Panel& panel, CohortGranularity granularity,
                        const CohortRules& rules = {});

struct ImputationOptions {
  bool include_never_treated = false;  // add never-treated units to the sample
  bool unit_trends = false;
  OutcomeKind outcome = OutcomeKind::log_accidents;
  CohortGranularity cohorts = CohortGranularity::quarter;
  CohortRules cohort_rules;
  bool drop_singleton_loo = false;  // drop cells without a leave-out peer instead of widening
  FeMethod method = FeMethod::demean;
};

// tau_hat per treated cell, defined exactly on treated, non-missing cells
// whose unit and period effects were estimable.
struct CellEffects {
  std::vector<std::pair<int, int>> cells;  // (unit, period)
  std::vector<double> tau;
  std::vector<std::pair<int, int>> excluded;  // treated cells without an estimable counterfactual
  std::map<std::pair<int, int>, std::size_t> index;

  const double* find(int unit, int period) const;
};

struct UntreatedFit {
  FeFit fit;
  std::vector<int> sample_units;            // unit indices entering the estimation
  std::vector<int> dropped_periods;         // periods with no untreated cell
  std::vector<std::pair<int, int>> dropped_group_periods;  // (group, period)
  std::vector<std::string> notes;
  long n_sample_cells = 0;                  // untreated estimation cells
};

enum class MissingUnitPolicy { error, drop };

// Step 1: unit and period effects from untreated observations only.
UntreatedFit fit_untreated(const Panel& panel, const ImputationOptions& options,
                           const GroupAssignment* groups = nullptr,
                           MissingUnitPolicy missing_units = MissingUnitPolicy::error);

// Step 2: tau_it = y_it - alpha_i - beta_t on treated cells.
CellEffects impute_effects(const Panel& panel, const UntreatedFit& fit,
                           const ImputationOptions& options);

// Step 3: weighted average under a scheme. Weights are renormalized within
// the intersection of the scheme support and the available effects.
double aggregate(const CellEffects& effects, const CellWeights& weights);

// Precomputed leave-out machinery shared across schemes: one factorization of
// the untreated-design normal equations serves every weight vector.
class LeaveOutSolver {
 public:
  LeaveOutSolver(const Panel& panel, const UntreatedFit& fit,
                 const ImputationOptions& options);

  // Influence weights of the untreated observations on the weighted estimate:
  // v*_row = x_row' (X'X)^-1 q with q the treated loading of the scheme.
  Eigen::VectorXd untreated_influence(const CellWeights& weights) const;

  const Eigen::VectorXd& untreated_residuals() const { return residuals_; }
  const std::vector<int>& row_unit() const { return row_unit_; }

 private:
  Eigen::MatrixXd xtx_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
  std::vector<int> row_unit_;
  std::vector<int> row_period_;
  Eigen::VectorXd residuals_;
  // column layout
  std::vector<int> unit_col_;
  std::vector<std::vector<int>> gp_col_;  // group x period
  std::vector<int> trend_col_;
  double trend_center_ = 0.0;
  std::vector<int> groups_;
  int n_periods_ = 0;
  bool trends_ = false;

  Eigen::VectorXd treated_loading(const CellWeights& weights) const;
};

// Cohort-by-period mean effects excluding the focal unit; the widening chain
// (nearest cohort, then all cohorts at t, then the unit-excluded grand mean)
// handles singleton cohort-periods unless drop_singleton_loo is set.
struct LeaveOutResiduals {
  std::vector<double> residual;  // aligned with effects.cells
  std::vector<char> dropped;     // 1 when the cell was dropped (singleton policy)
  int n_widened = 0;
};

LeaveOutResiduals leave_out_residuals(const Panel& panel, const CellEffects& effects,
                                      const CohortMap& cohorts, bool drop_singletons);

double leave_out_se(const Panel& panel, const UntreatedFit& fit, const CellEffects& effects,
                    const CohortMap& cohorts, const CellWeights& weights,
                    const LeaveOutSolver& solver, bool drop_singletons = false);

// Point estimate in log points with the leave-out standard error and the
// semi-elasticity transform.
struct EffectEstimate {
  std::string estimand;
  double tau = 0.0;
  double se = 0.0;
  double semi_pct = 0.0;
  double semi_se_pct = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // on tau
  long n_treated_cells = 0;
  long n_total_cells = 0;
  int n_units = 0;
  bool transformed = true;  // false for percentage-point outcomes
};

std::pair<double, double> to_semi_elasticity(double tau, double se);

// End-to-end pipeline context: untreated fit, effects, cohorts and the shared
// leave-out factorization.
class ImputationPipeline {
 public:
  ImputationPipeline(const Panel& panel, ImputationOptions options,
                     std::optional<GroupAssignment> groups = std::nullopt,
                     MissingUnitPolicy missing_units = MissingUnitPolicy::error);

  EffectEstimate estimate(const WeightScheme& scheme) const;
  double point_estimate(const WeightScheme& scheme) const;  // no SE; cheap

  const Panel& panel() const { return panel_; }
  const UntreatedFit& fit() const { return fit_; }
  const CellEffects& effects() const { return effects_; }
  const CohortMap& cohorts() const { return cohorts_; }
  const GroupAssignment* groups() const { return groups_ ? &*groups_ : nullptr; }
  const ImputationOptions& options() const { return options_; }
  long n_sample_cells() const;
  int n_sample_units() const;

 private:
  const Panel& panel_;
  ImputationOptions options_;
  std::optional<GroupAssignment> groups_;
  UntreatedFit fit_;
  CellEffects effects_;
  CohortMap cohorts_;
  std::unique_ptr<LeaveOutSolver> solver_;
};

struct EventStudyPoint {
  int h = 0;
  double estimate = 0.0;
  double se = 0.0;
  long n_cells = 0;
};

struct EventStudyProfile {
  std::vector<EventStudyPoint> pre;    // h in [-H_pre, -1], lead-indicator regression
  std::vector<EventStudyPoint> post;   // h in [0, H_post], imputation estimates
  std::optional<EventStudyPoint> pooled_tail;  // h > H_post
  std::vector<std::string> notes;
  std::string normalization;
};

EventStudyProfile event_study(const Panel& panel, const ImputationOptions& options,
                              int h_pre = 12, int h_post = 18,
                              MissingUnitPolicy missing_units = MissingUnitPolicy::error);

struct HeterogeneityResult {
  EffectEstimate above;
  EffectEstimate below;
  EffectEstimate contrast;
  double contrast_p = 1.0;
  GroupAssignment groups;
};

// Group-interacted pipeline with half-year cohorts; the contrast weighs the
// above side +1 and the below side -1.
HeterogeneityResult heterogeneity(const Panel& panel, const std::string& attribute,
                                  ImputationOptions options = {});

}  // namespace didlab
