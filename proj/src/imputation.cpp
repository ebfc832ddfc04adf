#include "didlab/imputation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "didlab/errors.hpp"

namespace didlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ95 = 1.959964;

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

}  // namespace

std::vector<double> outcome_values(const Panel& panel, OutcomeKind kind) {
  if (kind == OutcomeKind::log_accidents) return log_outcome(panel);
  std::vector<double> out(panel.cells.size(), kNaN);
  for (int u = 0; u < panel.n_units(); ++u)
    for (int t = 0; t < panel.n_periods(); ++t) {
      const auto& cell = panel.cell(u, t);
      if (cell.has_value() && cell->slight_share.has_value())
        out[static_cast<std::size_t>(u) * panel.n_periods() + t] = 100.0 * *cell->slight_share;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Cohorts
// ---------------------------------------------------------------------------

namespace {

std::string bucket_label(const PeriodId& launch, CohortGranularity granularity) {
  if (granularity == CohortGranularity::quarter)
    return std::to_string(launch.year) + "Q" + std::to_string((launch.month - 1) / 3 + 1);
  return std::to_string(launch.year) + "H" + std::to_string(launch.month <= 6 ? 1 : 2);
}

long bucket_start(const PeriodId& launch, CohortGranularity granularity) {
  int m0 = granularity == CohortGranularity::quarter ? ((launch.month - 1) / 3) * 3 + 1
                                                     : (launch.month <= 6 ? 1 : 7);
  return PeriodId{launch.year, m0}.month_index();
}

}  // namespace

CohortMap build_cohorts(const Panel& panel, CohortGranularity granularity,
                        const CohortRules& rules) {
  CohortMap out;
  out.granularity = granularity;
  out.cohort_of_unit.assign(panel.units.size(), -1);

  struct Bucket {
    std::string label;
    long time = 0;
    std::vector<int> units;
  };
  std::map<std::string, Bucket> buckets;

  for (int u = 0; u < panel.n_units(); ++u) {
    const auto& launch = panel.units[u].launch;
    if (!launch.has_value() || *launch > panel.periods.back()) continue;
    std::string label;
    long time;
    if (rules.merge_until && *launch <= *rules.merge_until) {
      label = "until_" + rules.merge_until->str();
      time = bucket_start(*rules.merge_until, granularity);
    } else if (rules.merge_since && *launch >= *rules.merge_since) {
      label = "since_" + rules.merge_since->str();
      time = bucket_start(*rules.merge_since, granularity);
    } else {
      label = bucket_label(*launch, granularity);
      time = bucket_start(*launch, granularity);
    }
    auto& bucket = buckets[label];
    bucket.label = label;
    bucket.time = time;
    bucket.units.push_back(u);
  }
  if (buckets.empty()) fail_invalid("build_cohorts: no treated units inside the panel window");

  // Explicit merges, in order.
  for (const auto& [from, to] : rules.merges) {
    auto it_from = buckets.find(from);
    if (it_from == buckets.end()) continue;
    auto& target = buckets[to];
    if (target.label.empty()) {
      target.label = to;
      target.time = it_from->second.time;
    }
    target.units.insert(target.units.end(), it_from->second.units.begin(),
                        it_from->second.units.end());
    target.time = std::min(target.time, it_from->second.time);
    buckets.erase(it_from);
    out.warnings.push_back("cohort " + from + " merged into " + to);
  }

  std::vector<Bucket> ordered;
  for (auto& [label, bucket] : buckets) ordered.push_back(std::move(bucket));
  std::sort(ordered.begin(), ordered.end(),
            [](const Bucket& a, const Bucket& b) { return a.time < b.time || (a.time == b.time && a.label < b.label); });

  if (rules.merge_singletons && ordered.size() > 1) {
    bool merged = true;
    while (merged && ordered.size() > 1) {
      merged = false;
      for (std::size_t i = 0; i < ordered.size(); ++i) {
        if (ordered[i].units.size() > 1) continue;
        std::size_t best = i == 0 ? 1 : i - 1;
        long best_dist = std::numeric_limits<long>::max();
        for (std::size_t j = 0; j < ordered.size(); ++j) {
          if (j == i) continue;
          long dist = std::labs(ordered[j].time - ordered[i].time);
          if (dist < best_dist || (dist == best_dist && ordered[j].time < ordered[best].time)) {
            best = j;
            best_dist = dist;
          }
        }
        out.warnings.push_back("singleton cohort " + ordered[i].label + " merged into " +
                               ordered[best].label);
        auto& target = ordered[best];
        target.units.insert(target.units.end(), ordered[i].units.begin(), ordered[i].units.end());
        target.time = std::min(target.time, ordered[i].time);
        ordered.erase(ordered.begin() + static_cast<std::ptrdiff_t>(i));
        merged = true;
        break;
      }
    }
  }

  for (std::size_t c = 0; c < ordered.size(); ++c) {
    out.labels.push_back(ordered[c].label);
    out.cohort_time.push_back(ordered[c].time);
    for (int u : ordered[c].units) out.cohort_of_unit[u] = static_cast<int>(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step 1: untreated fit
// ---------------------------------------------------------------------------

UntreatedFit fit_untreated(const Panel& panel, const ImputationOptions& options,
                           const GroupAssignment* groups,
                           MissingUnitPolicy missing_units) {
  std::vector<double> y = outcome_values(panel, options.outcome);
  const int T = panel.n_periods();

  UntreatedFit out;
  std::vector<char> in_sample(panel.units.size(), 0);
  for (int u = 0; u < panel.n_units(); ++u) {
    bool ever = panel.units[u].launch.has_value();
    if (ever || options.include_never_treated) in_sample[u] = 1;
  }

  // Units whose cells are all treated have no estimable unit effect; with
  // unit trends a single untreated period cannot pin a line either, and the
  // treated-cell counterfactual would depend on an arbitrary slope choice.
  const int needed = options.unit_trends ? 2 : 1;
  for (int u = 0; u < panel.n_units(); ++u) {
    if (!in_sample[u]) continue;
    int untreated_periods = 0;
    bool has_any = false;
    for (int t = 0; t < T; ++t) {
      if (std::isnan(y[static_cast<std::size_t>(u) * T + t])) continue;
      has_any = true;
      if (!panel.treated(u, t)) ++untreated_periods;
    }
    if (!has_any) {
      in_sample[u] = 0;
      out.notes.push_back("unit " + panel.units[u].unit_id + " has no usable observations");
      continue;
    }
    if (untreated_periods < needed) {
      if (missing_units == MissingUnitPolicy::error)
        fail_estimation("unit " + panel.units[u].unit_id + " has " +
                        std::to_string(untreated_periods) +
                        " untreated cells; needs " + std::to_string(needed) +
                        " for an estimable effect" +
                        (options.unit_trends ? " under unit trends" : ""));
      in_sample[u] = 0;
      out.notes.push_back("unit " + panel.units[u].unit_id +
                          " dropped: too few untreated cells for an estimable effect");
    }
  }

  FeRows rows;
  rows.n_units = panel.n_units();
  rows.n_periods = T;
  if (groups != nullptr) {
    rows.n_groups = 2;
    rows.group_of_unit.resize(panel.units.size());
    for (int u = 0; u < panel.n_units(); ++u)
      rows.group_of_unit[u] = groups->side[u] ? 1 : 0;
  }
  rows.unit_trends = options.unit_trends;

  std::vector<double> yv;
  for (int u = 0; u < panel.n_units(); ++u) {
    if (!in_sample[u]) continue;
    for (int t = 0; t < T; ++t) {
      double value = y[static_cast<std::size_t>(u) * T + t];
      if (std::isnan(value) || panel.treated(u, t)) continue;
      rows.unit.push_back(u);
      rows.period.push_back(t);
      yv.push_back(value);
    }
  }
  if (yv.empty()) fail_estimation("fit_untreated: no untreated observations");
  rows.y = Eigen::Map<Eigen::VectorXd>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  rows.weight = Eigen::VectorXd::Ones(rows.y.size());

  // Report periods (and group-periods) without any untreated observation;
  // their treated cells cannot be imputed.
  std::vector<std::vector<char>> gp_seen(rows.n_groups, std::vector<char>(T, 0));
  for (std::size_t i = 0; i < rows.unit.size(); ++i) {
    int g = rows.group_of_unit.empty() ? 0 : rows.group_of_unit[rows.unit[i]];
    gp_seen[g][rows.period[i]] = 1;
  }
  for (int t = 0; t < T; ++t) {
    bool any = false;
    for (int g = 0; g < rows.n_groups; ++g) any = any || gp_seen[g][t];
    if (!any) out.dropped_periods.push_back(t);
  }
  for (int g = 0; g < rows.n_groups; ++g)
    for (int t = 0; t < T; ++t)
      if (!gp_seen[g][t]) out.dropped_group_periods.emplace_back(g, t);

  out.fit = fit_two_way_fe(rows, options.method);

  for (int u = 0; u < panel.n_units(); ++u)
    if (in_sample[u]) out.sample_units.push_back(u);
  for (int u = 0; u < panel.n_units(); ++u) {
    if (!in_sample[u]) continue;
    for (int t = 0; t < T; ++t)
      if (!std::isnan(y[static_cast<std::size_t>(u) * T + t])) ++out.n_sample_cells;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step 2: cell-level effects
// ---------------------------------------------------------------------------

const double* CellEffects::find(int unit, int period) const {
  auto it = index.find({unit, period});
  if (it == index.end()) return nullptr;
  return &tau[it->second];
}

CellEffects impute_effects(const Panel& panel, const UntreatedFit& fit,
                           const ImputationOptions& options) {
  std::vector<double> y = outcome_values(panel, options.outcome);
  const int T = panel.n_periods();
  CellEffects out;
  std::vector<char> sampled(panel.units.size(), 0);
  for (int u : fit.sample_units) sampled[u] = 1;

  for (int u = 0; u < panel.n_units(); ++u) {
    if (!sampled[u]) continue;
    for (int t = 0; t < T; ++t) {
      if (!panel.treated(u, t)) continue;
      double value = y[static_cast<std::size_t>(u) * T + t];
      if (std::isnan(value)) continue;
      double counterfactual = fit.fit.predict(u, t);
      if (std::isnan(counterfactual)) {
        out.excluded.emplace_back(u, t);
        continue;
      }
      out.index[{u, t}] = out.cells.size();
      out.cells.emplace_back(u, t);
      out.tau.push_back(value - counterfactual);
    }
  }
  return out;
}

double aggregate(const CellEffects& effects, const CellWeights& weights) {
  double total = 0.0;
  for (std::size_t i = 0; i < weights.cells.size(); ++i) {
    const double* tau = effects.find(weights.cells[i].first, weights.cells[i].second);
    if (tau == nullptr)
      fail_estimation("aggregate: weight on a cell without an imputed effect");
    total += weights.weight[i] * *tau;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Leave-out variance
// ---------------------------------------------------------------------------

LeaveOutSolver::LeaveOutSolver(const Panel& panel, const UntreatedFit& fit,
                               const ImputationOptions& options) {
  (void)panel;
  (void)options;
  const FeFit& fe = fit.fit;
  n_periods_ = static_cast<int>(fe.beta.cols());
  const int n_units = static_cast<int>(fe.alpha.size());
  const int n_groups = fe.n_groups;
  groups_ = fe.group_of_unit;
  trend_center_ = fe.trend_center;
  const bool trends = !fe.unit_trend.empty();

  // Column layout mirrors the dense fit: unit dummies, group-period dummies
  // skipping each group's first sampled period, unit trend columns.
  std::vector<char> unit_seen(n_units, 0);
  std::vector<std::vector<char>> gp_seen(n_groups, std::vector<char>(n_periods_, 0));
  for (std::size_t i = 0; i < fe.row_unit.size(); ++i) {
    unit_seen[fe.row_unit[i]] = 1;
    gp_seen[groups_[fe.row_unit[i]]][fe.row_period[i]] = 1;
  }
  unit_col_.assign(n_units, -1);
  int ncol = 0;
  for (int u = 0; u < n_units; ++u)
    if (unit_seen[u]) unit_col_[u] = ncol++;
  // skip the normalization columns: one period per group, two with trends
  // (the pinned slope gauge), mirroring the fit's parameterization
  const int n_skip = trends ? 2 : 1;
  gp_col_.assign(n_groups, std::vector<int>(n_periods_, -1));
  for (int g = 0; g < n_groups; ++g) {
    int skipped = 0;
    for (int t = 0; t < n_periods_; ++t) {
      if (!gp_seen[g][t]) continue;
      if (skipped < n_skip) {
        ++skipped;
        continue;
      }
      gp_col_[g][t] = ncol++;
    }
  }
  // a unit trend needs at least two distinct periods; the fit leaves the
  // slope at zero otherwise and so must the influence features
  trend_col_.assign(n_units, -1);
  if (trends) {
    std::vector<int> first_seen(n_units, -1);
    std::vector<char> multi(n_units, 0);
    for (std::size_t i = 0; i < fe.row_unit.size(); ++i) {
      int u = fe.row_unit[i], t = fe.row_period[i];
      if (first_seen[u] < 0)
        first_seen[u] = t;
      else if (first_seen[u] != t)
        multi[u] = 1;
    }
    for (int u = 0; u < n_units; ++u)
      if (unit_seen[u] && multi[u]) trend_col_[u] = ncol++;
  }

  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(ncol, ncol);
  auto row_features = [&](int u, int t, int* cols, double* vals) {
    int n = 0;
    cols[n] = unit_col_[u];
    vals[n++] = 1.0;
    int g = groups_[u];
    if (gp_col_[g][t] >= 0) {
      cols[n] = gp_col_[g][t];
      vals[n++] = 1.0;
    }
    if (trends && trend_col_[u] >= 0) {
      cols[n] = trend_col_[u];
      vals[n++] = static_cast<double>(t) - trend_center_;
    }
    return n;
  };
  int cols[3];
  double vals[3];
  for (std::size_t i = 0; i < fe.row_unit.size(); ++i) {
    int n = row_features(fe.row_unit[i], fe.row_period[i], cols, vals);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) xtx(cols[a], cols[b]) += vals[a] * vals[b];
  }
  xtx_ = std::move(xtx);
  ldlt_.compute(xtx_);
  row_unit_ = fe.row_unit;
  row_period_ = fe.row_period;
  residuals_ = fe.residuals;
  trends_ = trends;
}

Eigen::VectorXd LeaveOutSolver::treated_loading(const CellWeights& weights) const {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(xtx_.rows());
  for (std::size_t i = 0; i < weights.cells.size(); ++i) {
    auto [u, t] = weights.cells[i];
    double w = weights.weight[i];
    if (unit_col_[u] >= 0) q(unit_col_[u]) += w;
    int g = groups_[u];
    if (gp_col_[g][t] >= 0) q(gp_col_[g][t]) += w;
    if (trends_ && trend_col_[u] >= 0)
      q(trend_col_[u]) += w * (static_cast<double>(t) - trend_center_);
  }
  return q;
}

Eigen::VectorXd LeaveOutSolver::untreated_influence(const CellWeights& weights) const {
  Eigen::VectorXd q = treated_loading(weights);
  Eigen::VectorXd gamma = ldlt_.solve(q);
  // rank-deficient corner cases (e.g. a unit whose rows saturate its own
  // dummy space): fall back to the minimum-norm solution
  double scale = std::max(1.0, q.norm());
  if (!gamma.allFinite() || (xtx_ * gamma - q).norm() > 1e-8 * scale)
    gamma = xtx_.completeOrthogonalDecomposition().solve(q);
  Eigen::VectorXd v(static_cast<Eigen::Index>(row_unit_.size()));
  for (std::size_t i = 0; i < row_unit_.size(); ++i) {
    int u = row_unit_[i], t = row_period_[i];
    double value = gamma(unit_col_[u]);
    int g = groups_[u];
    if (gp_col_[g][t] >= 0) value += gamma(gp_col_[g][t]);
    if (trends_ && trend_col_[u] >= 0)
      value += gamma(trend_col_[u]) * (static_cast<double>(t) - trend_center_);
    v(static_cast<Eigen::Index>(i)) = value;
  }
  return v;
}

LeaveOutResiduals leave_out_residuals(const Panel& panel, const CellEffects& effects,
                                      const CohortMap& cohorts, bool drop_singletons) {
  (void)panel;
  const int n_cohorts = static_cast<int>(cohorts.labels.size());

  std::map<std::pair<int, int>, std::pair<double, int>> cohort_period;  // (c,t) -> (sum, n)
  std::map<int, std::pair<double, int>> by_unit;
  double total_sum = 0.0;
  int total_n = 0;
  for (std::size_t i = 0; i < effects.cells.size(); ++i) {
    auto [u, t] = effects.cells[i];
    int c = cohorts.cohort_of_unit[u];
    if (c < 0) fail_invalid("leave_out_residuals: treated unit without a cohort");
    auto& cp = cohort_period[{c, t}];
    cp.first += effects.tau[i];
    cp.second += 1;
    auto& us = by_unit[u];
    us.first += effects.tau[i];
    us.second += 1;
    total_sum += effects.tau[i];
    total_n += 1;
  }

  LeaveOutResiduals out;
  out.residual.assign(effects.cells.size(), 0.0);
  out.dropped.assign(effects.cells.size(), 0);

  for (std::size_t i = 0; i < effects.cells.size(); ++i) {
    auto [u, t] = effects.cells[i];
    double tau = effects.tau[i];
    int c = cohorts.cohort_of_unit[u];

    auto own = cohort_period.at({c, t});
    double sum = own.first - tau;
    int n = own.second - 1;

    if (n == 0 && drop_singletons) {
      out.dropped[i] = 1;
      continue;
    }
    if (n == 0) {
      // widen to cohorts nearest in launch time until a peer appears
      std::vector<int> order(n_cohorts);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        long da = std::labs(cohorts.cohort_time[a] - cohorts.cohort_time[c]);
        long db = std::labs(cohorts.cohort_time[b] - cohorts.cohort_time[c]);
        return da < db || (da == db && a < b);
      });
      for (int oc : order) {
        if (oc == c) continue;
        auto it = cohort_period.find({oc, t});
        if (it == cohort_period.end()) continue;
        sum += it->second.first;
        n += it->second.second;
        if (n >= 1) break;
      }
      ++out.n_widened;
    }
    if (n == 0) {
      // no other treated unit at period t anywhere: fall back to the grand
      // mean excluding the focal unit
      auto us = by_unit.at(u);
      double gsum = total_sum - us.first;
      int gn = total_n - us.second;
      if (gn > 0) {
        sum = gsum;
        n = gn;
      }
    }
    out.residual[i] = (n > 0) ? tau - sum / n : tau;
  }
  return out;
}

double leave_out_se(const Panel& panel, const UntreatedFit& fit, const CellEffects& effects,
                    const CohortMap& cohorts, const CellWeights& weights,
                    const LeaveOutSolver& solver, bool drop_singletons) {
  (void)fit;  // the solver already carries the fit's rows and residuals
  LeaveOutResiduals loo = leave_out_residuals(panel, effects, cohorts, drop_singletons);

  std::map<int, double> per_unit;
  for (std::size_t i = 0; i < weights.cells.size(); ++i) {
    auto [u, t] = weights.cells[i];
    auto it = effects.index.find({u, t});
    if (it == effects.index.end()) continue;
    if (loo.dropped[it->second]) continue;
    per_unit[u] += weights.weight[i] * loo.residual[it->second];
  }

  Eigen::VectorXd v = solver.untreated_influence(weights);
  const Eigen::VectorXd& resid = solver.untreated_residuals();
  for (std::size_t i = 0; i < solver.row_unit().size(); ++i)
    per_unit[solver.row_unit()[i]] -= v(static_cast<Eigen::Index>(i)) * resid(static_cast<Eigen::Index>(i));

  double var = 0.0;
  for (const auto& [u, s] : per_unit) var += s * s;
  return std::sqrt(var);
}

std::pair<double, double> to_semi_elasticity(double tau, double se) {
  double factor = std::exp(tau);
  return {100.0 * (factor - 1.0), 100.0 * factor * se};
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

ImputationPipeline::ImputationPipeline(const Panel& panel, ImputationOptions options,
                                       std::optional<GroupAssignment> groups,
                                       MissingUnitPolicy missing_units)
    : panel_(panel), options_(std::move(options)), groups_(std::move(groups)) {
  fit_ = fit_untreated(panel_, options_, groups_ ? &*groups_ : nullptr, missing_units);
  effects_ = impute_effects(panel_, fit_, options_);
  if (effects_.cells.empty())
    fail_estimation("imputation pipeline: no treated cells with estimable counterfactuals");
  cohorts_ = build_cohorts(panel_, options_.cohorts, options_.cohort_rules);
  solver_ = std::make_unique<LeaveOutSolver>(panel_, fit_, options_);
}

long ImputationPipeline::n_sample_cells() const { return fit_.n_sample_cells; }

int ImputationPipeline::n_sample_units() const {
  return static_cast<int>(fit_.sample_units.size());
}

double ImputationPipeline::point_estimate(const WeightScheme& scheme) const {
  CellWeights weights = derive_weights(scheme, panel_, effects_.cells,
                                       groups_ ? &*groups_ : nullptr);
  return aggregate(effects_, weights);
}

EffectEstimate ImputationPipeline::estimate(const WeightScheme& scheme) const {
  CellWeights weights = derive_weights(scheme, panel_, effects_.cells,
                                       groups_ ? &*groups_ : nullptr);
  EffectEstimate out;
  out.estimand = scheme.name;
  out.tau = aggregate(effects_, weights);
  out.se = leave_out_se(panel_, fit_, effects_, cohorts_, weights, *solver_,
                        options_.drop_singleton_loo);
  out.ci_lo = out.tau - kZ95 * out.se;
  out.ci_hi = out.tau + kZ95 * out.se;
  out.n_treated_cells = weights.n_support;
  out.n_total_cells = fit_.n_sample_cells;
  out.n_units = n_sample_units();
  out.transformed = options_.outcome == OutcomeKind::log_accidents;
  if (out.transformed) {
    auto [pct, pct_se] = to_semi_elasticity(out.tau, out.se);
    out.semi_pct = pct;
    out.semi_se_pct = pct_se;
  } else {
    out.semi_pct = out.tau;
    out.semi_se_pct = out.se;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Event study
// ---------------------------------------------------------------------------

EventStudyProfile event_study(const Panel& panel, const ImputationOptions& options,
                              int h_pre, int h_post, MissingUnitPolicy missing_units) {
  ImputationPipeline pipeline(panel, options, std::nullopt, missing_units);
  EventStudyProfile out;
  out.normalization =
      "post points: imputation against the untreated-sample counterfactual; pre points: "
      "lead-indicator coefficients on untreated cells, reference = cells more than " +
      std::to_string(h_pre) + " months before launch";

  for (int h = 0; h <= h_post; ++h) {
    WeightScheme scheme = WeightScheme::event_time(h);
    CellWeights weights;
    try {
      weights = derive_weights(scheme, panel, pipeline.effects().cells, nullptr);
    } catch (const Error&) {
      out.notes.push_back("event time " + std::to_string(h) + " has no support; omitted");
      continue;
    }
    EffectEstimate est = pipeline.estimate(scheme);
    out.post.push_back({h, est.tau, est.se, est.n_treated_cells});
  }
  {
    WeightScheme tail = WeightScheme::event_tail(h_post + 1);
    try {
      EffectEstimate est = pipeline.estimate(tail);
      out.pooled_tail = EventStudyPoint{h_post + 1, est.tau, est.se, est.n_treated_cells};
    } catch (const Error&) {
      out.notes.push_back("no observations beyond event time " + std::to_string(h_post));
    }
  }

  // Pre-trend test: lead indicators on the untreated estimation sample.
  const UntreatedFit& fit = pipeline.fit();
  const FeFit& fe = fit.fit;
  const Eigen::Index n = fe.residuals.size();
  std::vector<double> y = outcome_values(panel, options.outcome);

  FeRows rows;
  rows.n_units = panel.n_units();
  rows.n_periods = panel.n_periods();
  rows.unit = fe.row_unit;
  rows.period = fe.row_period;
  rows.unit_trends = options.unit_trends;
  rows.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    rows.y(i) = y[static_cast<std::size_t>(rows.unit[i]) * panel.n_periods() + rows.period[i]];
  rows.weight = Eigen::VectorXd::Ones(n);

  Eigen::MatrixXd leads = Eigen::MatrixXd::Zero(n, h_pre);
  std::vector<std::string> names;
  std::vector<long> lead_count(h_pre, 0);
  for (int h = -h_pre; h <= -1; ++h) names.push_back("lead_" + std::to_string(-h));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto et = panel.event_time(rows.unit[i], rows.period[i]);
    if (!et.has_value() || *et < -h_pre || *et > -1) continue;
    int col = static_cast<int>(*et + h_pre);
    leads(i, col) = 1.0;
    ++lead_count[col];
  }

  WithinFitResult reg = within_wls(rows, leads, names);
  std::map<int, int> kept_pos;
  for (std::size_t j = 0; j < reg.wls.kept.size(); ++j) kept_pos[reg.wls.kept[j]] = static_cast<int>(j);
  for (int col = 0; col < h_pre; ++col) {
    int h = col - h_pre;
    if (lead_count[col] == 0) {
      out.notes.push_back("event time " + std::to_string(h) + " has no support; omitted");
      continue;
    }
    auto it = kept_pos.find(col);
    if (it == kept_pos.end()) {
      out.notes.push_back("lead indicator for event time " + std::to_string(h) +
                          " collinear with fixed effects; omitted");
      continue;
    }
    double se = std::sqrt(reg.vcov.cov(it->second, it->second));
    out.pre.push_back({h, reg.wls.coef(col), se, lead_count[col]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heterogeneity
// ---------------------------------------------------------------------------

HeterogeneityResult heterogeneity(const Panel& panel, const std::string& attribute,
                                  ImputationOptions options) {
  options.cohorts = CohortGranularity::half_year;
  GroupAssignment groups = country_median_split(panel, attribute);
  ImputationPipeline pipeline(panel, options, groups);

  HeterogeneityResult out;
  out.groups = groups;
  out.above = pipeline.estimate(WeightScheme::side(true));
  out.below = pipeline.estimate(WeightScheme::side(false));
  out.contrast = pipeline.estimate(WeightScheme::contrast());
  double z = out.contrast.se > 0 ? out.contrast.tau / out.contrast.se : 0.0;
  out.contrast_p = normal_two_sided_p(z);
  return out;
}

}  // namespace didlab
