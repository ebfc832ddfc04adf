#include "didlab/fe.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

#include "didlab/errors.hpp"

namespace didlab {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Absorber
// ---------------------------------------------------------------------------

Absorber::Absorber(std::vector<Factor> factors, const Eigen::VectorXd& weights)
    : factors_(std::move(factors)), weights_(weights) {
  const Eigen::Index n = weights_.size();
  rows_.resize(factors_.size());
  wsum_.resize(factors_.size());
  swsum_.resize(factors_.size());
  sswsum_.resize(factors_.size());
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    const Factor& fac = factors_[f];
    if (static_cast<Eigen::Index>(fac.level.size()) != n)
      fail_invalid("absorber: factor " + fac.name + " level vector misaligned");
    rows_[f].assign(fac.n_levels, {});
    wsum_[f].assign(fac.n_levels, 0.0);
    swsum_[f].assign(fac.n_levels, 0.0);
    sswsum_[f].assign(fac.n_levels, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      int l = fac.level[i];
      if (l < 0 || l >= fac.n_levels) fail_invalid("absorber: level out of range");
      rows_[f][l].push_back(static_cast<int>(i));
      wsum_[f][l] += weights_(i);
      if (fac.has_slope()) {
        double s = fac.slope_var(i);
        swsum_[f][l] += weights_(i) * s;
        sswsum_[f][l] += weights_(i) * s * s;
      }
    }
    for (int l = 0; l < fac.n_levels; ++l)
      if (wsum_[f][l] <= 0.0)
        fail_invalid("absorber: factor " + fac.name + " level " + std::to_string(l) +
                     " has no positive-weight rows");
  }
}

Absorber::Effects Absorber::demean(Eigen::VectorXd& col, double tol, int max_sweeps) const {
  Effects eff;
  eff.intercept.resize(factors_.size());
  eff.slope.resize(factors_.size());
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    eff.intercept[f] = Eigen::VectorXd::Zero(factors_[f].n_levels);
    if (factors_[f].has_slope()) eff.slope[f] = Eigen::VectorXd::Zero(factors_[f].n_levels);
  }
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_update = 0.0;
    for (std::size_t f = 0; f < factors_.size(); ++f) {
      const Factor& fac = factors_[f];
      for (int l = 0; l < fac.n_levels; ++l) {
        const auto& rows = rows_[f][l];
        double sw = wsum_[f][l];
        double sy = 0.0;
        for (int i : rows) sy += weights_(i) * col(i);
        if (!fac.has_slope()) {
          double m = sy / sw;
          for (int i : rows) col(i) -= m;
          eff.intercept[f](l) += m;
          max_update = std::max(max_update, std::abs(m));
        } else {
          // weighted 2-parameter solve of col ~ a + b * s within the level
          double ss = swsum_[f][l], sss = sswsum_[f][l];
          double sys = 0.0;
          for (int i : rows) sys += weights_(i) * col(i) * fac.slope_var(i);
          double det = sw * sss - ss * ss;
          double a, b;
          if (std::abs(det) <= 1e-12 * std::max(1.0, sw * sss)) {
            // degenerate slope regressor (single period unit): intercept only
            a = sy / sw;
            b = 0.0;
          } else {
            a = (sss * sy - ss * sys) / det;
            b = (sw * sys - ss * sy) / det;
          }
          for (int i : rows) col(i) -= a + b * fac.slope_var(i);
          eff.intercept[f](l) += a;
          eff.slope[f](l) += b;
          max_update = std::max(max_update, std::max(std::abs(a), std::abs(b)));
        }
      }
    }
    eff.sweeps = sweep + 1;
    if (max_update <= tol) {
      eff.converged = true;
      break;
    }
  }
  return eff;
}

void Absorber::demean_matrix(Eigen::MatrixXd& cols, double tol, int max_sweeps) const {
  for (Eigen::Index c = 0; c < cols.cols(); ++c) {
    Eigen::VectorXd col = cols.col(c);
    Effects eff = demean(col, tol, max_sweeps);
    if (!eff.converged) fail_estimation("fixed-effect demeaning did not converge");
    cols.col(c) = col;
  }
}

int Absorber::absorbed_df() const {
  int df = 0;
  for (const auto& fac : factors_) {
    df += fac.n_levels;
    if (fac.has_slope()) df += fac.n_levels;
  }
  if (!factors_.empty()) df -= static_cast<int>(factors_.size()) - 1;
  return df;
}

// ---------------------------------------------------------------------------
// Two-way fit
// ---------------------------------------------------------------------------

namespace {

void check_rows(const FeRows& rows) {
  const Eigen::Index n = rows.y.size();
  if (n == 0) fail_invalid("fixed-effect fit: empty estimation sample");
  if (rows.weight.size() != n || static_cast<Eigen::Index>(rows.unit.size()) != n ||
      static_cast<Eigen::Index>(rows.period.size()) != n)
    fail_invalid("fixed-effect fit: misaligned row arrays");
  if (!rows.y.allFinite()) fail_invalid("fixed-effect fit: non-finite outcome");
  if (rows.weight.minCoeff() < 0) fail_invalid("fixed-effect fit: negative weights");
  if (!rows.group_of_unit.empty() &&
      static_cast<int>(rows.group_of_unit.size()) != rows.n_units)
    fail_invalid("fixed-effect fit: group assignment misaligned");
}

int group_of(const FeRows& rows, int unit) {
  return rows.group_of_unit.empty() ? 0 : rows.group_of_unit[unit];
}

// (group, period) composite level index for the period-side factor.
int gp_level(const FeRows& rows, int unit, int period) {
  return group_of(rows, unit) * rows.n_periods + period;
}

// Builds the unit factor, the (group x period) factor and the optional
// unit-trend slope factor for the given sample.
std::vector<Factor> build_factors(const FeRows& rows, double trend_center) {
  std::vector<Factor> factors(2);
  const Eigen::Index n = rows.y.size();
  factors[0].name = "unit";
  factors[0].n_levels = rows.n_units;
  factors[0].level.resize(n);
  factors[1].name = "group_period";
  factors[1].n_levels = rows.n_groups * rows.n_periods;
  factors[1].level.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    factors[0].level[i] = rows.unit[i];
    factors[1].level[i] = gp_level(rows, rows.unit[i], rows.period[i]);
  }
  if (rows.unit_trends) {
    factors[0].slope_var.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
      factors[0].slope_var(i) = static_cast<double>(rows.period[i]) - trend_center;
  }
  return factors;
}

// Drops factor levels with no rows (periods absent from the sample) by
// remapping to a compact level space; keeps a back-map.
struct CompactFactor {
  Factor factor;
  std::vector<int> original_level;  // compact -> original
};

CompactFactor compact(const Factor& fac) {
  CompactFactor out;
  out.factor = fac;
  std::vector<int> map(fac.n_levels, -1);
  for (int l : fac.level)
    if (map[l] < 0) {
      map[l] = static_cast<int>(out.original_level.size());
      out.original_level.push_back(l);
    }
  out.factor.n_levels = static_cast<int>(out.original_level.size());
  for (auto& l : out.factor.level) l = map[l];
  return out;
}

double weighted_mean_period(const FeRows& rows) {
  double sw = 0.0, sp = 0.0;
  for (Eigen::Index i = 0; i < rows.y.size(); ++i) {
    sw += rows.weight(i);
    sp += rows.weight(i) * rows.period[i];
  }
  return sp / sw;
}

FeFit finalize_fit(const FeRows& rows, const Eigen::VectorXd& alpha_raw,
                   const Eigen::VectorXd& trend_raw, const Eigen::MatrixXd& beta_raw,
                   double trend_center, Eigen::VectorXd residuals, int sweeps,
                   bool converged) {
  FeFit fit;
  fit.n_groups = rows.n_groups;
  fit.group_of_unit = rows.group_of_unit.empty() ? std::vector<int>(rows.n_units, 0)
                                                 : rows.group_of_unit;
  fit.alpha.assign(rows.n_units, kNaN);
  fit.beta = Eigen::MatrixXd::Constant(rows.n_groups, rows.n_periods, kNaN);
  if (rows.unit_trends) fit.unit_trend.assign(rows.n_units, kNaN);
  fit.trend_center = trend_center;
  fit.row_unit = rows.unit;
  fit.row_period = rows.period;
  fit.residuals = std::move(residuals);
  fit.sweeps = sweeps;
  fit.converged = converged;

  std::vector<bool> unit_seen(rows.n_units, false);
  std::vector<std::vector<bool>> gp_seen(rows.n_groups,
                                         std::vector<bool>(rows.n_periods, false));
  for (std::size_t i = 0; i < rows.unit.size(); ++i) {
    unit_seen[rows.unit[i]] = true;
    gp_seen[group_of(rows, rows.unit[i])][rows.period[i]] = true;
  }

  // Per-group normalization. Level: beta = 0 at the earliest sampled period.
  // With unit trends the design carries an extra gauge freedom (all slopes
  // plus delta against period effects minus delta*t), pinned by zeroing beta
  // at the first two sampled periods of each group; units absorb the shift.
  std::vector<double> level(rows.n_groups, 0.0), slope(rows.n_groups, 0.0);
  for (int g = 0; g < rows.n_groups; ++g) {
    int t0 = -1, t1 = -1;
    for (int t = 0; t < rows.n_periods; ++t)
      if (gp_seen[g][t]) {
        if (t0 < 0)
          t0 = t;
        else if (t1 < 0) {
          t1 = t;
          break;
        }
      }
    if (t0 < 0) continue;
    if (rows.unit_trends && t1 >= 0)
      slope[g] = (beta_raw(g, t1) - beta_raw(g, t0)) / static_cast<double>(t1 - t0);
    level[g] = beta_raw(g, t0) - slope[g] * (static_cast<double>(t0) - trend_center);
    for (int t = 0; t < rows.n_periods; ++t)
      if (gp_seen[g][t])
        fit.beta(g, t) = beta_raw(g, t) - level[g] -
                         slope[g] * (static_cast<double>(t) - trend_center);
  }
  for (int u = 0; u < rows.n_units; ++u) {
    if (!unit_seen[u]) continue;
    int g = fit.group_of_unit[u];
    fit.alpha[u] = alpha_raw(u) + level[g];
    if (rows.unit_trends) fit.unit_trend[u] = trend_raw(u) + slope[g];
  }
  fit.normalization = rows.unit_trends
                          ? "per group, beta = 0 at the first two estimation periods; unit "
                            "trends centered at period index " +
                                std::to_string(trend_center)
                          : "per group, beta = 0 at the earliest estimation period";
  return fit;
}

FeFit fit_dense(const FeRows& rows, double tol) {
  const Eigen::Index n = rows.y.size();
  const double trend_center = rows.unit_trends ? weighted_mean_period(rows) : 0.0;

  std::vector<bool> unit_seen(rows.n_units, false);
  std::vector<std::vector<bool>> gp_seen(rows.n_groups,
                                         std::vector<bool>(rows.n_periods, false));
  for (Eigen::Index i = 0; i < n; ++i) {
    unit_seen[rows.unit[i]] = true;
    gp_seen[group_of(rows, rows.unit[i])][rows.period[i]] = true;
  }
  // Column layout: unit dummies, then (group, period) dummies skipping each
  // group's first sampled period (first two with unit trends, which pins the
  // slope gauge shared between trends and period effects), then trend columns.
  const int n_skip = rows.unit_trends ? 2 : 1;
  std::vector<std::vector<bool>> skip(rows.n_groups,
                                      std::vector<bool>(rows.n_periods, false));
  for (int g = 0; g < rows.n_groups; ++g) {
    int skipped = 0;
    for (int t = 0; t < rows.n_periods && skipped < n_skip; ++t)
      if (gp_seen[g][t]) {
        skip[g][t] = true;
        ++skipped;
      }
  }
  std::vector<int> unit_col(rows.n_units, -1);
  int ncol = 0;
  for (int u = 0; u < rows.n_units; ++u)
    if (unit_seen[u]) unit_col[u] = ncol++;
  std::vector<std::vector<int>> gp_col(rows.n_groups, std::vector<int>(rows.n_periods, -1));
  for (int g = 0; g < rows.n_groups; ++g)
    for (int t = 0; t < rows.n_periods; ++t)
      if (gp_seen[g][t] && !skip[g][t]) gp_col[g][t] = ncol++;
  std::vector<int> trend_col(rows.n_units, -1);
  if (rows.unit_trends)
    for (int u = 0; u < rows.n_units; ++u)
      if (unit_seen[u]) trend_col[u] = ncol++;

  if (ncol > 2000)
    fail_invalid("dense fixed-effect path limited to 2000 columns; use demeaning");

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, ncol);
  for (Eigen::Index i = 0; i < n; ++i) {
    int u = rows.unit[i], t = rows.period[i], g = group_of(rows, u);
    X(i, unit_col[u]) = 1.0;
    if (gp_col[g][t] >= 0) X(i, gp_col[g][t]) = 1.0;
    if (rows.unit_trends) X(i, trend_col[u]) = static_cast<double>(t) - trend_center;
  }
  WlsFit wls = solve_wls(X, rows.y, rows.weight);

  Eigen::VectorXd alpha_raw = Eigen::VectorXd::Zero(rows.n_units);
  Eigen::VectorXd trend_raw = Eigen::VectorXd::Zero(rows.n_units);
  Eigen::MatrixXd beta_raw = Eigen::MatrixXd::Zero(rows.n_groups, rows.n_periods);
  for (int u = 0; u < rows.n_units; ++u) {
    if (unit_col[u] >= 0 && !std::isnan(wls.coef(unit_col[u])))
      alpha_raw(u) = wls.coef(unit_col[u]);
    if (rows.unit_trends && trend_col[u] >= 0 && !std::isnan(wls.coef(trend_col[u])))
      trend_raw(u) = wls.coef(trend_col[u]);
  }
  for (int g = 0; g < rows.n_groups; ++g)
    for (int t = 0; t < rows.n_periods; ++t)
      if (gp_col[g][t] >= 0 && !std::isnan(wls.coef(gp_col[g][t])))
        beta_raw(g, t) = wls.coef(gp_col[g][t]);

  (void)tol;
  return finalize_fit(rows, alpha_raw, trend_raw, beta_raw, trend_center,
                      std::move(wls.residuals), 1, true);
}

FeFit fit_demean(const FeRows& rows, double tol, int max_sweeps) {
  const double trend_center = rows.unit_trends ? weighted_mean_period(rows) : 0.0;
  std::vector<Factor> factors = build_factors(rows, trend_center);
  CompactFactor gp = compact(factors[1]);
  CompactFactor un = compact(factors[0]);
  Absorber absorber({un.factor, gp.factor}, rows.weight);

  Eigen::VectorXd col = rows.y;
  Absorber::Effects eff = absorber.demean(col, tol, max_sweeps);
  if (!eff.converged)
    fail_estimation("fixed-effect demeaning did not converge in " +
                    std::to_string(max_sweeps) + " sweeps");

  Eigen::VectorXd alpha_raw = Eigen::VectorXd::Zero(rows.n_units);
  Eigen::VectorXd trend_raw = Eigen::VectorXd::Zero(rows.n_units);
  Eigen::MatrixXd beta_raw = Eigen::MatrixXd::Zero(rows.n_groups, rows.n_periods);
  for (int l = 0; l < un.factor.n_levels; ++l) {
    alpha_raw(un.original_level[l]) = eff.intercept[0](l);
    if (rows.unit_trends) trend_raw(un.original_level[l]) = eff.slope[0](l);
  }
  for (int l = 0; l < gp.factor.n_levels; ++l) {
    int orig = gp.original_level[l];
    beta_raw(orig / rows.n_periods, orig % rows.n_periods) = eff.intercept[1](l);
  }
  return finalize_fit(rows, alpha_raw, trend_raw, beta_raw, trend_center, std::move(col),
                      eff.sweeps, eff.converged);
}

}  // namespace

bool FeFit::has_period(int group, int period) const {
  return group >= 0 && group < beta.rows() && period >= 0 && period < beta.cols() &&
         !std::isnan(beta(group, period));
}

double FeFit::predict(int unit, int period) const {
  if (unit < 0 || unit >= static_cast<int>(alpha.size())) return kNaN;
  int g = group_of_unit[unit];
  double value = alpha[unit] + beta(g, period);
  if (!unit_trend.empty())
    value += unit_trend[unit] * (static_cast<double>(period) - trend_center);
  return value;
}

std::vector<std::vector<int>> disconnected_components(const FeRows& rows) {
  // Union-find over unit nodes [0, n_units) and (group, period) nodes.
  int n_gp = rows.n_groups * rows.n_periods;
  std::vector<int> parent(rows.n_units + n_gp);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<int> rank(parent.size(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank[a] < rank[b]) std::swap(a, b);
    parent[b] = a;
    if (rank[a] == rank[b]) ++rank[a];
  };
  for (std::size_t i = 0; i < rows.unit.size(); ++i)
    unite(rows.unit[i], rows.n_units + gp_level(rows, rows.unit[i], rows.period[i]));

  // Group units by component; one component per group is expected.
  std::vector<bool> unit_seen(rows.n_units, false);
  for (int u : rows.unit) unit_seen[u] = true;
  std::map<std::pair<int, int>, std::vector<int>> by_group_comp;
  for (int u = 0; u < rows.n_units; ++u) {
    if (!unit_seen[u]) continue;
    by_group_comp[{group_of(rows, u), find(u)}].push_back(u);
  }
  std::map<int, int> comps_per_group;
  for (const auto& [key, units] : by_group_comp) comps_per_group[key.first] += 1;

  std::vector<std::vector<int>> extra;
  for (const auto& [key, units] : by_group_comp) {
    if (comps_per_group[key.first] <= 1) continue;
    extra.push_back(units);
  }
  // Report all components only for groups that are split.
  return extra;
}

FeFit fit_two_way_fe(const FeRows& rows, FeMethod method, double tol, int max_sweeps) {
  check_rows(rows);
  FeRows r = rows;
  if (r.n_groups < 1) r.n_groups = 1;

  auto components = disconnected_components(r);
  if (!components.empty()) {
    std::string msg = "disconnected unit/period graph; components:";
    for (const auto& comp : components) {
      msg += " {";
      for (std::size_t i = 0; i < comp.size() && i < 5; ++i)
        msg += (i ? "," : "") + std::to_string(comp[i]);
      if (comp.size() > 5) msg += ",...";
      msg += "}";
    }
    fail_estimation(msg);
  }

  if (method == FeMethod::dense) return fit_dense(r, tol);
  return fit_demean(r, tol, max_sweeps);
}

// ---------------------------------------------------------------------------
// Partialled-out regression
// ---------------------------------------------------------------------------

WithinFitResult within_wls(const FeRows& rows, const Eigen::MatrixXd& X,
                           const std::vector<std::string>& names,
                           const std::vector<Factor>& extra_factors, bool hc1, double tol,
                           int max_sweeps) {
  check_rows(rows);
  FeRows r = rows;
  if (r.n_groups < 1) r.n_groups = 1;
  const double trend_center = r.unit_trends ? weighted_mean_period(r) : 0.0;
  std::vector<Factor> factors = build_factors(r, trend_center);
  std::vector<Factor> all;
  all.push_back(compact(factors[0]).factor);
  all.push_back(compact(factors[1]).factor);
  for (const auto& f : extra_factors) all.push_back(compact(f).factor);
  Absorber absorber(all, r.weight);

  WithinFitResult out;
  out.df_absorbed = absorber.absorbed_df();
  out.y_demeaned = r.y;
  out.x_demeaned = X;
  {
    Eigen::VectorXd col = out.y_demeaned;
    auto eff = absorber.demean(col, tol, max_sweeps);
    if (!eff.converged) fail_estimation("fixed-effect demeaning did not converge");
    out.y_demeaned = col;
  }
  absorber.demean_matrix(out.x_demeaned, tol, max_sweeps);

  out.wls = solve_wls(out.x_demeaned, out.y_demeaned, r.weight, names);
  if (out.wls.kept.empty())
    fail_estimation("no regressor variation remains after fixed-effect absorption");
  try {
    if (hc1)
      out.vcov = hc1_vcov(out.x_demeaned, out.wls.residuals, r.weight, out.wls.kept,
                          out.df_absorbed);
    else
      out.vcov = cluster_robust_vcov(out.x_demeaned, out.wls.residuals, r.weight, r.unit,
                                     out.wls.kept, out.df_absorbed);
  } catch (const Error&) {
    // saturated fit (no residual degrees of freedom) or a single cluster:
    // coefficients remain valid, standard errors do not exist
    const int k = static_cast<int>(out.wls.kept.size());
    out.vcov.kept = out.wls.kept;
    out.vcov.cov = Eigen::MatrixXd::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

WithinFitResult within_wls(const FeRows& rows, const Eigen::MatrixXd& X,
                           const std::vector<std::string>& names, bool hc1, double tol,
                           int max_sweeps) {
  return within_wls(rows, X, names, {}, hc1, tol, max_sweeps);
}

}  // namespace didlab
