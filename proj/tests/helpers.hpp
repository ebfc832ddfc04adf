#pragma once

// Shared test fixtures and independent oracles. The oracles deliberately
// avoid the library's solvers: dense normal equations via Eigen
// factorizations only, so agreement checks are meaningful.

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "didlab/panel.hpp"

namespace testutil {

// Small builder for hand-written panels.
struct CellSpec {
  std::string unit;
  std::string period;
  double accidents;
};

inline didlab::Panel make_panel(const std::vector<std::pair<std::string, std::string>>& units,
                                const std::vector<std::string>& periods,
                                const std::vector<CellSpec>& cells,
                                const std::map<std::string, std::string>& launches = {}) {
  didlab::Panel panel;
  panel.frequency = didlab::PeriodId::parse(periods.front()).is_monthly()
                        ? didlab::Frequency::monthly
                        : didlab::Frequency::annual;
  for (const auto& p : periods) panel.periods.push_back(didlab::PeriodId::parse(p));
  for (const auto& [id, country] : units) {
    didlab::UnitMeta unit;
    unit.unit_id = id;
    unit.country = country;
    unit.population = 150000;
    auto it = launches.find(id);
    if (it != launches.end()) unit.launch = didlab::PeriodId::parse(it->second);
    panel.units.push_back(unit);
  }
  panel.cells.assign(panel.units.size() * panel.periods.size(), std::nullopt);
  for (const auto& cell : cells) {
    int u = panel.unit_index(cell.unit);
    int t = panel.period_index(didlab::PeriodId::parse(cell.period));
    didlab::OutcomeCell oc;
    oc.accidents = cell.accidents;
    panel.cell(u, t) = oc;
  }
  panel.zero_policy_applied = true;
  return panel;
}

// Random small panel with staggered launches; continuous outcomes so log is
// always defined.
inline didlab::Panel random_panel(std::mt19937_64& rng, int n_units, int n_periods,
                                  double sigma = 0.2) {
  std::normal_distribution<double> normal(0.0, 1.0);
  didlab::Panel panel;
  panel.frequency = didlab::Frequency::monthly;
  for (int t = 0; t < n_periods; ++t)
    panel.periods.push_back(didlab::PeriodId{2019, 1}.plus_months(t));
  for (int u = 0; u < n_units; ++u) {
    didlab::UnitMeta unit;
    unit.unit_id = "u" + std::to_string(u);
    unit.country = u % 2 == 0 ? "AA" : "BB";
    unit.population = 100000 + static_cast<long long>(u) * 1000;
    unit.attributes["x"] = normal(rng);
    // launch somewhere in the middle; a third of units yet-to-be-treated
    int launch = 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(n_periods));
    if (launch < n_periods) {
      unit.launch = panel.periods[static_cast<std::size_t>(launch)];
      unit.firm_launches.emplace_back("f" + std::to_string(u % 3 + 1), *unit.launch);
    }
    panel.units.push_back(unit);
  }
  panel.cells.assign(static_cast<std::size_t>(n_units) * n_periods, std::nullopt);
  for (int u = 0; u < n_units; ++u) {
    double alpha = 3.0 + 0.5 * normal(rng);
    for (int t = 0; t < n_periods; ++t) {
      double beta = 0.3 * std::sin(0.5 * t);
      double tau = panel.treated(u, t) ? 0.1 : 0.0;
      didlab::OutcomeCell cell;
      cell.accidents = std::exp(alpha + beta + tau + sigma * normal(rng));
      panel.cell(u, t) = cell;
    }
  }
  panel.zero_policy_applied = true;
  return panel;
}

// Independent imputation oracle: regress untreated log outcomes on explicit
// unit and period dummies (first period dropped), solved with Eigen's
// ColPivHouseholderQR, then impute treated cells and average with weights.
struct DenseOracle {
  Eigen::VectorXd alpha;  // per unit (NaN if absent)
  Eigen::VectorXd beta;   // per period (NaN if absent); first sampled period = 0
  std::map<std::pair<int, int>, double> tau;  // treated cell effects
};

inline DenseOracle dense_imputation_oracle(const didlab::Panel& panel) {
  const int n_units = panel.n_units();
  const int n_periods = panel.n_periods();
  std::vector<std::pair<int, int>> rows;
  std::vector<double> y;
  for (int u = 0; u < n_units; ++u) {
    if (!panel.units[u].launch.has_value()) continue;  // match default sample rule
    for (int t = 0; t < n_periods; ++t) {
      const auto& cell = panel.cell(u, t);
      if (!cell.has_value() || panel.treated(u, t)) continue;
      rows.emplace_back(u, t);
      y.push_back(std::log(cell->accidents));
    }
  }
  std::vector<char> unit_seen(n_units, 0), period_seen(n_periods, 0);
  for (auto [u, t] : rows) {
    unit_seen[u] = 1;
    period_seen[t] = 1;
  }
  std::vector<int> ucol(n_units, -1), pcol(n_periods, -1);
  int k = 0;
  for (int u = 0; u < n_units; ++u)
    if (unit_seen[u]) ucol[u] = k++;
  bool first = true;
  for (int t = 0; t < n_periods; ++t) {
    if (!period_seen[t]) continue;
    if (first) {
      first = false;
      continue;
    }
    pcol[t] = k++;
  }
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), k);
  Eigen::VectorXd yv(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto [u, t] = rows[i];
    X(static_cast<Eigen::Index>(i), ucol[u]) = 1.0;
    if (pcol[t] >= 0) X(static_cast<Eigen::Index>(i), pcol[t]) = 1.0;
    yv(static_cast<Eigen::Index>(i)) = y[i];
  }
  Eigen::VectorXd coef = X.colPivHouseholderQr().solve(yv);

  DenseOracle oracle;
  oracle.alpha = Eigen::VectorXd::Constant(n_units, std::nan(""));
  oracle.beta = Eigen::VectorXd::Constant(n_periods, std::nan(""));
  for (int u = 0; u < n_units; ++u)
    if (ucol[u] >= 0) oracle.alpha(u) = coef(ucol[u]);
  bool first_out = true;
  for (int t = 0; t < n_periods; ++t) {
    if (!period_seen[t]) continue;
    if (first_out) {
      oracle.beta(t) = 0.0;
      first_out = false;
    } else {
      oracle.beta(t) = coef(pcol[t]);
    }
  }
  for (int u = 0; u < n_units; ++u) {
    if (!panel.units[u].launch.has_value() || ucol[u] < 0) continue;
    for (int t = 0; t < n_periods; ++t) {
      const auto& cell = panel.cell(u, t);
      if (!cell.has_value() || !panel.treated(u, t)) continue;
      if (std::isnan(oracle.beta(t))) continue;
      oracle.tau[{u, t}] = std::log(cell->accidents) - oracle.alpha(u) - oracle.beta(t);
    }
  }
  return oracle;
}

inline double oracle_all_post_average(const DenseOracle& oracle) {
  double sum = 0.0;
  for (const auto& [cell, tau] : oracle.tau) sum += tau;
  return sum / static_cast<double>(oracle.tau.size());
}

}  // namespace testutil
