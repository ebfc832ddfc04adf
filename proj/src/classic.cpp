#include "didlab/classic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "didlab/errors.hpp"
#include "didlab/glm.hpp"

namespace didlab {

namespace {

constexpr double kZ95 = 1.959964;

EffectEstimate make_estimate(const std::string& name, double tau, double se,
                             long n_treated, long n_total, int n_units,
                             bool transform = true) {
  EffectEstimate out;
  out.estimand = name;
  out.tau = tau;
  out.se = se;
  out.ci_lo = tau - kZ95 * se;
  out.ci_hi = tau + kZ95 * se;
  out.n_treated_cells = n_treated;
  out.n_total_cells = n_total;
  out.n_units = n_units;
  out.transformed = transform;
  if (transform) {
    auto [pct, pct_se] = to_semi_elasticity(tau, se);
    out.semi_pct = pct;
    out.semi_se_pct = pct_se;
  } else {
    out.semi_pct = tau;
    out.semi_se_pct = se;
  }
  return out;
}

// Estimation rows over non-missing cells of the sampled units.
struct CellSample {
  FeRows rows;
  std::vector<std::pair<int, int>> ids;  // (unit, period) per row
  Eigen::VectorXd treatment;             // d_it
  long n_treated = 0;
};

CellSample build_cell_sample(const Panel& panel, OutcomeKind outcome, bool include_never,
                             bool counts_outcome = false) {
  CellSample out;
  out.rows.n_units = panel.n_units();
  out.rows.n_periods = panel.n_periods();
  std::vector<double> y;
  std::vector<double> values;
  if (!counts_outcome) values = outcome_values(panel, outcome);

  for (int u = 0; u < panel.n_units(); ++u) {
    if (!panel.units[u].launch.has_value() && !include_never) continue;
    for (int t = 0; t < panel.n_periods(); ++t) {
      double value;
      if (counts_outcome) {
        const auto& cell = panel.cell(u, t);
        if (!cell.has_value()) continue;
        value = cell->accidents;
      } else {
        value = values[static_cast<std::size_t>(u) * panel.n_periods() + t];
        if (std::isnan(value)) continue;
      }
      out.rows.unit.push_back(u);
      out.rows.period.push_back(t);
      out.ids.emplace_back(u, t);
      y.push_back(value);
    }
  }
  if (y.empty()) fail_estimation("no usable observations in the panel");
  out.rows.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  out.rows.weight = Eigen::VectorXd::Ones(out.rows.y.size());
  out.treatment.resize(out.rows.y.size());
  for (Eigen::Index i = 0; i < out.treatment.size(); ++i) {
    bool d = panel.treated(out.rows.unit[i], out.rows.period[i]);
    out.treatment(i) = d ? 1.0 : 0.0;
    if (d) ++out.n_treated;
  }
  return out;
}

int count_units(const CellSample& sample) {
  std::set<int> units(sample.rows.unit.begin(), sample.rows.unit.end());
  return static_cast<int>(units.size());
}

// country x year factor levels; returns the factor plus the set of levels in
// which every observation is treated.
struct CountryYearFactor {
  Factor factor;
  std::vector<std::string> fully_treated_labels;
  std::vector<char> row_fully_treated;
};

CountryYearFactor build_country_year(const Panel& panel, const CellSample& sample) {
  std::map<std::string, int> country_id;
  for (const auto& unit : panel.units)
    country_id.emplace(unit.country, static_cast<int>(country_id.size()));
  int min_year = panel.periods.front().year;
  int n_years = panel.periods.back().year - min_year + 1;

  CountryYearFactor out;
  out.factor.name = "country_year";
  out.factor.n_levels = static_cast<int>(country_id.size()) * n_years;
  out.factor.level.resize(sample.ids.size());
  std::map<int, std::pair<long, long>> level_counts;  // level -> (treated, total)
  for (std::size_t i = 0; i < sample.ids.size(); ++i) {
    auto [u, t] = sample.ids[i];
    int level = country_id[panel.units[u].country] * n_years + (panel.periods[t].year - min_year);
    out.factor.level[i] = level;
    auto& counts = level_counts[level];
    counts.second += 1;
    if (sample.treatment(static_cast<Eigen::Index>(i)) > 0.5) counts.first += 1;
  }
  out.row_fully_treated.assign(sample.ids.size(), 0);
  std::set<int> fully;
  for (const auto& [level, counts] : level_counts)
    if (counts.first == counts.second) fully.insert(level);
  for (std::size_t i = 0; i < sample.ids.size(); ++i)
    if (fully.count(out.factor.level[i])) out.row_fully_treated[i] = 1;
  for (int level : fully) {
    int c = level / n_years, y = level % n_years;
    std::string country;
    for (const auto& [name, id] : country_id)
      if (id == c) country = name;
    out.fully_treated_labels.push_back(country + "-" + std::to_string(min_year + y));
  }
  return out;
}

CellSample drop_rows(const CellSample& sample, const std::vector<char>& drop) {
  CellSample out;
  out.rows.n_units = sample.rows.n_units;
  out.rows.n_periods = sample.rows.n_periods;
  std::vector<double> y, d;
  for (std::size_t i = 0; i < sample.ids.size(); ++i) {
    if (drop[i]) continue;
    out.rows.unit.push_back(sample.rows.unit[i]);
    out.rows.period.push_back(sample.rows.period[i]);
    out.ids.push_back(sample.ids[i]);
    y.push_back(sample.rows.y(static_cast<Eigen::Index>(i)));
    d.push_back(sample.treatment(static_cast<Eigen::Index>(i)));
  }
  if (y.empty()) fail_estimation("all observations dropped");
  out.rows.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  out.rows.weight = Eigen::VectorXd::Ones(out.rows.y.size());
  out.treatment = Eigen::Map<Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
  out.n_treated = static_cast<long>(out.treatment.sum());
  return out;
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kRadius = 6371.0;
  constexpr double kDeg = 3.14159265358979323846 / 180.0;
  double dlat = (lat2 - lat1) * kDeg;
  double dlon = (lon2 - lon1) * kDeg;
  double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
             std::cos(lat1 * kDeg) * std::cos(lat2 * kDeg) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kRadius * std::asin(std::min(1.0, std::sqrt(a)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Annual 2x2 DD
// ---------------------------------------------------------------------------

EffectEstimate annual_dd(const AnnualPanel& annual) {
  const Panel& panel = annual.panel;
  if (panel.n_periods() != 2) fail_invalid("annual_dd expects a two-period panel");
  bool any_treat = false, any_control = false;
  for (bool g : annual.treated_group) (g ? any_treat : any_control) = true;
  if (!any_treat || !any_control) fail_estimation("annual_dd: empty group");

  std::vector<double> values = outcome_values(panel, OutcomeKind::log_accidents);
  FeRows rows;
  rows.n_units = panel.n_units();
  rows.n_periods = 2;
  std::vector<double> y, d;
  for (int u = 0; u < panel.n_units(); ++u)
    for (int t = 0; t < 2; ++t) {
      double value = values[static_cast<std::size_t>(u) * 2 + t];
      if (std::isnan(value)) continue;
      rows.unit.push_back(u);
      rows.period.push_back(t);
      y.push_back(value);
      d.push_back(annual.treated_group[u] && t == 1 ? 1.0 : 0.0);
    }
  rows.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  rows.weight = Eigen::VectorXd::Ones(rows.y.size());
  Eigen::MatrixXd X = Eigen::Map<Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));

  WithinFitResult fit = within_wls(rows, X, {"treatment"});
  double tau = fit.wls.coef(0);
  double se = std::sqrt(fit.vcov.cov(0, 0));
  long n_treated = static_cast<long>(std::accumulate(d.begin(), d.end(), 0.0));
  return make_estimate("annual_dd", tau, se, n_treated, static_cast<long>(y.size()),
                       panel.n_units());
}

// ---------------------------------------------------------------------------
// Pooled TWFE
// ---------------------------------------------------------------------------

TwfeResult twfe_dd(const Panel& panel, const TwfeOptions& options) {
  CellSample sample = build_cell_sample(panel, options.outcome, options.include_never_treated,
                                        options.ppml);
  TwfeResult out;

  std::vector<Factor> extra;
  if (options.extra_fe == ExtraFe::country_year) {
    CountryYearFactor cy = build_country_year(panel, sample);
    bool any_drop = std::find(cy.row_fully_treated.begin(), cy.row_fully_treated.end(), 1) !=
                    cy.row_fully_treated.end();
    if (any_drop) {
      out.dropped_observations =
          std::count(cy.row_fully_treated.begin(), cy.row_fully_treated.end(), 1);
      out.dropped_groups = cy.fully_treated_labels;
      sample = drop_rows(sample, cy.row_fully_treated);
      cy = build_country_year(panel, sample);
    }
    extra.push_back(cy.factor);
  }

  std::string name = options.ppml ? "twfe_ppml" : "twfe_ols";
  if (options.extra_fe == ExtraFe::country_year) name += "_country_year";

  if (options.ppml) {
    PpmlResult fit = ppml_fit(sample.rows, sample.treatment, {"treatment"}, extra);
    out.estimate = make_estimate(name, fit.coef(0), std::sqrt(fit.vcov.cov(0, 0)),
                                 sample.n_treated, static_cast<long>(sample.ids.size()),
                                 count_units(sample));
    return out;
  }
  WithinFitResult fit = within_wls(sample.rows, sample.treatment, {"treatment"}, extra,
                                   /*hc1=*/false);
  out.estimate = make_estimate(name, fit.wls.coef(0), std::sqrt(fit.vcov.cov(0, 0)),
                               sample.n_treated, static_cast<long>(sample.ids.size()),
                               count_units(sample));
  return out;
}

// ---------------------------------------------------------------------------
// Interaction instruments and IV
// ---------------------------------------------------------------------------

InstrumentSet build_instruments(const Panel& panel, const IvSpec& spec,
                                bool include_never_treated) {
  CellSample sample = build_cell_sample(panel, OutcomeKind::log_accidents,
                                        include_never_treated);
  // Base characteristics, demeaned at the country level over sampled units.
  std::vector<std::string> base_names;
  if (spec.use_population) base_names.push_back("log_population");
  for (const auto& a : spec.attributes) base_names.push_back(a);
  if (base_names.empty()) fail_invalid("build_instruments: no base characteristics");

  std::set<int> sample_units(sample.rows.unit.begin(), sample.rows.unit.end());
  std::map<std::string, std::vector<double>> base;  // name -> per unit (NaN outside sample)
  for (const auto& name : base_names)
    base[name].assign(panel.units.size(), std::nan(""));
  for (int u : sample_units) {
    const UnitMeta& unit = panel.units[u];
    if (spec.use_population) base["log_population"][u] = std::log(static_cast<double>(unit.population));
    for (const auto& a : spec.attributes) {
      auto it = unit.attributes.find(a);
      if (it == unit.attributes.end())
        fail_invalid("build_instruments: unit " + unit.unit_id + " missing attribute " + a);
      base[a][u] = it->second;
    }
  }
  // country demeaning
  for (auto& [name, values] : base) {
    std::map<std::string, std::pair<double, int>> sums;
    for (int u : sample_units) {
      auto& s = sums[panel.units[u].country];
      s.first += values[u];
      s.second += 1;
    }
    for (int u : sample_units) {
      const auto& s = sums[panel.units[u].country];
      values[u] -= s.first / s.second;
    }
  }

  // National rollout drivers per (unit, period), excluding the unit itself.
  // any_national_launch: an indicator that some other sampled city in the
  // country is treated; national_firm_count: distinct firms with a launch in
  // some other sampled city of the country.
  const int T = panel.n_periods();
  std::vector<double> driver(panel.units.size() * static_cast<std::size_t>(T), 0.0);
  std::map<std::string, std::vector<int>> by_country;
  for (int u : sample_units) by_country[panel.units[u].country].push_back(u);
  for (const auto& [country, members] : by_country) {
    for (int u : members) {
      if (spec.driver == IvTimeDriver::any_national_launch) {
        for (int t = 0; t < T; ++t) {
          bool any = false;
          for (int j : members) {
            if (j == u) continue;
            if (panel.treated(j, t)) {
              any = true;
              break;
            }
          }
          driver[static_cast<std::size_t>(u) * T + t] = any ? 1.0 : 0.0;
        }
      } else {
        std::map<std::string, int> first_launch;  // firm -> earliest period index
        for (int j : members) {
          if (j == u) continue;
          for (const auto& [firm, period] : panel.units[j].firm_launches) {
            int t = 0;
            while (t < T && panel.periods[t] < period) ++t;
            if (t >= T) continue;  // launch after the panel window
            auto it = first_launch.find(firm);
            if (it == first_launch.end() || t < it->second) first_launch[firm] = t;
          }
        }
        std::vector<int> active(T, 0);
        for (const auto& [firm, t0] : first_launch)
          for (int t = t0; t < T; ++t) ++active[t];
        for (int t = 0; t < T; ++t)
          driver[static_cast<std::size_t>(u) * T + t] = active[t];
      }
    }
  }

  InstrumentSet out;
  out.rows = sample.ids;
  out.X.resize(static_cast<Eigen::Index>(sample.ids.size()),
               static_cast<Eigen::Index>(base_names.size()));
  for (const auto& name : base_names) out.names.push_back("z_" + name);
  for (std::size_t i = 0; i < sample.ids.size(); ++i) {
    auto [u, t] = sample.ids[i];
    double drv = driver[static_cast<std::size_t>(u) * T + t];
    for (std::size_t j = 0; j < base_names.size(); ++j)
      out.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          base[base_names[j]][u] * drv;
  }
  return out;
}

IvResult iv_dd(const Panel& panel, const IvSpec& spec, ExtraFe extra_fe, IvMargin margin) {
  CellSample sample = build_cell_sample(panel, OutcomeKind::log_accidents, false);
  InstrumentSet instruments = build_instruments(panel, spec, false);
  if (instruments.rows.size() != sample.ids.size())
    fail_invalid("iv_dd: instrument rows misaligned with the estimation sample");

  Eigen::VectorXd endog = sample.treatment;
  if (margin == IvMargin::firm_count) {
    for (std::size_t i = 0; i < sample.ids.size(); ++i) {
      auto [u, t] = sample.ids[i];
      int count = 0;
      for (const auto& [firm, period] : panel.units[u].firm_launches)
        if (period <= panel.periods[t]) ++count;
      endog(static_cast<Eigen::Index>(i)) = count;
    }
  }

  std::vector<Factor> extra;
  std::vector<std::string> dropped;
  long n_dropped = 0;
  if (extra_fe == ExtraFe::country_year) {
    CountryYearFactor cy = build_country_year(panel, sample);
    bool any_drop = std::find(cy.row_fully_treated.begin(), cy.row_fully_treated.end(), 1) !=
                    cy.row_fully_treated.end();
    if (any_drop) {
      n_dropped = std::count(cy.row_fully_treated.begin(), cy.row_fully_treated.end(), 1);
      dropped = cy.fully_treated_labels;
      // keep rows aligned with instruments: drop in both
      std::vector<char> keep = cy.row_fully_treated;
      CellSample reduced = drop_rows(sample, keep);
      Eigen::MatrixXd Z(reduced.ids.size(), instruments.X.cols());
      Eigen::VectorXd e(reduced.ids.size());
      Eigen::Index r = 0;
      for (std::size_t i = 0; i < sample.ids.size(); ++i) {
        if (keep[i]) continue;
        Z.row(r) = instruments.X.row(static_cast<Eigen::Index>(i));
        e(r) = endog(static_cast<Eigen::Index>(i));
        ++r;
      }
      sample = std::move(reduced);
      instruments.X = std::move(Z);
      instruments.rows = sample.ids;
      endog = std::move(e);
    }
    CountryYearFactor cy2 = build_country_year(panel, sample);
    extra.push_back(cy2.factor);
  }

  TslsResult tsls = tsls_fit(sample.rows, endog, instruments.X, instruments.names, extra);
  IvResult out;
  std::string name = margin == IvMargin::binary ? "iv_dd" : "iv_dd_firm_count";
  if (extra_fe == ExtraFe::country_year) name += "_country_year";
  out.estimate = make_estimate(name, tsls.estimate, tsls.se, sample.n_treated,
                               static_cast<long>(sample.ids.size()), count_units(sample));
  out.first_stage_F = tsls.first_stage_F;
  if (tsls.first_stage_F < 10.0)
    out.warnings.push_back("weak instruments: first-stage F = " +
                           std::to_string(tsls.first_stage_F));
  if (n_dropped > 0)
    out.warnings.push_back("dropped " + std::to_string(n_dropped) +
                           " observations in fully treated country-years");
  (void)dropped;
  return out;
}

// ---------------------------------------------------------------------------
// Launch-timing diagnostics
// ---------------------------------------------------------------------------

Table launch_timing_regression(const Panel& panel,
                               const std::vector<std::string>& attributes) {
  std::vector<int> sample;
  for (int u = 0; u < panel.n_units(); ++u)
    if (panel.units[u].launch.has_value()) sample.push_back(u);
  if (sample.empty()) fail_estimation("launch_timing_regression: no treated units");

  std::vector<std::string> attrs = attributes;
  if (attrs.empty())
    for (const auto& [name, value] : panel.units[sample.front()].attributes)
      attrs.push_back(name);

  const long origin = panel.periods.front().month_index();
  Eigen::VectorXd y(static_cast<Eigen::Index>(sample.size()));
  for (std::size_t i = 0; i < sample.size(); ++i)
    y(static_cast<Eigen::Index>(i)) =
        static_cast<double>(panel.units[sample[i]].launch->month_index() - origin);

  std::map<std::string, int> countries;
  for (int u : sample) countries.emplace(panel.units[u].country, static_cast<int>(countries.size()));

  const int k = 1 + static_cast<int>(attrs.size()) + static_cast<int>(countries.size());
  if (static_cast<int>(sample.size()) <= k)
    fail_estimation("launch_timing_regression: fewer units than regressors");

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sample.size()), k);
  std::vector<std::string> names;
  names.push_back("population_100k");
  for (std::size_t i = 0; i < sample.size(); ++i)
    X(static_cast<Eigen::Index>(i), 0) = panel.units[sample[i]].population / 100000.0;

  // attributes standardized to mean 0, variance 1 over the sample
  for (std::size_t a = 0; a < attrs.size(); ++a) {
    names.push_back(attrs[a]);
    Eigen::VectorXd v(static_cast<Eigen::Index>(sample.size()));
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const auto& unit = panel.units[sample[i]];
      auto it = unit.attributes.find(attrs[a]);
      if (it == unit.attributes.end())
        fail_invalid("launch_timing_regression: unit " + unit.unit_id + " missing attribute " +
                     attrs[a]);
      v(static_cast<Eigen::Index>(i)) = it->second;
    }
    double mean = v.mean();
    double sd = std::sqrt((v.array() - mean).square().sum() / (v.size() - 1));
    if (sd <= 0) fail_invalid("launch_timing_regression: attribute " + attrs[a] + " is constant");
    X.col(1 + static_cast<Eigen::Index>(a)) = (v.array() - mean) / sd;
  }
  for (const auto& [country, id] : countries) names.push_back("country_" + country);
  for (std::size_t i = 0; i < sample.size(); ++i)
    X(static_cast<Eigen::Index>(i),
      1 + static_cast<Eigen::Index>(attrs.size()) + countries[panel.units[sample[i]].country]) = 1.0;

  Eigen::VectorXd w = Eigen::VectorXd::Ones(y.size());
  WlsFit fit = solve_wls(X, y, w, names);
  VcovResult vcov = hc1_vcov(X, fit.residuals, w, fit.kept);

  Table out({"term", "coef", "se", "t", "n_units"});
  std::map<int, int> pos;
  for (std::size_t j = 0; j < fit.kept.size(); ++j) pos[fit.kept[j]] = static_cast<int>(j);
  for (int j = 0; j < static_cast<int>(names.size()); ++j) {
    auto it = pos.find(j);
    if (it == pos.end()) continue;
    double coef = fit.coef(j);
    double se = std::sqrt(vcov.cov(it->second, it->second));
    out.add_row({names[j], coef, se, se > 0 ? coef / se : 0.0,
                 static_cast<double>(sample.size())});
  }
  return out;
}

Table neighbor_launch_regression(const Panel& panel,
                                 const NeighborRegressionOptions& options) {
  if (panel.frequency != Frequency::monthly)
    fail_invalid("neighbor_launch_regression requires a monthly panel");
  std::vector<int> sample;
  for (int u = 0; u < panel.n_units(); ++u)
    if (panel.units[u].launch.has_value()) sample.push_back(u);
  if (sample.size() < 2) fail_estimation("neighbor_launch_regression: need at least 2 treated units");
  for (int u : sample)
    if (!panel.units[u].latitude || !panel.units[u].longitude)
      fail_invalid("neighbor_launch_regression: unit " + panel.units[u].unit_id +
                   " has no coordinates");

  // nearest ever-treated sample city
  std::map<int, int> neighbor;
  for (int u : sample) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (int j : sample) {
      if (j == u) continue;
      double d = haversine_km(*panel.units[u].latitude, *panel.units[u].longitude,
                              *panel.units[j].latitude, *panel.units[j].longitude);
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    neighbor[u] = arg;
  }

  const int T = panel.n_periods();
  auto new_launch_at = [&](int u, int t) {
    for (const auto& [firm, period] : panel.units[u].firm_launches)
      if (period == panel.periods[t]) return true;
    return false;
  };
  auto first_launch_at = [&](int u, int t) {
    return panel.units[u].launch.has_value() && *panel.units[u].launch == panel.periods[t];
  };
  auto launch_in_window = [&](int u, int t) {
    for (int dt = 0; dt < options.window; ++dt) {
      int tt = t - dt;
      if (tt < 0) break;
      if (new_launch_at(u, tt)) return true;
    }
    return false;
  };

  int t0 = 0;
  if (options.sample_start) {
    t0 = panel.period_index(*options.sample_start);
    if (t0 < 0) fail_invalid("neighbor_launch_regression: sample start outside the panel");
  }

  FeRows rows;
  rows.n_units = panel.n_units();
  rows.n_periods = T;
  std::vector<double> y;
  std::vector<double> x_nb, x_country;
  for (int u : sample)
    for (int t = t0; t < T; ++t) {
      bool dep = options.first_firm_outcome ? first_launch_at(u, t) : new_launch_at(u, t);
      rows.unit.push_back(u);
      rows.period.push_back(t);
      y.push_back(dep ? 1.0 : 0.0);
      x_nb.push_back(launch_in_window(neighbor[u], t) ? 1.0 : 0.0);
      int count = 0;
      for (int j : sample) {
        if (j == u || panel.units[j].country != panel.units[u].country) continue;
        for (const auto& [firm, period] : panel.units[j].firm_launches) {
          int tt = panel.period_index(period);
          if (tt >= 0 && tt <= t && tt > t - options.window) ++count;
        }
      }
      x_country.push_back(count);
    }
  rows.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  rows.weight = Eigen::VectorXd::Ones(rows.y.size());
  Eigen::MatrixXd X(rows.y.size(), 2);
  X.col(0) = Eigen::Map<Eigen::VectorXd>(x_nb.data(), static_cast<Eigen::Index>(x_nb.size()));
  X.col(1) =
      Eigen::Map<Eigen::VectorXd>(x_country.data(), static_cast<Eigen::Index>(x_country.size()));
  std::vector<std::string> names = {
      "neighbor_launch_" + std::to_string(options.window) + "m",
      "country_launches_" + std::to_string(options.window) + "m"};

  WithinFitResult fit = within_wls(rows, X, names);
  Table out({"term", "coef_pp", "se_pp", "t", "mean_dep_pp", "n_obs"});
  double mean_dep = 100.0 * rows.y.mean();
  std::map<int, int> pos;
  for (std::size_t j = 0; j < fit.wls.kept.size(); ++j) pos[fit.wls.kept[j]] = static_cast<int>(j);
  for (int j = 0; j < 2; ++j) {
    auto it = pos.find(j);
    if (it == pos.end()) {
      out.add_row({names[j] + " (dropped)", std::string(""), std::string(""), std::string(""),
                   mean_dep, static_cast<double>(y.size())});
      continue;
    }
    double coef = 100.0 * fit.wls.coef(j);
    double se = 100.0 * std::sqrt(fit.vcov.cov(it->second, it->second));
    out.add_row({names[j], coef, se, se > 0 ? coef / se : 0.0, mean_dep,
                 static_cast<double>(y.size())});
  }
  return out;
}

Table pretrend_launch_regression(const Panel& panel,
                                 const PretrendRegressionOptions& options) {
  if (panel.frequency != Frequency::monthly)
    fail_invalid("pretrend_launch_regression requires a monthly panel");
  const int lag = options.lag;
  std::vector<int> sample;
  for (int u = 0; u < panel.n_units(); ++u)
    if (panel.units[u].launch.has_value()) sample.push_back(u);
  if (sample.empty()) fail_estimation("pretrend_launch_regression: no treated units");

  const int T = panel.n_periods();
  auto count_at = [&](int u, int t) -> std::optional<double> {
    if (t < 0 || t >= T) return std::nullopt;
    const auto& cell = panel.cell(u, t);
    if (!cell.has_value() || cell->accidents <= 0.0) return std::nullopt;
    return cell->accidents;
  };
  auto dep_at = [&](int u, int t) {
    if (options.first_firm_outcome)
      return panel.units[u].launch.has_value() && *panel.units[u].launch == panel.periods[t];
    for (const auto& [firm, period] : panel.units[u].firm_launches)
      if (period == panel.periods[t]) return true;
    return false;
  };

  Table out({"regressor", "coef_pp", "se_pp", "t", "n_obs", "note"});

  for (int variant = 0; variant < 2; ++variant) {
    FeRows rows;
    rows.n_units = panel.n_units();
    rows.n_periods = T;
    std::vector<double> y, x;
    for (int u : sample)
      for (int t = 0; t < T; ++t) {
        std::optional<double> reg;
        if (variant == 0) {
          auto now = count_at(u, t), past = count_at(u, t - lag);
          if (now && past) reg = std::log(*now) - std::log(*past);
        } else {
          double recent = 0, old = 0;
          bool ok = true;
          for (int k = 1; k <= lag && ok; ++k) {
            auto a = count_at(u, t - k), b = count_at(u, t - lag - k);
            if (!a || !b)
              ok = false;
            else {
              recent += *a;
              old += *b;
            }
          }
          if (ok && recent > 0 && old > 0) reg = std::log(recent) - std::log(old);
        }
        if (!reg) continue;
        rows.unit.push_back(u);
        rows.period.push_back(t);
        y.push_back(dep_at(u, t) ? 1.0 : 0.0);
        x.push_back(*reg);
      }
    std::string name = variant == 0 ? "d" + std::to_string(lag) + "_log_accidents"
                                    : "d" + std::to_string(lag) + "_log_rolling_sum";
    if (y.size() < 3) {
      out.add_row({name, std::string(""), std::string(""), std::string(""), 0.0,
                   std::string("insufficient history")});
      continue;
    }
    rows.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    rows.weight = Eigen::VectorXd::Ones(rows.y.size());
    Eigen::MatrixXd X = Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    try {
      WithinFitResult fit = within_wls(rows, X, {name});
      double coef = 100.0 * fit.wls.coef(0);
      double se = 100.0 * std::sqrt(fit.vcov.cov(0, 0));
      out.add_row({name, coef, se, se > 0 ? coef / se : 0.0, static_cast<double>(y.size()),
                   std::string("")});
    } catch (const Error& e) {
      out.add_row({name, std::string(""), std::string(""), std::string(""),
                   static_cast<double>(y.size()),
                   std::string("dropped: no within variation")});
    }
  }
  return out;
}

CostProjection cost_projection(double effect_pct, double baseline_monthly_accidents,
                               double cost_per_accident) {
  if (effect_pct < 0 || baseline_monthly_accidents <= 0 || cost_per_accident <= 0)
    fail_invalid("cost_projection: inputs must be positive");
  CostProjection out;
  out.monthly = effect_pct / 100.0 * baseline_monthly_accidents * cost_per_accident;
  out.annual = 12.0 * out.monthly;
  return out;
}

}  // namespace didlab
