#include "didlab/panel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "didlab/csv.hpp"
#include "didlab/errors.hpp"

namespace didlab {

PeriodId PeriodId::plus_months(int k) const {
  if (!is_monthly()) fail_invalid("month arithmetic on annual period " + str());
  long idx = month_index() + k;
  PeriodId out;
  out.year = static_cast<int>(idx >= 0 ? idx / 12 : (idx - 11) / 12);
  out.month = static_cast<int>(idx - static_cast<long>(out.year) * 12) + 1;
  return out;
}

PeriodId PeriodId::parse(const std::string& text) {
  auto all_digits = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
  };
  PeriodId p;
  if (text.size() == 7 && text[4] == '-') {
    std::string y = text.substr(0, 4), m = text.substr(5, 2);
    if (!all_digits(y) || !all_digits(m)) fail_invalid("malformed period string: '" + text + "'");
    p.year = std::stoi(y);
    p.month = std::stoi(m);
    if (p.month < 1 || p.month > 12) fail_invalid("month out of range in period '" + text + "'");
    return p;
  }
  if (text.size() == 4 && all_digits(text)) {
    p.year = std::stoi(text);
    p.month = 0;
    return p;
  }
  fail_invalid("malformed period string: '" + text + "' (expected YYYY-MM or YYYY)");
}

std::string PeriodId::str() const {
  char buf[16];
  if (is_monthly())
    std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
  else
    std::snprintf(buf, sizeof(buf), "%04d", year);
  return buf;
}

std::string to_string(SlightSource source) {
  switch (source) {
    case SlightSource::accident_share: return "accident_share";
    case SlightSource::victim_share: return "victim_share";
    case SlightSource::projected: return "projected";
  }
  return "accident_share";
}

SlightSource parse_slight_source(const std::string& text) {
  if (text == "accident_share" || text.empty()) return SlightSource::accident_share;
  if (text == "victim_share") return SlightSource::victim_share;
  if (text == "projected") return SlightSource::projected;
  fail_invalid("unknown slight_source: '" + text + "'");
}

std::optional<long> Panel::event_time(int unit, int period) const {
  const auto& launch = units[unit].launch;
  if (!launch.has_value()) return std::nullopt;
  if (frequency == Frequency::monthly)
    return periods[period].month_index() - launch->month_index();
  return static_cast<long>(periods[period].year - launch->year);
}

int Panel::unit_index(const std::string& unit_id) const {
  for (int u = 0; u < n_units(); ++u)
    if (units[u].unit_id == unit_id) return u;
  return -1;
}

int Panel::period_index(const PeriodId& period) const {
  auto it = std::lower_bound(periods.begin(), periods.end(), period);
  if (it == periods.end() || !(*it == period)) return -1;
  return static_cast<int>(it - periods.begin());
}

void Panel::validate() const {
  if (cells.size() != units.size() * periods.size())
    fail_invalid("panel grid size does not match units x periods");
  for (std::size_t i = 1; i < periods.size(); ++i) {
    if (!(periods[i - 1] < periods[i])) fail_invalid("period axis not strictly increasing");
    if (frequency == Frequency::monthly &&
        periods[i].month_index() != periods[i - 1].month_index() + 1)
      fail_invalid("monthly period axis not contiguous at " + periods[i].str());
  }
  for (const auto& unit : units) {
    if (unit.population < 0) fail_invalid("negative population for unit " + unit.unit_id);
    for (const auto& [name, value] : unit.attributes)
      if (!std::isfinite(value))
        fail_invalid("non-finite attribute " + name + " for unit " + unit.unit_id);
    if (!unit.firm_launches.empty()) {
      PeriodId first = unit.firm_launches.front().second;
      for (const auto& [firm, period] : unit.firm_launches) first = std::min(first, period);
      if (!unit.launch.has_value())
        fail_invalid("unit " + unit.unit_id + " has firm launches but no launch_period");
      if (*unit.launch != first)
        fail_invalid("unit " + unit.unit_id + " launch_period " + unit.launch->str() +
                     " does not equal earliest firm launch " + first.str());
    }
  }
  for (int u = 0; u < n_units(); ++u)
    for (int t = 0; t < n_periods(); ++t) {
      const auto& c = cell(u, t);
      if (!c.has_value()) continue;
      if (c->accidents < 0 || !std::isfinite(c->accidents))
        fail_invalid("invalid accident count for " + units[u].unit_id + "@" + periods[t].str());
      if (c->slight_share.has_value() && (*c->slight_share < 0.0 || *c->slight_share > 1.0))
        fail_invalid("slight_share outside [0,1] for " + units[u].unit_id + "@" + periods[t].str());
    }
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kAttrPrefix = "attr:";

struct UnitsFile {
  std::vector<UnitMeta> units;
  std::vector<std::string> attribute_names;
};

UnitsFile read_units(const std::string& path, const LoadOptions& options,
                     LoadReport& report) {
  csv::Table table = csv::read_file(path);
  int c_id = table.require_column("unit_id");
  int c_country = table.require_column("country");
  int c_pop = table.require_column("population");
  int c_lat = table.column("latitude");
  int c_lon = table.column("longitude");
  int c_launch = table.require_column("launch_period");

  std::vector<std::pair<int, std::string>> attr_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c)
    if (table.header[c].rfind(kAttrPrefix, 0) == 0)
      attr_cols.emplace_back(static_cast<int>(c), table.header[c].substr(5));

  UnitsFile out;
  for (auto& [col, name] : attr_cols) out.attribute_names.push_back(name);

  std::set<std::string> seen;
  for (const auto& row : table.rows) {
    UnitMeta unit;
    unit.unit_id = row[c_id];
    if (unit.unit_id.empty()) fail_invalid(path + ": empty unit_id");
    if (!seen.insert(unit.unit_id).second)
      fail_invalid(path + ": duplicate unit_id '" + unit.unit_id + "'");
    unit.country = row[c_country];
    unit.population = csv::parse_integer(row[c_pop], "population of " + unit.unit_id);
    if (unit.population <= 0) fail_invalid(path + ": non-positive population for " + unit.unit_id);
    if (c_lat >= 0 && !row[c_lat].empty())
      unit.latitude = csv::parse_double(row[c_lat], "latitude of " + unit.unit_id);
    if (c_lon >= 0 && !row[c_lon].empty())
      unit.longitude = csv::parse_double(row[c_lon], "longitude of " + unit.unit_id);
    if (!row[c_launch].empty()) unit.launch = PeriodId::parse(row[c_launch]);
    for (const auto& [col, name] : attr_cols) {
      if (row[col].empty()) continue;
      unit.attributes[name] = csv::parse_double(row[col], "attribute " + name + " of " + unit.unit_id);
    }
    if (options.exclude_units.count(unit.unit_id)) continue;
    if (unit.population < options.min_population) {
      report.warnings.push_back("unit " + unit.unit_id + " dropped by population filter");
      continue;
    }
    out.units.push_back(std::move(unit));
  }
  if (out.units.empty()) fail_invalid(path + ": no units after filters");
  return out;
}

}  // namespace

LoadResult load_panel(const std::string& units_csv, const std::string& panel_csv,
                      const std::string& firms_csv, const LoadOptions& options) {
  LoadResult result;
  Panel& panel = result.panel;
  LoadReport& report = result.report;

  UnitsFile units_file = read_units(units_csv, options, report);
  panel.units = std::move(units_file.units);

  csv::Table table = csv::read_file(panel_csv);
  int c_id = table.require_column("unit_id");
  int c_period = table.require_column("period");
  int c_acc = table.require_column("accidents");
  int c_share = table.column("slight_share");
  int c_source = table.column("slight_source");
  int c_victim = table.column("victim_share");

  // First pass: period axis and frequency.
  std::vector<PeriodId> seen_periods;
  for (const auto& row : table.rows) seen_periods.push_back(PeriodId::parse(row[c_period]));
  if (seen_periods.empty()) fail_invalid(panel_csv + ": no observations");
  bool monthly = seen_periods.front().is_monthly();
  for (const auto& p : seen_periods)
    if (p.is_monthly() != monthly) fail_invalid(panel_csv + ": mixed monthly and annual periods");
  panel.frequency = monthly ? Frequency::monthly : Frequency::annual;

  PeriodId lo = *std::min_element(seen_periods.begin(), seen_periods.end());
  PeriodId hi = *std::max_element(seen_periods.begin(), seen_periods.end());
  if (monthly) {
    for (PeriodId p = lo; p <= hi; p = p.plus_months(1)) panel.periods.push_back(p);
  } else {
    std::set<PeriodId> distinct(seen_periods.begin(), seen_periods.end());
    panel.periods.assign(distinct.begin(), distinct.end());
  }

  panel.cells.assign(panel.units.size() * panel.periods.size(), std::nullopt);

  std::map<std::string, int> unit_of;
  for (int u = 0; u < panel.n_units(); ++u) unit_of[panel.units[u].unit_id] = u;

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto it = unit_of.find(row[c_id]);
    if (it == unit_of.end()) {
      if (options.exclude_units.count(row[c_id])) continue;
      // Units filtered by population are silently skipped too.
      bool filtered = options.min_population > 0;
      if (!filtered) fail_invalid(panel_csv + ": unknown unit '" + row[c_id] + "'");
      continue;
    }
    int u = it->second;
    int t = panel.period_index(seen_periods[r]);
    auto& slot = panel.cell(u, t);
    if (slot.has_value())
      fail_invalid(panel_csv + ": duplicate cell (" + row[c_id] + ", " + seen_periods[r].str() + ")");
    OutcomeCell cell;
    double acc = csv::parse_double(row[c_acc], "accidents of " + row[c_id]);
    if (acc < 0) fail_invalid(panel_csv + ": negative accident count for " + row[c_id] + "@" +
                              seen_periods[r].str());
    if (acc != std::floor(acc))
      fail_invalid(panel_csv + ": non-integer accident count for " + row[c_id] + "@" +
                   seen_periods[r].str());
    cell.accidents = acc;
    if (c_share >= 0 && !row[c_share].empty())
      cell.slight_share = csv::parse_double(row[c_share], "slight_share of " + row[c_id]);
    if (c_source >= 0 && !row[c_source].empty())
      cell.slight_source = parse_slight_source(row[c_source]);
    if (c_victim >= 0 && !row[c_victim].empty())
      cell.victim_share = csv::parse_double(row[c_victim], "victim_share of " + row[c_id]);
    slot = cell;
  }

  // A period inside the axis with no observation for any unit indicates a
  // broken axis rather than ordinary missing cells.
  for (int t = 0; t < panel.n_periods(); ++t) {
    bool any = false;
    for (int u = 0; u < panel.n_units() && !any; ++u) any = panel.cell(u, t).has_value();
    if (!any)
      fail_invalid(panel_csv + ": non-contiguous period axis (no observations in " +
                   panel.periods[t].str() + ")");
  }

  if (!firms_csv.empty()) {
    csv::Table firms = csv::read_file(firms_csv);
    int f_id = firms.require_column("unit_id");
    int f_firm = firms.require_column("firm_id");
    int f_period = firms.require_column("period");
    for (const auto& row : firms.rows) {
      auto it = unit_of.find(row[f_id]);
      if (it == unit_of.end()) {
        if (options.exclude_units.count(row[f_id]) || options.min_population > 0) continue;
        fail_invalid(firms_csv + ": unknown unit '" + row[f_id] + "'");
      }
      panel.units[it->second].firm_launches.emplace_back(row[f_firm], PeriodId::parse(row[f_period]));
    }
    for (auto& unit : panel.units)
      std::sort(unit.firm_launches.begin(), unit.firm_launches.end(),
                [](const auto& a, const auto& b) {
                  return a.second < b.second || (a.second == b.second && a.first < b.first);
                });
  }

  if (options.fill_gaps_mean_of_neighbors && panel.frequency == Frequency::monthly) {
    for (int u = 0; u < panel.n_units(); ++u)
      for (int t = 1; t + 1 < panel.n_periods(); ++t) {
        if (panel.cell(u, t).has_value()) continue;
        const auto& prev = panel.cell(u, t - 1);
        const auto& next = panel.cell(u, t + 1);
        if (!prev.has_value() || !next.has_value()) continue;
        OutcomeCell filled;
        filled.accidents = 0.5 * (prev->accidents + next->accidents);
        filled.gap_filled = true;
        panel.cell(u, t) = filled;
        ++report.gap_filled_cells;
      }
  }

  panel.validate();

  for (int u = 0; u < panel.n_units(); ++u) {
    const std::string& country = panel.units[u].country;
    report.units_per_country[country] += 1;
    for (int t = 0; t < panel.n_periods(); ++t)
      if (!panel.cell(u, t).has_value())
        report.missing_cells.push_back(panel.units[u].unit_id + "@" + panel.periods[t].str());
  }
  std::map<std::string, std::pair<long, long>> cover;  // country -> (present, total)
  for (int u = 0; u < panel.n_units(); ++u) {
    auto& [present, total] = cover[panel.units[u].country];
    total += panel.n_periods();
    for (int t = 0; t < panel.n_periods(); ++t)
      if (panel.cell(u, t).has_value()) ++present;
  }
  for (const auto& [country, counts] : cover)
    report.coverage_per_country[country] =
        counts.second ? static_cast<double>(counts.first) / counts.second : 0.0;

  return result;
}

void save_panel(const Panel& panel, const std::string& units_csv,
                const std::string& panel_csv, const std::string& firms_csv) {
  std::set<std::string> attr_names;
  for (const auto& unit : panel.units)
    for (const auto& [name, value] : unit.attributes) attr_names.insert(name);

  csv::Table units;
  units.header = {"unit_id", "country", "population", "latitude", "longitude", "launch_period"};
  for (const auto& name : attr_names) units.header.push_back(std::string(kAttrPrefix) + name);
  for (const auto& unit : panel.units) {
    std::vector<std::string> row = {
        unit.unit_id,
        unit.country,
        std::to_string(unit.population),
        unit.latitude ? csv::format_double(*unit.latitude) : "",
        unit.longitude ? csv::format_double(*unit.longitude) : "",
        unit.launch ? unit.launch->str() : "",
    };
    for (const auto& name : attr_names) {
      auto it = unit.attributes.find(name);
      row.push_back(it == unit.attributes.end() ? "" : csv::format_double(it->second));
    }
    units.rows.push_back(std::move(row));
  }
  csv::write_file(units_csv, units);

  csv::Table obs;
  obs.header = {"unit_id", "period", "accidents", "slight_share", "slight_source", "victim_share"};
  for (int u = 0; u < panel.n_units(); ++u)
    for (int t = 0; t < panel.n_periods(); ++t) {
      const auto& cell = panel.cell(u, t);
      if (!cell.has_value()) continue;
      obs.rows.push_back({
          panel.units[u].unit_id,
          panel.periods[t].str(),
          csv::format_double(cell->accidents),
          cell->slight_share ? csv::format_double(*cell->slight_share) : "",
          cell->slight_share ? to_string(cell->slight_source) : "",
          cell->victim_share ? csv::format_double(*cell->victim_share) : "",
      });
    }
  csv::write_file(panel_csv, obs);

  if (!firms_csv.empty()) {
    csv::Table firms;
    firms.header = {"unit_id", "firm_id", "period"};
    for (const auto& unit : panel.units)
      for (const auto& [firm, period] : unit.firm_launches)
        firms.rows.push_back({unit.unit_id, firm, period.str()});
    csv::write_file(firms_csv, firms);
  }
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

Panel apply_zero_policy(const Panel& panel, ZeroPolicy policy) {
  Panel out = panel;
  for (int u = 0; u < out.n_units(); ++u)
    for (int t = 0; t < out.n_periods(); ++t) {
      auto& cell = out.cell(u, t);
      if (!cell.has_value() || cell->accidents != 0.0) continue;
      switch (policy) {
        case ZeroPolicy::impute_one:
          cell->accidents = 1.0;
          cell->zero_imputed = true;
          break;
        case ZeroPolicy::drop:
          cell.reset();
          break;
        case ZeroPolicy::fail:
          fail_invalid("zero accident count at (" + out.units[u].unit_id + ", " +
                       out.periods[t].str() + ")");
      }
    }
  out.zero_policy_applied = true;
  return out;
}

std::vector<double> log_outcome(const Panel& panel) {
  std::vector<double> out(panel.cells.size(), std::nan(""));
  for (int u = 0; u < panel.n_units(); ++u)
    for (int t = 0; t < panel.n_periods(); ++t) {
      const auto& cell = panel.cell(u, t);
      if (!cell.has_value()) continue;
      if (cell->accidents <= 0.0)
        fail_invalid("log of non-positive count at (" + panel.units[u].unit_id + ", " +
                     panel.periods[t].str() + "); apply a zero policy first");
      out[static_cast<std::size_t>(u) * panel.n_periods() + t] = std::log(cell->accidents);
    }
  return out;
}

GroupAssignment country_median_split(const Panel& panel, const std::string& attribute) {
  GroupAssignment out;
  out.attribute = attribute;
  out.side.assign(panel.units.size(), false);

  std::map<std::string, std::vector<double>> values;
  for (const auto& unit : panel.units) {
    auto it = unit.attributes.find(attribute);
    if (it == unit.attributes.end() || !std::isfinite(it->second))
      fail_invalid("unit " + unit.unit_id + " is missing attribute '" + attribute + "'");
    values[unit.country].push_back(it->second);
  }
  for (auto& [country, v] : values) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    double median = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    out.country_medians[country] = median;
    if (n == 1)
      out.warnings.push_back("country " + country +
                             " has a single unit; it falls below its own median");
    if (v.front() == v.back())
      out.warnings.push_back("country " + country + ": all units share attribute value " +
                             csv::format_double(v.front()) + "; all classified below");
  }
  for (int u = 0; u < panel.n_units(); ++u) {
    double value = panel.units[u].attributes.at(attribute);
    out.side[u] = value > out.country_medians.at(panel.units[u].country);
  }
  return out;
}

Panel shift_launch_dates(const Panel& panel, int shift_months) {
  if (shift_months == 0) fail_invalid("shift_months must be nonzero");
  if (panel.frequency != Frequency::monthly)
    fail_invalid("shift_launch_dates requires a monthly panel");
  Panel out = panel;
  bool any_launch = false;
  bool any_at_or_after_start = false;
  for (auto& unit : out.units) {
    if (unit.launch.has_value()) {
      any_launch = true;
      unit.launch = unit.launch->plus_months(-shift_months);
      if (*unit.launch >= out.periods.front()) any_at_or_after_start = true;
    }
    for (auto& [firm, period] : unit.firm_launches) period = period.plus_months(-shift_months);
  }
  if (any_launch && !any_at_or_after_start)
    fail_estimation("all shifted launches precede the panel start; nothing estimable");
  return out;
}

AnnualPanel aggregate_annual(const Panel& panel, int pre_year, int post_year,
                             const AnnualAggregationRule& rule) {
  if (panel.frequency != Frequency::monthly)
    fail_invalid("aggregate_annual requires a monthly panel");
  auto year_covered = [&](int year) {
    return panel.period_index({year, 1}) >= 0 && panel.period_index({year, 12}) >= 0;
  };
  if (!year_covered(pre_year) || !year_covered(post_year))
    fail_invalid("panel does not cover both aggregation years");

  AnnualPanel out;
  out.panel.frequency = Frequency::annual;
  out.panel.periods = {PeriodId{pre_year, 0}, PeriodId{post_year, 0}};
  out.panel.zero_policy_applied = panel.zero_policy_applied;

  for (int u = 0; u < panel.n_units(); ++u) {
    const UnitMeta& unit = panel.units[u];
    bool is_treated_group = unit.launch.has_value() && *unit.launch >= rule.treat_from &&
                            *unit.launch <= rule.treat_to;
    bool is_control_group = unit.launch.has_value() ? (*unit.launch >= rule.control_from)
                                                    : rule.include_never;
    if (!is_treated_group && !is_control_group) {
      ++out.n_dropped_units;
      continue;
    }
    std::array<double, 2> sums{0.0, 0.0};
    std::array<int, 2> year_of{pre_year, post_year};
    bool complete = true;
    for (int which = 0; which < 2 && complete; ++which)
      for (int m = 1; m <= 12; ++m) {
        int t = panel.period_index({year_of[which], m});
        const auto& cell = panel.cell(u, t);
        if (!cell.has_value()) {
          complete = false;
          break;
        }
        sums[which] += cell->accidents;
      }
    if (!complete)
      fail_invalid("unit " + unit.unit_id + " has missing months inside an aggregation year");

    UnitMeta annual_unit = unit;
    annual_unit.launch = is_treated_group ? std::optional<PeriodId>(PeriodId{post_year, 0})
                                          : std::nullopt;
    annual_unit.firm_launches.clear();
    out.panel.units.push_back(std::move(annual_unit));
    out.treated_group.push_back(is_treated_group);
    OutcomeCell pre_cell, post_cell;
    pre_cell.accidents = sums[0];
    post_cell.accidents = sums[1];
    out.panel.cells.push_back(pre_cell);
    out.panel.cells.push_back(post_cell);
  }
  if (out.panel.units.empty()) fail_estimation("annual aggregation leaves no units");
  bool any_treat = std::find(out.treated_group.begin(), out.treated_group.end(), true) !=
                   out.treated_group.end();
  bool any_control = std::find(out.treated_group.begin(), out.treated_group.end(), false) !=
                     out.treated_group.end();
  if (!any_treat || !any_control)
    fail_estimation("annual aggregation leaves an empty treatment or control group");
  out.panel.validate();
  return out;
}

std::pair<Panel, SeverityProjection> project_severity_share(const Panel& panel) {
  std::vector<std::pair<double, double>> training;  // (victim, accident)
  for (int u = 0; u < panel.n_units(); ++u)
    for (int t = 0; t < panel.n_periods(); ++t) {
      const auto& cell = panel.cell(u, t);
      if (!cell.has_value()) continue;
      if (cell->slight_share.has_value() && cell->victim_share.has_value() &&
          cell->slight_source == SlightSource::accident_share)
        training.emplace_back(*cell->victim_share, *cell->slight_share);
    }
  if (training.empty())
    fail_invalid("severity projection: no cell observes both accident and victim shares");

  double mx = 0, my = 0;
  for (const auto& [x, y] : training) {
    mx += x;
    my += y;
  }
  mx /= training.size();
  my /= training.size();
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : training) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx <= 1e-14 * training.size())
    fail_invalid("severity projection: victim-share regressor is constant");

  SeverityProjection fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = (syy > 0) ? (sxy * sxy) / (sxx * syy) : 1.0;
  fit.n_training = static_cast<int>(training.size());

  Panel out = panel;
  for (int u = 0; u < out.n_units(); ++u)
    for (int t = 0; t < out.n_periods(); ++t) {
      auto& cell = out.cell(u, t);
      if (!cell.has_value() || !cell->slight_share.has_value()) continue;
      if (cell->slight_source != SlightSource::victim_share) continue;
      double projected = fit.intercept + fit.slope * (*cell->slight_share);
      double clamped = std::clamp(projected, 0.0, 1.0);
      if (clamped != projected) ++fit.n_clamped;
      cell->slight_share = clamped;
      cell->slight_source = SlightSource::projected;
      ++fit.n_projected;
    }
  return {std::move(out), fit};
}

}  // namespace didlab
