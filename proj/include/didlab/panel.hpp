#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace didlab {

// A calendar period: a month ("2019-07") or, for annual panels, a year
// ("2019", month == 0). Ordering and month arithmetic are exact.
struct PeriodId {
  int year = 0;
  int month = 0;  // 1..12, or 0 for annual periods

  bool is_monthly() const { return month != 0; }
  // months since year 0; only meaningful for monthly periods
  long month_index() const { return static_cast<long>(year) * 12 + (month - 1); }

  PeriodId plus_months(int k) const;

  static PeriodId parse(const std::string& text);  // "YYYY-MM" or "YYYY"
  std::string str() const;

  friend auto operator<=>(const PeriodId&, const PeriodId&) = default;
};

enum class Frequency { monthly, annual };

struct UnitMeta {
  std::string unit_id;
  std::string country;
  long long population = 0;
  std::optional<double> latitude;
  std::optional<double> longitude;
  std::optional<PeriodId> launch;  // nullopt = never treated
  std::vector<std::pair<std::string, PeriodId>> firm_launches;  // (firm_id, period)
  std::map<std::string, double> attributes;
};

enum class SlightSource { accident_share, victim_share, projected };

std::string to_string(SlightSource source);
SlightSource parse_slight_source(const std::string& text);

struct OutcomeCell {
  // Integer-valued for ingested data; the simulator may produce continuous
  // outcomes for exactness tests.
  double accidents = 0.0;
  std::optional<double> slight_share;
  SlightSource slight_source = SlightSource::accident_share;
  std::optional<double> victim_share;  // training column for the severity projection
  bool zero_imputed = false;
  bool gap_filled = false;
};

// Units x ordered periods grid of outcome cells plus the launch registry.
// Immutable by convention: every operation returns a new Panel.
class Panel {
 public:
  Frequency frequency = Frequency::monthly;
  std::vector<PeriodId> periods;  // strictly increasing; contiguous when monthly
  std::vector<UnitMeta> units;
  std::vector<std::optional<OutcomeCell>> cells;  // row-major: unit * n_periods + period
  bool zero_policy_applied = false;

  int n_units() const { return static_cast<int>(units.size()); }
  int n_periods() const { return static_cast<int>(periods.size()); }

  const std::optional<OutcomeCell>& cell(int unit, int period) const {
    return cells[static_cast<std::size_t>(unit) * periods.size() + period];
  }
  std::optional<OutcomeCell>& cell(int unit, int period) {
    return cells[static_cast<std::size_t>(unit) * periods.size() + period];
  }

  // Treatment indicator d_it = [launch <= period t].
  bool treated(int unit, int period) const {
    const auto& launch = units[unit].launch;
    return launch.has_value() && *launch <= periods[period];
  }

  // Months since launch at period t (monthly panels); nullopt if never treated.
  std::optional<long> event_time(int unit, int period) const;

  int unit_index(const std::string& unit_id) const;  // -1 if unknown
  int period_index(const PeriodId& period) const;    // -1 if absent

  void validate() const;  // grid shape, period axis, launch registry consistency
};

// Country-specific median split of a unit attribute. side[u] is true for
// units strictly above their country's median.
struct GroupAssignment {
  std::string attribute;
  std::map<std::string, double> country_medians;
  std::vector<bool> side;  // per unit index; true = above
  std::vector<std::string> warnings;
};

struct LoadOptions {
  bool fill_gaps_mean_of_neighbors = false;  // the two-sided neighbor-month imputation
  long long min_population = 0;              // ingestion filter; 0 = keep all
  std::set<std::string> exclude_units;       // ingestion filter (suburb lists etc.)
};

struct LoadReport {
  std::map<std::string, int> units_per_country;
  std::map<std::string, double> coverage_per_country;  // share of non-missing cells
  std::vector<std::string> missing_cells;              // "unit@period"
  std::vector<std::string> warnings;
  int gap_filled_cells = 0;
};

struct LoadResult {
  Panel panel;
  LoadReport report;
};

LoadResult load_panel(const std::string& units_csv, const std::string& panel_csv,
                      const std::string& firms_csv = "", const LoadOptions& options = {});

// Re-serialization; round-trips with load_panel up to column order and float
// formatting.
void save_panel(const Panel& panel, const std::string& units_csv,
                const std::string& panel_csv, const std::string& firms_csv = "");

enum class ZeroPolicy { impute_one, drop, fail };

Panel apply_zero_policy(const Panel& panel, ZeroPolicy policy);

// ln(accidents) per non-missing cell; NaN marks missing cells.
// Requires that no zero counts remain.
std::vector<double> log_outcome(const Panel& panel);

GroupAssignment country_median_split(const Panel& panel, const std::string& attribute);

// Moves every recorded launch (city-level and firm-level) shift_months into
// the past for positive input. Launches may leave the panel window; treatment
// indicators follow the shifted registry.
Panel shift_launch_dates(const Panel& panel, int shift_months);

struct AnnualAggregationRule {
  // Treatment group: units whose first launch falls inside [treat_from, treat_to].
  PeriodId treat_from{2019, 1};
  PeriodId treat_to{2019, 12};
  // Control group: units with launch on/after this cutoff...
  PeriodId control_from{2020, 7};
  // ...plus never-treated units when set.
  bool include_never = false;
};

struct AnnualPanel {
  Panel panel;                     // two annual periods
  std::vector<bool> treated_group; // per unit of the aggregated panel
  int n_dropped_units = 0;
};

AnnualPanel aggregate_annual(const Panel& panel, int pre_year, int post_year,
                             const AnnualAggregationRule& rule = {});

struct SeverityProjection {
  double intercept = 0.0;
  double slope = 0.0;
  double r_squared = 0.0;
  int n_training = 0;
  int n_projected = 0;
  int n_clamped = 0;
};

// Fits accident_share = a + b * victim_share on cells observing both and
// replaces victim-share observations by clamped projections.
std::pair<Panel, SeverityProjection> project_severity_share(const Panel& panel);

}  // namespace didlab
