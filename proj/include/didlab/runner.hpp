#pragma once

#include <optional>
#include <string>
#include <vector>

#include "didlab/imputation.hpp"
#include "didlab/panel.hpp"
#include "didlab/simlab.hpp"
#include "didlab/table.hpp"

namespace didlab {

// High-level entry points behind the C API and the CLI: named presets in,
// result tables out. JSON option strings are parsed here.

struct RunOptions {
  bool include_never_treated = false;
  bool unit_trends = false;
  OutcomeKind outcome = OutcomeKind::log_accidents;
  CohortGranularity cohorts = CohortGranularity::quarter;
  CohortRules cohort_rules;
  ZeroPolicy zero_policy = ZeroPolicy::impute_one;
  bool project_severity = false;  // map victim shares onto the accident-share scale first
  int h_pre = 12;
  int h_post = 18;
  std::uint64_t seed = 1;
  double significance_share_threshold = 0.10;  // placebo pass/fail summary
};

RunOptions parse_run_options(const std::string& json_text);  // "" = defaults
DgpConfig parse_dgp_config(const std::string& json_text);
SdidConfig parse_sdid_config(const std::string& json_text);

// Preset names: all_post, incl_never_treated, first_12, non_winter, winter,
// excl_covid, annual_dd, annual_dd_never.
Table run_estimate(const Panel& panel, const std::string& preset, const RunOptions& options);

Table run_event_study(const Panel& panel, const RunOptions& options);

// Event-study profile under launch dates shifted into the past, plus a
// significance summary over the uncontaminated placebo window.
struct PlaceboRun {
  Table profile;       // same layout as the event-study table
  Table summary;       // one row: shift, n_coefficients, n_significant, share, pass
};
PlaceboRun run_placebo(const Panel& panel, int shift_months, const RunOptions& options);

Table run_heterogeneity(const Panel& panel, const std::string& attribute,
                        const RunOptions& options);

struct SdidRun {
  Table summary;  // pooled row plus one row per cohort
  Table weights;  // omega and lambda entries per cohort
};
SdidRun run_sdid(const Panel& panel, const SdidConfig& config, bool exclude_winter = false);

// Comparison estimators and launch-timing diagnostics:
// twfe_ols, twfe_ppml, iv_binary, iv_firm_count (options key country_year_fe),
// launch_timing, neighbor_launch (options key window), pretrend_launch
// (options key lag).
Table run_classic(const Panel& panel, const std::string& kind, const std::string& options_json);

// Per-city 3-month moving average of log accidents (seasonality plot data).
Table run_series(const Panel& panel);

// Monte Carlo config: {"estimator": {...}, "dgp": {...}, "reps": n,
// "threads": k, "seed": s}.
Table run_monte_carlo(const std::string& config_json, McReport* report_out = nullptr);

// Winter filter used by the sdid "excl. winter" variant: drops Nov-Feb cells.
Panel drop_winter_months(const Panel& panel);

std::vector<std::string> estimate_preset_names();

}  // namespace didlab
