#include "didlab/runner.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "didlab/classic.hpp"
#include "didlab/errors.hpp"
#include "didlab/sdid.hpp"

namespace didlab {

using nlohmann::json;

namespace {

constexpr double kZ95 = 1.959964;

json parse_json(const std::string& text, const char* what) {
  if (text.empty()) return json::object();
  json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded()) fail_invalid(std::string(what) + ": malformed JSON");
  if (!parsed.is_object()) fail_invalid(std::string(what) + ": expected a JSON object");
  return parsed;
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    fail_invalid(std::string("invalid value for config key '") + key + "'");
  }
}

[[noreturn]] void unknown_key(const std::string& key, const std::vector<std::string>& valid) {
  std::string msg = "unknown config key '" + key + "'; valid keys:";
  for (const auto& v : valid) msg += " " + v;
  fail_invalid(msg);
}

void check_keys(const json& j, const std::vector<std::string>& valid) {
  for (const auto& [key, value] : j.items())
    if (std::find(valid.begin(), valid.end(), key) == valid.end()) unknown_key(key, valid);
}

PeriodId parse_period_field(const json& j, const char* key, PeriodId fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return PeriodId::parse(it->get<std::string>());
}

Table estimate_table() {
  return Table({"estimand", "tau", "se", "semi_elasticity_pct", "semi_elasticity_se_pct",
                "ci_low_pct", "ci_high_pct", "n_treated_cells", "n_total_cells", "n_units"});
}

void add_estimate_row(Table& table, const EffectEstimate& est) {
  double lo = est.ci_lo, hi = est.ci_hi;
  if (est.transformed) {
    lo = 100.0 * (std::exp(est.ci_lo) - 1.0);
    hi = 100.0 * (std::exp(est.ci_hi) - 1.0);
  }
  table.add_row({est.estimand, est.tau, est.se, est.semi_pct, est.semi_se_pct, lo, hi,
                 static_cast<double>(est.n_treated_cells),
                 static_cast<double>(est.n_total_cells), static_cast<double>(est.n_units)});
}

Panel prepare_panel(const Panel& panel, const RunOptions& options) {
  Panel out = panel;
  if (options.project_severity) out = project_severity_share(out).first;
  if (!out.zero_policy_applied && options.outcome == OutcomeKind::log_accidents)
    out = apply_zero_policy(out, options.zero_policy);
  return out;
}

ImputationOptions to_imputation_options(const RunOptions& options) {
  ImputationOptions out;
  out.include_never_treated = options.include_never_treated;
  out.unit_trends = options.unit_trends;
  out.outcome = options.outcome;
  out.cohorts = options.cohorts;
  out.cohort_rules = options.cohort_rules;
  return out;
}

}  // namespace

std::vector<std::string> estimate_preset_names() {
  return {"all_post", "incl_never_treated", "first_12",  "non_winter",
          "winter",   "excl_covid",         "annual_dd", "annual_dd_never"};
}

RunOptions parse_run_options(const std::string& json_text) {
  json j = parse_json(json_text, "run options");
  check_keys(j, {"include_never_treated", "unit_trends", "outcome", "cohorts", "zero_policy",
                 "h_pre", "h_post", "seed", "significance_share_threshold",
                 "cohort_merge_until", "cohort_merge_since", "cohort_merges",
                 "merge_singleton_cohorts", "project_severity"});
  RunOptions out;
  read_field(j, "include_never_treated", out.include_never_treated);
  read_field(j, "project_severity", out.project_severity);
  read_field(j, "unit_trends", out.unit_trends);
  read_field(j, "h_pre", out.h_pre);
  read_field(j, "h_post", out.h_post);
  read_field(j, "seed", out.seed);
  read_field(j, "significance_share_threshold", out.significance_share_threshold);
  if (j.contains("outcome")) {
    std::string outcome = j["outcome"].get<std::string>();
    if (outcome == "log_accidents")
      out.outcome = OutcomeKind::log_accidents;
    else if (outcome == "slight_share")
      out.outcome = OutcomeKind::slight_share;
    else
      fail_invalid("outcome must be log_accidents or slight_share");
  }
  if (j.contains("cohorts")) {
    std::string cohorts = j["cohorts"].get<std::string>();
    if (cohorts == "quarter")
      out.cohorts = CohortGranularity::quarter;
    else if (cohorts == "half_year")
      out.cohorts = CohortGranularity::half_year;
    else
      fail_invalid("cohorts must be quarter or half_year");
  }
  if (j.contains("zero_policy")) {
    std::string policy = j["zero_policy"].get<std::string>();
    if (policy == "impute_one")
      out.zero_policy = ZeroPolicy::impute_one;
    else if (policy == "drop")
      out.zero_policy = ZeroPolicy::drop;
    else if (policy == "fail")
      out.zero_policy = ZeroPolicy::fail;
    else
      fail_invalid("zero_policy must be impute_one, drop or fail");
  }
  if (j.contains("cohort_merge_until"))
    out.cohort_rules.merge_until = PeriodId::parse(j["cohort_merge_until"].get<std::string>());
  if (j.contains("cohort_merge_since"))
    out.cohort_rules.merge_since = PeriodId::parse(j["cohort_merge_since"].get<std::string>());
  if (j.contains("cohort_merges"))
    for (const auto& pair : j["cohort_merges"])
      out.cohort_rules.merges.emplace_back(pair.at(0).get<std::string>(),
                                           pair.at(1).get<std::string>());
  read_field(j, "merge_singleton_cohorts", out.cohort_rules.merge_singletons);
  return out;
}

DgpConfig parse_dgp_config(const std::string& json_text) {
  json j = parse_json(json_text, "dgp config");
  check_keys(j, {"n_units", "n_periods", "start", "n_countries", "base_log_rate",
                 "unit_effect_sd", "seasonal_amplitude", "seasonal_phase", "calendar_trend",
                 "effect_profile", "launch", "noise", "sigma", "noise_ar1",
                 "continuous_outcome", "extra_firm_rate", "group_attribute", "seed"});
  DgpConfig out;
  read_field(j, "n_units", out.n_units);
  read_field(j, "n_periods", out.n_periods);
  out.start = parse_period_field(j, "start", out.start);
  read_field(j, "n_countries", out.n_countries);
  read_field(j, "base_log_rate", out.base_log_rate);
  read_field(j, "unit_effect_sd", out.unit_effect_sd);
  read_field(j, "seasonal_amplitude", out.seasonal_amplitude);
  read_field(j, "seasonal_phase", out.seasonal_phase);
  read_field(j, "calendar_trend", out.calendar_trend);
  read_field(j, "sigma", out.sigma);
  read_field(j, "noise_ar1", out.noise_ar1);
  read_field(j, "continuous_outcome", out.continuous_outcome);
  read_field(j, "extra_firm_rate", out.extra_firm_rate);
  read_field(j, "group_attribute", out.group_attribute);
  read_field(j, "seed", out.seed);
  if (j.contains("noise")) {
    std::string noise = j["noise"].get<std::string>();
    if (noise == "lognormal")
      out.noise = DgpConfig::Noise::lognormal;
    else if (noise == "poisson")
      out.noise = DgpConfig::Noise::poisson;
    else
      fail_invalid("noise must be lognormal or poisson");
  }
  if (j.contains("effect_profile")) {
    const json& p = j["effect_profile"];
    check_keys(p, {"kind", "tau", "rate", "tau_nonwinter", "tau_winter", "tau_above",
                   "tau_below"});
    std::string kind = p.value("kind", "zero");
    if (kind == "zero")
      out.profile.kind = EffectProfile::Kind::zero;
    else if (kind == "constant")
      out.profile.kind = EffectProfile::Kind::constant;
    else if (kind == "linear_growth")
      out.profile.kind = EffectProfile::Kind::linear_growth;
    else if (kind == "seasonal")
      out.profile.kind = EffectProfile::Kind::seasonal;
    else if (kind == "by_group")
      out.profile.kind = EffectProfile::Kind::by_group;
    else
      fail_invalid("effect_profile.kind must be zero, constant, linear_growth, seasonal or by_group");
    read_field(p, "tau", out.profile.tau);
    read_field(p, "rate", out.profile.rate);
    read_field(p, "tau_nonwinter", out.profile.tau_nonwinter);
    read_field(p, "tau_winter", out.profile.tau_winter);
    read_field(p, "tau_above", out.profile.tau_above);
    read_field(p, "tau_below", out.profile.tau_below);
  }
  if (j.contains("launch")) {
    const json& l = j["launch"];
    check_keys(l, {"kind", "window_start", "window_end", "strength", "wave_response",
                   "attribute"});
    std::string kind = l.value("kind", "uniform_random");
    if (kind == "none")
      out.launch.kind = LaunchProcess::Kind::none;
    else if (kind == "uniform_random")
      out.launch.kind = LaunchProcess::Kind::uniform_random;
    else if (kind == "attribute_correlated")
      out.launch.kind = LaunchProcess::Kind::attribute_correlated;
    else if (kind == "shock_correlated")
      out.launch.kind = LaunchProcess::Kind::shock_correlated;
    else
      fail_invalid("launch.kind must be none, uniform_random, attribute_correlated or shock_correlated");
    read_field(l, "window_start", out.launch.window_start);
    read_field(l, "window_end", out.launch.window_end);
    read_field(l, "strength", out.launch.strength);
    read_field(l, "wave_response", out.launch.wave_response);
    read_field(l, "attribute", out.launch.attribute);
  }
  return out;
}

SdidConfig parse_sdid_config(const std::string& json_text) {
  json j = parse_json(json_text, "sdid config");
  check_keys(j, {"zeta", "zeta_lambda", "solver", "max_iters", "tolerance", "placebo_reps",
                 "seed", "exclude_winter"});
  SdidConfig out;
  if (j.contains("zeta")) out.zeta_omega = j["zeta"].get<double>();
  read_field(j, "zeta_lambda", out.zeta_lambda);
  read_field(j, "max_iters", out.max_iters);
  read_field(j, "tolerance", out.tolerance);
  read_field(j, "placebo_reps", out.placebo_reps);
  read_field(j, "seed", out.seed);
  if (j.contains("solver")) {
    std::string solver = j["solver"].get<std::string>();
    if (solver == "frank_wolfe")
      out.solver = SdidConfig::Solver::frank_wolfe;
    else if (solver == "projected_gradient")
      out.solver = SdidConfig::Solver::projected_gradient;
    else
      fail_invalid("solver must be frank_wolfe or projected_gradient");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

Table run_estimate(const Panel& panel, const std::string& preset, const RunOptions& options) {
  Table table = estimate_table();

  if (preset == "annual_dd" || preset == "annual_dd_never") {
    Panel prepared = prepare_panel(panel, options);
    AnnualAggregationRule rule;
    rule.include_never = preset == "annual_dd_never";
    AnnualPanel annual = aggregate_annual(prepared, 2018, 2020, rule);
    EffectEstimate est = annual_dd(annual);
    est.estimand = preset;
    add_estimate_row(table, est);
    return table;
  }

  WeightScheme scheme;
  RunOptions effective = options;
  if (preset == "all_post") {
    scheme = WeightScheme::all_post();
  } else if (preset == "incl_never_treated") {
    scheme = WeightScheme::all_post();
    scheme.name = "incl_never_treated";
    effective.include_never_treated = true;
  } else if (preset == "first_12") {
    scheme = WeightScheme::first_k(12);
  } else if (preset == "non_winter") {
    scheme = WeightScheme::non_winter();
  } else if (preset == "winter") {
    scheme = WeightScheme::winter();
  } else if (preset == "excl_covid") {
    scheme = WeightScheme::excl_covid();
  } else {
    std::string msg = "unknown preset '" + preset + "'; valid presets:";
    for (const auto& name : estimate_preset_names()) msg += " " + name;
    fail_invalid(msg);
  }

  Panel prepared = prepare_panel(panel, effective);
  ImputationPipeline pipeline(prepared, to_imputation_options(effective));
  add_estimate_row(table, pipeline.estimate(scheme));
  return table;
}

namespace {

// format contract: exactly h,estimate,se,ci_low,ci_high
Table profile_table() { return Table({"h", "estimate", "se", "ci_low", "ci_high"}); }

void add_profile_row(Table& table, const std::string& label, const EventStudyPoint& point) {
  table.add_row({label, point.estimate, point.se, point.estimate - kZ95 * point.se,
                 point.estimate + kZ95 * point.se});
}

Table event_study_table(const EventStudyProfile& profile, int h_post) {
  Table table = profile_table();
  for (const auto& point : profile.pre) add_profile_row(table, std::to_string(point.h), point);
  for (const auto& point : profile.post) add_profile_row(table, std::to_string(point.h), point);
  if (profile.pooled_tail)
    add_profile_row(table, std::to_string(h_post + 1) + "+", *profile.pooled_tail);
  return table;
}

}  // namespace

Table run_event_study(const Panel& panel, const RunOptions& options) {
  Panel prepared = prepare_panel(panel, options);
  RunOptions effective = options;
  effective.cohorts = CohortGranularity::half_year;  // figure convention
  EventStudyProfile profile = event_study(prepared, to_imputation_options(effective),
                                          options.h_pre, options.h_post);
  return event_study_table(profile, options.h_post);
}

PlaceboRun run_placebo(const Panel& panel, int shift_months, const RunOptions& options) {
  if (shift_months == 0) fail_invalid("placebo shift must be nonzero");
  Panel prepared = prepare_panel(panel, options);
  Panel shifted = shift_launch_dates(prepared, shift_months);

  RunOptions effective = options;
  effective.cohorts = CohortGranularity::half_year;
  EventStudyProfile profile =
      event_study(shifted, to_imputation_options(effective), options.h_pre, options.h_post,
                  MissingUnitPolicy::drop);

  PlaceboRun out;
  out.profile = event_study_table(profile, options.h_post);

  // Significance among placebo coefficients whose window precedes the true
  // launches: all pre points and post points with h < shift.
  int n = 0, significant = 0;
  auto tally = [&](const EventStudyPoint& point) {
    if (point.se <= 0) return;
    ++n;
    if (std::abs(point.estimate) > kZ95 * point.se) ++significant;
  };
  for (const auto& point : profile.pre) tally(point);
  for (const auto& point : profile.post)
    if (point.h < shift_months) tally(point);

  double share = n > 0 ? static_cast<double>(significant) / n : 0.0;
  bool pass = share <= options.significance_share_threshold;
  out.summary = Table({"shift", "n_coefficients", "n_significant", "share", "pass"});
  out.summary.add_row({static_cast<double>(shift_months), static_cast<double>(n),
                       static_cast<double>(significant), share,
                       std::string(pass ? "yes" : "no")});
  return out;
}

Table run_heterogeneity(const Panel& panel, const std::string& attribute,
                        const RunOptions& options) {
  Panel prepared = prepare_panel(panel, options);
  HeterogeneityResult het = heterogeneity(prepared, attribute, to_imputation_options(options));

  Table table({"group", "tau", "se", "semi_elasticity_pct", "semi_elasticity_se_pct",
               "n_treated_cells", "p_equal"});
  table.add_row({std::string("above_median"), het.above.tau, het.above.se, het.above.semi_pct,
                 het.above.semi_se_pct, static_cast<double>(het.above.n_treated_cells),
                 std::string("")});
  table.add_row({std::string("below_median"), het.below.tau, het.below.se, het.below.semi_pct,
                 het.below.semi_se_pct, static_cast<double>(het.below.n_treated_cells),
                 std::string("")});
  table.add_row({std::string("contrast"), het.contrast.tau, het.contrast.se, std::string(""),
                 std::string(""), static_cast<double>(het.contrast.n_treated_cells),
                 het.contrast_p});
  return table;
}

Panel drop_winter_months(const Panel& panel) {
  Panel out = panel;
  for (int u = 0; u < out.n_units(); ++u)
    for (int t = 0; t < out.n_periods(); ++t) {
      int month = out.periods[t].month;
      if (month == 11 || month == 12 || month == 1 || month == 2) out.cell(u, t).reset();
    }
  return out;
}

SdidRun run_sdid(const Panel& panel, const SdidConfig& config, bool exclude_winter) {
  Panel prepared = panel.zero_policy_applied ? panel
                                             : apply_zero_policy(panel, ZeroPolicy::impute_one);
  if (exclude_winter) prepared = drop_winter_months(prepared);
  SdidResult result = sdid_run(prepared, config);

  SdidRun out;
  out.summary = Table({"scope", "adoption", "tau", "se_placebo", "mspe_monthly",
                       "n_treated_cells", "n_treated_units", "n_donors"});
  long treated_units = 0, treated_cells = 0;
  for (const auto& cohort : result.cohorts) {
    treated_units += static_cast<long>(cohort.treated_units.size());
    treated_cells += cohort.n_treated_cells;
  }
  out.summary.add_row({std::string("pooled"), std::string(""), result.tau_pooled,
                       result.se_placebo, result.mspe_monthly,
                       static_cast<double>(treated_cells), static_cast<double>(treated_units),
                       result.cohorts.empty()
                           ? 0.0
                           : static_cast<double>(result.cohorts.front().donor_units.size())});
  for (const auto& cohort : result.cohorts)
    out.summary.add_row({std::string("cohort"), cohort.adoption.str(), cohort.tau,
                         std::string(""), cohort.mspe_monthly,
                         static_cast<double>(cohort.n_treated_cells),
                         static_cast<double>(cohort.treated_units.size()),
                         static_cast<double>(cohort.donor_units.size())});

  out.weights = Table({"adoption", "kind", "key", "weight"});
  for (const auto& cohort : result.cohorts) {
    for (std::size_t j = 0; j < cohort.donor_units.size(); ++j)
      out.weights.add_row({cohort.adoption.str(), std::string("omega"),
                           prepared.units[cohort.donor_units[j]].unit_id,
                           cohort.omega(static_cast<Eigen::Index>(j))});
    int g = prepared.period_index(cohort.adoption);
    for (Eigen::Index t = 0; t < cohort.lambda.size(); ++t) {
      (void)g;
      out.weights.add_row({cohort.adoption.str(), std::string("lambda"),
                           prepared.periods[static_cast<std::size_t>(t)].str(),
                           cohort.lambda(t)});
    }
  }
  return out;
}

Table run_classic(const Panel& panel, const std::string& kind,
                  const std::string& options_json) {
  json j = parse_json(options_json, "classic options");
  check_keys(j, {"country_year_fe", "window", "lag", "attributes", "first_firm_outcome",
                 "include_never_treated", "zero_policy", "sample_start"});
  bool country_year = j.value("country_year_fe", false);

  auto prepared = [&] {
    return panel.zero_policy_applied ? panel : apply_zero_policy(panel, ZeroPolicy::impute_one);
  };

  if (kind == "twfe_ols" || kind == "twfe_ppml") {
    TwfeOptions options;
    options.ppml = kind == "twfe_ppml";
    options.extra_fe = country_year ? ExtraFe::country_year : ExtraFe::none;
    read_field(j, "include_never_treated", options.include_never_treated);
    TwfeResult result = twfe_dd(options.ppml ? panel : prepared(), options);
    Table table = estimate_table();
    add_estimate_row(table, result.estimate);
    return table;
  }
  if (kind == "iv_binary" || kind == "iv_firm_count") {
    IvSpec spec;
    if (j.contains("attributes"))
      for (const auto& a : j["attributes"]) spec.attributes.push_back(a.get<std::string>());
    else
      for (const auto& [name, value] : panel.units.front().attributes)
        spec.attributes.push_back(name);
    IvMargin margin = kind == "iv_binary" ? IvMargin::binary : IvMargin::firm_count;
    spec.driver = margin == IvMargin::binary ? IvTimeDriver::any_national_launch
                                             : IvTimeDriver::national_firm_count;
    IvResult result = iv_dd(prepared(), spec,
                            country_year ? ExtraFe::country_year : ExtraFe::none, margin);
    Table table({"estimand", "tau", "se", "semi_elasticity_pct", "semi_elasticity_se_pct",
                 "first_stage_F", "n_treated_cells", "n_total_cells", "n_units"});
    table.add_row({result.estimate.estimand, result.estimate.tau, result.estimate.se,
                   result.estimate.semi_pct, result.estimate.semi_se_pct,
                   result.first_stage_F, static_cast<double>(result.estimate.n_treated_cells),
                   static_cast<double>(result.estimate.n_total_cells),
                   static_cast<double>(result.estimate.n_units)});
    return table;
  }
  if (kind == "launch_timing") {
    std::vector<std::string> attributes;
    if (j.contains("attributes"))
      for (const auto& a : j["attributes"]) attributes.push_back(a.get<std::string>());
    return launch_timing_regression(panel, attributes);
  }
  if (kind == "neighbor_launch") {
    NeighborRegressionOptions options;
    read_field(j, "window", options.window);
    read_field(j, "first_firm_outcome", options.first_firm_outcome);
    if (j.contains("sample_start"))
      options.sample_start = PeriodId::parse(j["sample_start"].get<std::string>());
    return neighbor_launch_regression(panel, options);
  }
  if (kind == "pretrend_launch") {
    PretrendRegressionOptions options;
    read_field(j, "lag", options.lag);
    read_field(j, "first_firm_outcome", options.first_firm_outcome);
    return pretrend_launch_regression(prepared(), options);
  }
  fail_invalid("unknown diagnostic '" + kind +
               "'; valid kinds: twfe_ols twfe_ppml iv_binary iv_firm_count launch_timing "
               "neighbor_launch pretrend_launch");
}

Table run_series(const Panel& panel) {
  std::vector<double> logs = outcome_values(panel, OutcomeKind::log_accidents);
  Table table({"unit_id", "period", "log_accidents", "ma3"});
  for (int u = 0; u < panel.n_units(); ++u)
    for (int t = 0; t < panel.n_periods(); ++t) {
      double center = logs[static_cast<std::size_t>(u) * panel.n_periods() + t];
      if (std::isnan(center)) continue;
      // 3-month window, shorter at the series edges
      double sum = 0.0;
      int count = 0;
      for (int dt = -1; dt <= 1; ++dt) {
        int tt = t + dt;
        if (tt < 0 || tt >= panel.n_periods()) continue;
        double value = logs[static_cast<std::size_t>(u) * panel.n_periods() + tt];
        if (std::isnan(value)) continue;
        sum += value;
        ++count;
      }
      table.add_row({panel.units[u].unit_id, panel.periods[t].str(), center, sum / count});
    }
  return table;
}

Table run_monte_carlo(const std::string& config_json, McReport* report_out) {
  json j = parse_json(config_json, "monte carlo config");
  check_keys(j, {"estimator", "dgp", "reps", "threads", "seed", "failure_threshold"});
  if (!j.contains("estimator")) fail_invalid("monte carlo config: missing 'estimator'");

  DgpConfig dgp = parse_dgp_config(j.contains("dgp") ? j["dgp"].dump() : "");
  if (j.contains("seed")) dgp.seed = j["seed"].get<std::uint64_t>();
  int reps = j.value("reps", 200);
  int threads = j.value("threads", 1);
  double failure_threshold = j.value("failure_threshold", 0.05);

  const json& e = j["estimator"];
  check_keys(e, {"method", "preset", "cohorts", "include_never_treated", "unit_trends",
                 "attribute", "country_year_fe", "sdid"});
  EstimatorSpec spec;
  std::string method = e.value("method", "imputation");
  spec.name = method;
  if (method == "imputation")
    spec.method = EstimatorSpec::Method::imputation;
  else if (method == "twfe_ols")
    spec.method = EstimatorSpec::Method::twfe_ols;
  else if (method == "twfe_ppml")
    spec.method = EstimatorSpec::Method::twfe_ppml;
  else if (method == "annual_dd")
    spec.method = EstimatorSpec::Method::annual_dd;
  else if (method == "sdid")
    spec.method = EstimatorSpec::Method::sdid;
  else
    fail_invalid("estimator.method must be imputation, twfe_ols, twfe_ppml, annual_dd or sdid");

  if (e.contains("preset")) {
    std::string preset = e["preset"].get<std::string>();
    if (preset == "all_post")
      spec.scheme = WeightScheme::all_post();
    else if (preset == "incl_never_treated") {
      spec.scheme = WeightScheme::all_post();
      spec.imputation.include_never_treated = true;
    } else if (preset == "first_12")
      spec.scheme = WeightScheme::first_k(12);
    else if (preset == "non_winter")
      spec.scheme = WeightScheme::non_winter();
    else if (preset == "winter")
      spec.scheme = WeightScheme::winter();
    else if (preset == "excl_covid")
      spec.scheme = WeightScheme::excl_covid();
    else if (preset == "contrast")
      spec.scheme = WeightScheme::contrast();
    else
      fail_invalid("unknown estimator.preset '" + preset + "'");
    spec.name += ":" + preset;
  }
  if (e.contains("cohorts")) {
    std::string cohorts = e["cohorts"].get<std::string>();
    spec.imputation.cohorts = cohorts == "half_year" ? CohortGranularity::half_year
                                                     : CohortGranularity::quarter;
  }
  read_field(e, "include_never_treated", spec.imputation.include_never_treated);
  read_field(e, "unit_trends", spec.imputation.unit_trends);
  read_field(e, "attribute", spec.attribute);
  if (e.contains("country_year_fe") && e["country_year_fe"].get<bool>())
    spec.twfe.extra_fe = ExtraFe::country_year;
  if (e.contains("sdid")) spec.sdid = parse_sdid_config(e["sdid"].dump());

  McReport report = monte_carlo(spec, dgp, reps, threads, failure_threshold);
  if (report_out != nullptr) *report_out = report;

  Table table({"estimator", "reps", "failed", "mean_estimate", "mean_truth", "bias", "rmse",
               "empirical_sd", "mean_se", "coverage95"});
  table.add_row({report.estimator, static_cast<double>(report.reps),
                 static_cast<double>(report.failed), report.mean_estimate, report.mean_truth,
                 report.bias, report.rmse, report.empirical_sd, report.mean_se,
                 report.coverage95});
  return table;
}

}  // namespace didlab
