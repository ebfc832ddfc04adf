// didlab command-line front end. Talks to the estimation core exclusively
// through the C API in didlab.h.
//
// Exit codes: 0 success, 1 estimation failure, 2 usage or input error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "didlab.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitEstimation = 1;
constexpr int kExitUsage = 2;

int exit_code_for(int didlab_code) {
  switch (didlab_code) {
    case DIDLAB_OK:
      return kExitOk;
    case DIDLAB_ERR_ESTIMATION:
      return kExitEstimation;
    default:
      return kExitUsage;
  }
}

[[noreturn]] void die(int didlab_code, const std::string& context) {
  std::cerr << "didlab: " << context << ": " << didlab_last_error() << "\n";
  std::exit(exit_code_for(didlab_code));
}

struct PanelDeleter {
  void operator()(didlab_panel* p) const { didlab_panel_free(p); }
};
struct TableDeleter {
  void operator()(didlab_table* t) const { didlab_table_free(t); }
};
using PanelPtr = std::unique_ptr<didlab_panel, PanelDeleter>;
using TablePtr = std::unique_ptr<didlab_table, TableDeleter>;

struct CommonArgs {
  std::string units, panel, firms;
  std::string out_dir = ".";
  std::string format = "csv";
  std::string cohorts = "quarter";
  std::string outcome = "log_accidents";
  bool include_never = false;
  bool trends = false;
  bool project_severity = false;
  std::uint64_t seed = 1;
  int h_pre = 12, h_post = 18;
  std::string cohort_merge_until, cohort_merge_since;
};

void add_input_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--units", args.units, "units.csv path")->required();
  cmd->add_option("--panel", args.panel, "panel.csv path")->required();
  cmd->add_option("--firms", args.firms, "firm_launches.csv path");
}

void add_output_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--out", args.out_dir, "output directory (default: .)");
  cmd->add_option("--format", args.format, "csv or structured (default: csv)")
      ->check(CLI::IsMember({"csv", "structured"}));
}

void add_pipeline_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--cohorts", args.cohorts, "leave-out cohort granularity")
      ->check(CLI::IsMember({"quarter", "half_year"}));
  cmd->add_option("--outcome", args.outcome, "log_accidents or slight_share")
      ->check(CLI::IsMember({"log_accidents", "slight_share"}));
  cmd->add_flag("--include-never", args.include_never, "add never-treated units to the sample");
  cmd->add_flag("--trends", args.trends, "allow city-specific linear time trends");
  cmd->add_flag("--project-severity", args.project_severity,
                "project victim shares onto the accident-share scale first");
  cmd->add_option("--seed", args.seed, "seed for all randomized steps");
  cmd->add_option("--cohort-merge-until", args.cohort_merge_until,
                  "merge cohorts launched on/before YYYY-MM");
  cmd->add_option("--cohort-merge-since", args.cohort_merge_since,
                  "merge cohorts launched on/after YYYY-MM");
}

std::string options_json(const CommonArgs& args) {
  std::ostringstream json;
  json << "{\"cohorts\":\"" << args.cohorts << "\",\"outcome\":\"" << args.outcome << "\""
       << ",\"include_never_treated\":" << (args.include_never ? "true" : "false")
       << ",\"unit_trends\":" << (args.trends ? "true" : "false")
       << ",\"project_severity\":" << (args.project_severity ? "true" : "false")
       << ",\"seed\":" << args.seed
       << ",\"h_pre\":" << args.h_pre << ",\"h_post\":" << args.h_post;
  if (!args.cohort_merge_until.empty())
    json << ",\"cohort_merge_until\":\"" << args.cohort_merge_until << "\"";
  if (!args.cohort_merge_since.empty())
    json << ",\"cohort_merge_since\":\"" << args.cohort_merge_since << "\"";
  json << "}";
  return json.str();
}

PanelPtr load_panel(const CommonArgs& args) {
  didlab_panel* panel = nullptr;
  int rc = didlab_panel_load(args.units.c_str(), args.panel.c_str(),
                             args.firms.empty() ? nullptr : args.firms.c_str(), nullptr, &panel);
  if (rc != DIDLAB_OK) die(rc, "loading panel");
  return PanelPtr(panel);
}

void print_table(const didlab_table* table) {
  int rows = didlab_table_n_rows(table), cols = didlab_table_n_cols(table);
  for (int c = 0; c < cols; ++c) std::cout << (c ? "," : "") << didlab_table_column(table, c);
  std::cout << "\n";
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const char* text = didlab_table_text(table, r, c);
      std::cout << (c ? "," : "") << (text ? text : "");
    }
    std::cout << "\n";
  }
}

void emit(const didlab_table* table, const CommonArgs& args, const std::string& filename) {
  if (args.format == "structured") {
    print_table(table);
    return;
  }
  std::filesystem::create_directories(args.out_dir);
  std::string path = (std::filesystem::path(args.out_dir) / filename).string();
  int rc = didlab_table_write_csv(table, path.c_str());
  if (rc != DIDLAB_OK) die(rc, "writing " + path);
  std::cerr << "wrote " << path << "\n";
}

std::string read_file_or_die(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "didlab: cannot open config file: " << path << "\n";
    std::exit(kExitUsage);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"didlab — staggered-rollout difference-in-differences toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(didlab_version()));

  CommonArgs args;

  // estimate
  auto* estimate = app.add_subcommand("estimate", "imputation / annual-DD estimand presets");
  std::string preset = "all_post";
  add_input_flags(estimate, args);
  add_output_flags(estimate, args);
  add_pipeline_flags(estimate, args);
  estimate->add_option("--preset", preset,
                       "all_post incl_never_treated first_12 non_winter winter excl_covid "
                       "annual_dd annual_dd_never");

  // het
  auto* het = app.add_subcommand("het", "country-median heterogeneity contrast");
  std::string attribute;
  add_input_flags(het, args);
  add_output_flags(het, args);
  add_pipeline_flags(het, args);
  het->add_option("--attribute", attribute, "unit attribute for the median split")->required();

  // event-study
  auto* events = app.add_subcommand("event-study", "monthly profile with pre-trends");
  add_input_flags(events, args);
  add_output_flags(events, args);
  add_pipeline_flags(events, args);
  events->add_option("--h-pre", args.h_pre, "pre-treatment window (default 12)");
  events->add_option("--h-post", args.h_post, "post-treatment window (default 18)");

  // placebo
  auto* placebo = app.add_subcommand("placebo", "event studies under shifted launch dates");
  std::vector<int> shifts{12, 24};
  add_input_flags(placebo, args);
  add_output_flags(placebo, args);
  add_pipeline_flags(placebo, args);
  placebo->add_option("--shift", shifts, "months shifted into the past (repeatable)");

  // sdid
  auto* sdid = app.add_subcommand("sdid", "staggered synthetic difference-in-differences");
  std::string sdid_config_path;
  bool exclude_winter = false;
  int placebo_reps = 250;
  add_input_flags(sdid, args);
  add_output_flags(sdid, args);
  sdid->add_option("--config", sdid_config_path, "JSON config file");
  sdid->add_flag("--exclude-winter", exclude_winter, "drop Nov-Feb cells before estimation");
  sdid->add_option("--placebo-reps", placebo_reps, "placebo variance replications (default 250)");
  sdid->add_option("--seed", args.seed, "seed for placebo reassignment");

  // diag
  auto* diag = app.add_subcommand("diag", "comparison estimators and launch diagnostics");
  std::string diag_kind = "twfe_ols";
  bool country_year = false;
  int window = 2, lag = 12;
  add_input_flags(diag, args);
  add_output_flags(diag, args);
  diag->add_option("--kind", diag_kind,
                   "twfe_ols twfe_ppml iv_binary iv_firm_count launch_timing "
                   "neighbor_launch pretrend_launch")
      ->required();
  diag->add_flag("--country-year-fe", country_year, "absorb country-by-year effects");
  diag->add_option("--window", window, "recency window in months (neighbor_launch)");
  diag->add_option("--lag", lag, "difference horizon in months (pretrend_launch)");

  // series
  auto* series = app.add_subcommand("series", "3-month moving averages of log accidents");
  add_input_flags(series, args);
  add_output_flags(series, args);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "write a ground-truth panel to CSV");
  std::string dgp_config_path;
  add_output_flags(simulate, args);
  simulate->add_option("--config", dgp_config_path, "JSON DGP config file");
  simulate->add_option("--seed", args.seed, "DGP seed");

  // montecarlo
  auto* montecarlo = app.add_subcommand("montecarlo", "estimator validation runs");
  std::string mc_config_path;
  add_output_flags(montecarlo, args);
  montecarlo->add_option("--config", mc_config_path, "JSON Monte Carlo config file")->required();
  montecarlo->add_option("--seed", args.seed, "overrides the config seed");

  // cost
  auto* cost = app.add_subcommand("cost", "socio-economic cost projection");
  double effect_pct = 0.0, baseline = 0.0, cost_per_accident = 0.0;
  cost->add_option("--effect-pct", effect_pct, "effect size in percent")->required();
  cost->add_option("--baseline", baseline, "baseline monthly accidents")->required();
  cost->add_option("--cost-per-accident", cost_per_accident, "cost per accident")->required();

  CLI11_PARSE(app, argc, argv);

  if (estimate->parsed()) {
    PanelPtr panel = load_panel(args);
    didlab_table* table = nullptr;
    int rc = didlab_estimate(panel.get(), preset.c_str(), options_json(args).c_str(), &table);
    if (rc != DIDLAB_OK) die(rc, "estimate");
    TablePtr guard(table);
    emit(table, args, "estimates.csv");
    return kExitOk;
  }

  if (het->parsed()) {
    PanelPtr panel = load_panel(args);
    didlab_table* table = nullptr;
    int rc = didlab_heterogeneity(panel.get(), attribute.c_str(), options_json(args).c_str(),
                                  &table);
    if (rc != DIDLAB_OK) die(rc, "heterogeneity");
    TablePtr guard(table);
    emit(table, args, "heterogeneity.csv");
    return kExitOk;
  }

  if (events->parsed()) {
    PanelPtr panel = load_panel(args);
    didlab_table* table = nullptr;
    int rc = didlab_event_study(panel.get(), options_json(args).c_str(), &table);
    if (rc != DIDLAB_OK) die(rc, "event study");
    TablePtr guard(table);
    emit(table, args, "event_study.csv");
    return kExitOk;
  }

  if (placebo->parsed()) {
    PanelPtr panel = load_panel(args);
    for (int shift : shifts) {
      didlab_table* profile = nullptr;
      didlab_table* summary = nullptr;
      int rc = didlab_placebo(panel.get(), shift, options_json(args).c_str(), &profile, &summary);
      if (rc != DIDLAB_OK) die(rc, "placebo shift " + std::to_string(shift));
      TablePtr profile_guard(profile), summary_guard(summary);
      emit(profile, args, "placebo_" + std::to_string(shift) + ".csv");
      emit(summary, args, "placebo_" + std::to_string(shift) + "_summary.csv");
    }
    return kExitOk;
  }

  if (sdid->parsed()) {
    PanelPtr panel = load_panel(args);
    std::string config = sdid_config_path.empty() ? "{}" : read_file_or_die(sdid_config_path);
    // command-line flags override the config file
    {
      std::ostringstream patch;
      patch << config.substr(0, config.find_last_of('}'))
            << (config.find_first_not_of("{} \n\t") == std::string::npos ? "" : ",")
            << "\"exclude_winter\":" << (exclude_winter ? "true" : "false")
            << ",\"placebo_reps\":" << placebo_reps << ",\"seed\":" << args.seed << "}";
      config = patch.str();
    }
    didlab_table* table = nullptr;
    didlab_table* weights = nullptr;
    int rc = didlab_sdid(panel.get(), config.c_str(), &table, &weights);
    if (rc != DIDLAB_OK) die(rc, "sdid");
    TablePtr guard(table), weights_guard(weights);
    emit(table, args, "sdid.csv");
    emit(weights, args, "sdid_weights.csv");
    return kExitOk;
  }

  if (diag->parsed()) {
    PanelPtr panel = load_panel(args);
    std::ostringstream options;
    options << "{\"country_year_fe\":" << (country_year ? "true" : "false")
            << ",\"window\":" << window << ",\"lag\":" << lag << "}";
    didlab_table* table = nullptr;
    int rc = didlab_classic(panel.get(), diag_kind.c_str(), options.str().c_str(), &table);
    if (rc != DIDLAB_OK) die(rc, "diagnostic " + diag_kind);
    TablePtr guard(table);
    emit(table, args, diag_kind + ".csv");
    return kExitOk;
  }

  if (series->parsed()) {
    PanelPtr panel = load_panel(args);
    didlab_table* table = nullptr;
    int rc = didlab_series(panel.get(), &table);
    if (rc != DIDLAB_OK) die(rc, "series");
    TablePtr guard(table);
    emit(table, args, "series.csv");
    return kExitOk;
  }

  if (simulate->parsed()) {
    std::string config = dgp_config_path.empty() ? "{}" : read_file_or_die(dgp_config_path);
    {
      std::ostringstream patch;
      patch << config.substr(0, config.find_last_of('}'))
            << (config.find_first_not_of("{} \n\t") == std::string::npos ? "" : ",")
            << "\"seed\":" << args.seed << "}";
      config = patch.str();
    }
    didlab_panel* panel = nullptr;
    int rc = didlab_panel_simulate(config.c_str(), &panel);
    if (rc != DIDLAB_OK) die(rc, "simulate");
    PanelPtr guard(panel);
    std::filesystem::create_directories(args.out_dir);
    auto path = [&](const char* name) {
      return (std::filesystem::path(args.out_dir) / name).string();
    };
    rc = didlab_panel_save(panel, path("units.csv").c_str(), path("panel.csv").c_str(),
                           path("firm_launches.csv").c_str());
    if (rc != DIDLAB_OK) die(rc, "writing simulated panel");
    std::cerr << "wrote " << path("units.csv") << ", " << path("panel.csv") << ", "
              << path("firm_launches.csv") << "\n";
    return kExitOk;
  }

  if (montecarlo->parsed()) {
    std::string config = read_file_or_die(mc_config_path);
    if (montecarlo->count("--seed") > 0) {
      std::ostringstream patch;
      patch << config.substr(0, config.find_last_of('}')) << ",\"seed\":" << args.seed << "}";
      config = patch.str();
    }
    didlab_table* table = nullptr;
    int rc = didlab_monte_carlo(config.c_str(), &table);
    if (rc != DIDLAB_OK) die(rc, "montecarlo");
    TablePtr guard(table);
    emit(table, args, "mc_report.csv");
    return kExitOk;
  }

  if (cost->parsed()) {
    double monthly = 0.0, annual = 0.0;
    int rc = didlab_cost_projection(effect_pct, baseline, cost_per_accident, &monthly, &annual);
    if (rc != DIDLAB_OK) die(rc, "cost projection");
    std::printf("monthly_cost,%.2f\nannual_cost,%.2f\n", monthly, annual);
    return kExitOk;
  }

  return kExitUsage;
}
