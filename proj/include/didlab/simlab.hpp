#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "didlab/classic.hpp"
#include "didlab/imputation.hpp"
#include "didlab/panel.hpp"
#include "didlab/sdid.hpp"
#include "didlab/weights.hpp"

namespace didlab {

// Ground-truth generator for the log-linear two-way model: counts are
// exp(alpha_i + beta_t + tau_it d_it + eps_it), rounded, Poisson-drawn, or
// kept continuous for exactness tests.
struct EffectProfile {
  enum class Kind { zero, constant, linear_growth, seasonal, by_group };
  Kind kind = Kind::zero;
  double tau = 0.0;                              // constant
  double rate = 0.0;                             // linear_growth: tau = rate * (h + 1)
  double tau_nonwinter = 0.0, tau_winter = 0.0;  // seasonal (winter = Nov-Feb)
  double tau_above = 0.0, tau_below = 0.0;       // by_group via country-median split
};

struct LaunchProcess {
  enum class Kind { none, uniform_random, attribute_correlated, shock_correlated };
  Kind kind = Kind::uniform_random;
  // month indices relative to the panel start; the window may extend past the
  // panel end, producing yet-to-be-treated units
  int window_start = 24;
  int window_end = 78;
  double strength = 0.0;
  // shock_correlated only: per-month hazard response to the national wave,
  // tilted by the unit attribute so interaction instruments have a first stage
  double wave_response = 0.05;
  std::string attribute = "x";  // or "population"
};

struct DgpConfig {
  int n_units = 93;
  int n_periods = 66;
  PeriodId start{2016, 1};
  int n_countries = 6;
  double base_log_rate = 4.5;
  double unit_effect_sd = 0.4;
  double seasonal_amplitude = 0.15;
  double seasonal_phase = 0.0;
  double calendar_trend = 0.0;  // log drift per month
  EffectProfile profile;
  LaunchProcess launch;
  enum class Noise { lognormal, poisson };
  Noise noise = Noise::lognormal;
  double sigma = 0.1;
  double noise_ar1 = 0.0;  // within-unit AR(1) in the log shocks
  bool continuous_outcome = false;  // skip rounding; exactness tests
  double extra_firm_rate = 0.0;     // per-month hazard of an additional firm after launch
  std::string group_attribute = "x";
  std::uint64_t seed = 1;

  void validate() const;
};

struct TruthRecord {
  std::vector<double> tau;  // per grid cell; NaN where untreated
  std::vector<bool> side;   // country-median side per unit (by_group profiles)
  bool has_sides = false;
};

std::pair<Panel, TruthRecord> generate(const DgpConfig& config);

// Exact weighted average of the true cell effects under a scheme.
double true_estimand(const Panel& panel, const TruthRecord& truth, const WeightScheme& scheme);

// A named estimator run by the Monte Carlo driver.
struct EstimatorSpec {
  enum class Method { imputation, twfe_ols, twfe_ppml, annual_dd, sdid };
  Method method = Method::imputation;
  std::string name = "imputation";
  WeightScheme scheme = WeightScheme::all_post();
  std::string attribute = "x";  // grouping attribute for contrast schemes
  ImputationOptions imputation;
  TwfeOptions twfe;
  SdidConfig sdid;
  bool sdid_placebo_se = false;  // placebo SE per rep is expensive; off by default
};

struct EstimateRun {
  double estimate = 0.0;
  double se = 0.0;
  double truth = 0.0;
};

EstimateRun run_estimator(const EstimatorSpec& spec, const Panel& panel,
                          const TruthRecord& truth);

struct McReport {
  std::string estimator;
  int reps = 0;
  int failed = 0;
  double mean_estimate = 0.0;
  double mean_truth = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double empirical_sd = 0.0;   // population SD of the errors, so rmse^2 = bias^2 + sd^2
  double mean_se = 0.0;
  double coverage95 = 0.0;
  double mean_ms_per_rep = 0.0;
  double total_seconds = 0.0;
  std::vector<double> estimates;  // per successful rep, in rep order
  std::vector<double> truths;
};

// Runs generate -> estimate with per-rep derived seeds; results do not depend
// on the thread count. Aborts with a partial report when the failure share
// exceeds the threshold.
McReport monte_carlo(const EstimatorSpec& spec, const DgpConfig& config, int reps,
                     int threads = 1, double failure_threshold = 0.05);

}  // namespace didlab
