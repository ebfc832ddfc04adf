#include "didlab/simlab.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "didlab/errors.hpp"
#include "didlab/rng.hpp"

namespace didlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ95 = 1.959964;
constexpr double kPi = 3.14159265358979323846;

// Fixed month-of-year offsets layered on the seasonal sinusoid.
constexpr std::array<double, 12> kMonthOffsets = {0.02,  -0.01, 0.015,  0.0,  -0.02, 0.01,
                                                  0.03,  0.005, -0.005, 0.02, -0.03, -0.015};

bool is_winter_month(int month) { return month == 11 || month == 12 || month <= 2; }

}  // namespace

void DgpConfig::validate() const {
  if (n_units < 4) fail_invalid("dgp: need at least 4 units");
  if (n_periods < 2) fail_invalid("dgp: need at least 2 periods");
  if (sigma < 0) fail_invalid("dgp: sigma must be nonnegative");
  if (launch.kind != LaunchProcess::Kind::none) {
    if (launch.window_start < 1 || launch.window_start >= launch.window_end)
      fail_invalid("dgp: launch window must start inside the panel and be nonempty");
  }
  if (noise_ar1 < 0.0 || noise_ar1 >= 1.0) fail_invalid("dgp: noise_ar1 must be in [0, 1)");
  double peak = base_log_rate + 4 * unit_effect_sd + seasonal_amplitude +
                std::abs(calendar_trend) * n_periods + 6 * sigma + 1.0;
  if (peak > 25.0) fail_invalid("dgp: configuration risks overflow in exp()");
}

std::pair<Panel, TruthRecord> generate(const DgpConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> stdnormal(0.0, 1.0);

  Panel panel;
  panel.frequency = Frequency::monthly;
  panel.periods.reserve(config.n_periods);
  for (int t = 0; t < config.n_periods; ++t) panel.periods.push_back(config.start.plus_months(t));

  // Units: country round-robin, lognormal population,一 standard-normal
  // grouping attribute, coordinates in a European-ish box.
  panel.units.resize(config.n_units);
  for (int u = 0; u < config.n_units; ++u) {
    UnitMeta& unit = panel.units[u];
    unit.unit_id = "city" + std::to_string(u + 1);
    unit.country = "C" + std::to_string(u % config.n_countries + 1);
    unit.population = static_cast<long long>(100000.0 * std::exp(0.8 * stdnormal(rng)) + 100000.0);
    unit.latitude = 45.0 + 15.0 * (0.5 + 0.5 * std::tanh(stdnormal(rng)));
    unit.longitude = 5.0 + 20.0 * (0.5 + 0.5 * std::tanh(stdnormal(rng)));
    unit.attributes[config.group_attribute] = stdnormal(rng);
  }

  std::vector<double> alpha(config.n_units);
  for (int u = 0; u < config.n_units; ++u)
    alpha[u] = config.base_log_rate + config.unit_effect_sd * stdnormal(rng);

  std::vector<double> beta(config.n_periods);
  for (int t = 0; t < config.n_periods; ++t) {
    int month = panel.periods[t].month;
    beta[t] = config.seasonal_amplitude *
                  std::sin(2.0 * kPi * (month - 1 + config.seasonal_phase) / 12.0) +
              kMonthOffsets[static_cast<std::size_t>(month - 1)] + config.calendar_trend * t;
  }

  // Shocks before launches so shock-correlated timing can condition on them.
  std::vector<double> eps(static_cast<std::size_t>(config.n_units) * config.n_periods, 0.0);
  if (config.noise == DgpConfig::Noise::lognormal && config.sigma > 0) {
    double rho = std::clamp(config.noise_ar1, 0.0, 0.99);
    double innovation_sd = config.sigma * std::sqrt(1.0 - rho * rho);
    for (int u = 0; u < config.n_units; ++u)
      for (int t = 0; t < config.n_periods; ++t) {
        std::size_t i = static_cast<std::size_t>(u) * config.n_periods + t;
        double previous = t > 0 ? eps[i - 1] : 0.0;
        eps[i] = t > 0 ? rho * previous + innovation_sd * stdnormal(rng)
                       : config.sigma * stdnormal(rng);
      }
  }

  // Launch processes. Launches may land past the panel end: the unit is then
  // yet-to-be-treated within the sample.
  auto uniform_int = [&](int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  const int span = config.launch.window_end - config.launch.window_start;
  for (int u = 0; u < config.n_units; ++u) {
    UnitMeta& unit = panel.units[u];
    std::optional<int> launch_idx;
    switch (config.launch.kind) {
      case LaunchProcess::Kind::none:
        break;
      case LaunchProcess::Kind::uniform_random:
        launch_idx = uniform_int(config.launch.window_start, config.launch.window_end - 1);
        break;
      case LaunchProcess::Kind::attribute_correlated: {
        double z;
        if (config.launch.attribute == "population")
          z = (std::log(static_cast<double>(unit.population)) - 12.0) / 0.8;
        else
          z = unit.attributes.at(config.launch.attribute);
        double mid = config.launch.window_start + span / 2.0;
        double raw = mid - config.launch.strength * z * (span / 4.0) +
                     (span / 4.0) * stdnormal(rng);
        launch_idx = std::clamp(static_cast<int>(std::lround(raw)),
                                config.launch.window_start, config.launch.window_end - 1);
        break;
      }
      case LaunchProcess::Kind::shock_correlated: {
        // Hazard rises with the unit's contemporaneous outcome shock (the
        // identification threat) and with the national wave, more strongly
        // for high-attribute units so interaction instruments stay relevant.
        double base_hazard = 1.2 / span;
        double attr = unit.attributes.at(config.group_attribute);
        for (int t = config.launch.window_start;
             t < config.launch.window_end && t < config.n_periods; ++t) {
          double shock = eps[static_cast<std::size_t>(u) * config.n_periods + t];
          int national = 0, peers = 0;
          for (int v = 0; v < u; ++v) {
            // earlier-indexed units' launches are already drawn
            if (panel.units[v].country != unit.country) continue;
            ++peers;
            if (panel.units[v].launch.has_value() &&
                *panel.units[v].launch <= panel.periods[static_cast<std::size_t>(t)])
              ++national;
          }
          double wave = peers > 0 ? static_cast<double>(national) / peers : 0.0;
          double p = std::clamp(base_hazard + config.launch.strength * shock +
                                    config.launch.wave_response * (1.0 + 0.8 * attr) * wave,
                                0.005, 0.95);
          double draw = static_cast<double>(rng() >> 11) * 0x1.0p-53;
          if (draw < p) {
            launch_idx = t;
            break;
          }
        }
        if (!launch_idx) launch_idx = config.launch.window_end;  // beyond the panel
        break;
      }
    }
    if (launch_idx) {
      unit.launch = config.start.plus_months(*launch_idx);
      std::string firm = "firm" + std::to_string(static_cast<int>(rng() % 8) + 1);
      unit.firm_launches.emplace_back(firm, *unit.launch);
      if (config.extra_firm_rate > 0) {
        int next_firm = 2;
        for (int t = *launch_idx + 1; t < config.n_periods; ++t) {
          double draw = static_cast<double>(rng() >> 11) * 0x1.0p-53;
          if (draw < config.extra_firm_rate) {
            unit.firm_launches.emplace_back(
                firm + "_" + std::to_string(next_firm++), config.start.plus_months(t));
          }
        }
      }
    }
  }

  // Group sides for by_group effects.
  TruthRecord truth;
  truth.tau.assign(static_cast<std::size_t>(config.n_units) * config.n_periods, kNaN);
  if (config.profile.kind == EffectProfile::Kind::by_group) {
    GroupAssignment groups = country_median_split(panel, config.group_attribute);
    truth.side.assign(groups.side.begin(), groups.side.end());
    truth.has_sides = true;
  }

  auto true_tau = [&](int u, int t) -> double {
    switch (config.profile.kind) {
      case EffectProfile::Kind::zero:
        return 0.0;
      case EffectProfile::Kind::constant:
        return config.profile.tau;
      case EffectProfile::Kind::linear_growth: {
        long h = *panel.event_time(u, t);
        return config.profile.rate * static_cast<double>(h + 1);
      }
      case EffectProfile::Kind::seasonal:
        return is_winter_month(panel.periods[t].month) ? config.profile.tau_winter
                                                       : config.profile.tau_nonwinter;
      case EffectProfile::Kind::by_group:
        return truth.side[u] ? config.profile.tau_above : config.profile.tau_below;
    }
    return 0.0;
  };

  panel.cells.assign(static_cast<std::size_t>(config.n_units) * config.n_periods, std::nullopt);
  for (int u = 0; u < config.n_units; ++u)
    for (int t = 0; t < config.n_periods; ++t) {
      double log_mean = alpha[u] + beta[t];
      bool treated = panel.treated(u, t);
      if (treated) {
        double tau = true_tau(u, t);
        truth.tau[static_cast<std::size_t>(u) * config.n_periods + t] = tau;
        log_mean += tau;
      }
      OutcomeCell cell;
      if (config.noise == DgpConfig::Noise::poisson) {
        double lambda = std::exp(log_mean + eps[static_cast<std::size_t>(u) * config.n_periods + t]);
        if (config.continuous_outcome) {
          cell.accidents = lambda;
        } else {
          std::poisson_distribution<long> pois(lambda);
          cell.accidents = static_cast<double>(pois(rng));
        }
      } else {
        double value = std::exp(log_mean + eps[static_cast<std::size_t>(u) * config.n_periods + t]);
        cell.accidents = config.continuous_outcome ? value
                                                   : static_cast<double>(std::llround(value));
      }
      panel.cell(u, t) = cell;
    }
  panel.zero_policy_applied = config.continuous_outcome;
  return {std::move(panel), std::move(truth)};
}

double true_estimand(const Panel& panel, const TruthRecord& truth, const WeightScheme& scheme) {
  std::vector<std::pair<int, int>> support;
  for (int u = 0; u < panel.n_units(); ++u)
    for (int t = 0; t < panel.n_periods(); ++t)
      if (std::isfinite(truth.tau[static_cast<std::size_t>(u) * panel.n_periods() + t]))
        support.emplace_back(u, t);
  if (support.empty()) fail_estimation("true_estimand: no treated cells");

  GroupAssignment groups;
  const GroupAssignment* groups_ptr = nullptr;
  if (scheme.needs_groups()) {
    if (!truth.has_sides) fail_invalid("true_estimand: scheme needs groups but truth has none");
    groups.side.assign(truth.side.begin(), truth.side.end());
    groups_ptr = &groups;
  }
  CellWeights weights = derive_weights(scheme, panel, support, groups_ptr);
  double total = 0.0;
  for (std::size_t i = 0; i < weights.cells.size(); ++i) {
    auto [u, t] = weights.cells[i];
    total += weights.weight[i] * truth.tau[static_cast<std::size_t>(u) * panel.n_periods() + t];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Estimator dispatch
// ---------------------------------------------------------------------------

EstimateRun run_estimator(const EstimatorSpec& spec, const Panel& panel,
                          const TruthRecord& truth) {
  EstimateRun out;
  Panel prepared = panel.zero_policy_applied ? panel : apply_zero_policy(panel, ZeroPolicy::impute_one);

  switch (spec.method) {
    case EstimatorSpec::Method::imputation: {
      if (spec.scheme.needs_groups()) {
        HeterogeneityResult het = heterogeneity(prepared, spec.attribute, spec.imputation);
        const EffectEstimate& pick = spec.scheme.kind == WeightScheme::Kind::group_contrast
                                         ? het.contrast
                                         : (spec.scheme.side_above ? het.above : het.below);
        out.estimate = pick.tau;
        out.se = pick.se;
      } else {
        ImputationPipeline pipeline(prepared, spec.imputation);
        EffectEstimate est = pipeline.estimate(spec.scheme);
        out.estimate = est.tau;
        out.se = est.se;
      }
      out.truth = true_estimand(panel, truth, spec.scheme);
      return out;
    }
    case EstimatorSpec::Method::twfe_ols:
    case EstimatorSpec::Method::twfe_ppml: {
      TwfeOptions options = spec.twfe;
      options.ppml = spec.method == EstimatorSpec::Method::twfe_ppml;
      TwfeResult res = twfe_dd(options.ppml ? panel : prepared, options);
      out.estimate = res.estimate.tau;
      out.se = res.estimate.se;
      out.truth = true_estimand(panel, truth, WeightScheme::all_post());
      return out;
    }
    case EstimatorSpec::Method::annual_dd: {
      int pre = panel.periods.front().year;
      int post = pre + 2 <= panel.periods.back().year ? pre + 2 : panel.periods.back().year;
      AnnualAggregationRule rule;
      rule.treat_from = PeriodId{pre + 1, 1};
      rule.treat_to = PeriodId{pre + 1, 12};
      rule.control_from = PeriodId{post, 7};
      AnnualPanel annual = aggregate_annual(prepared, pre, post, rule);
      EffectEstimate est = annual_dd(annual);
      out.estimate = est.tau;
      out.se = est.se;
      out.truth = true_estimand(panel, truth, WeightScheme::all_post());
      return out;
    }
    case EstimatorSpec::Method::sdid: {
      SdidResult res = spec.sdid_placebo_se ? sdid_run(prepared, spec.sdid)
                                            : sdid_estimate(prepared, spec.sdid);
      out.estimate = res.tau_pooled;
      out.se = res.se_placebo;
      out.truth = true_estimand(panel, truth, WeightScheme::all_post());
      return out;
    }
  }
  fail_invalid("run_estimator: unknown method");
}

McReport monte_carlo(const EstimatorSpec& spec, const DgpConfig& config, int reps, int threads,
                     double failure_threshold) {
  if (reps < 2) fail_invalid("monte_carlo: reps must be at least 2");
  if (threads < 1) threads = 1;

  struct Slot {
    double estimate = kNaN, se = kNaN, truth = kNaN, ms = 0.0;
    bool ok = false;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(reps));
  std::atomic<int> cursor{0};
  auto t_start = std::chrono::steady_clock::now();

  auto worker = [&]() {
    for (;;) {
      int rep = cursor.fetch_add(1);
      if (rep >= reps) return;
      auto rep_start = std::chrono::steady_clock::now();
      DgpConfig rep_config = config;
      rep_config.seed = mix_seed(config.seed, static_cast<std::uint64_t>(rep));
      Slot& slot = slots[static_cast<std::size_t>(rep)];
      try {
        auto [panel, truth] = generate(rep_config);
        EstimateRun run = run_estimator(spec, panel, truth);
        slot.estimate = run.estimate;
        slot.se = run.se;
        slot.truth = run.truth;
        slot.ok = std::isfinite(run.estimate);
      } catch (const Error&) {
        slot.ok = false;
      }
      slot.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          rep_start)
                    .count();
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  McReport report;
  report.estimator = spec.name;
  report.reps = reps;
  double sum_ms = 0.0;
  std::vector<double> errors;
  for (const Slot& slot : slots) {
    sum_ms += slot.ms;
    if (!slot.ok) {
      ++report.failed;
      continue;
    }
    report.estimates.push_back(slot.estimate);
    report.truths.push_back(slot.truth);
    errors.push_back(slot.estimate - slot.truth);
  }
  if (static_cast<double>(report.failed) > failure_threshold * reps)
    fail_estimation("monte_carlo: failure rate " + std::to_string(report.failed) + "/" +
                    std::to_string(reps) + " exceeds the threshold");
  const double n = static_cast<double>(report.estimates.size());
  report.mean_estimate = std::accumulate(report.estimates.begin(), report.estimates.end(), 0.0) / n;
  report.mean_truth = std::accumulate(report.truths.begin(), report.truths.end(), 0.0) / n;
  report.bias = std::accumulate(errors.begin(), errors.end(), 0.0) / n;
  double mse = 0.0, var = 0.0;
  for (double e : errors) mse += e * e;
  mse /= n;
  for (double e : errors) var += (e - report.bias) * (e - report.bias);
  var /= n;  // population variance: rmse^2 = bias^2 + sd^2 exactly
  report.rmse = std::sqrt(mse);
  report.empirical_sd = std::sqrt(var);

  int covered = 0, with_se = 0;
  double se_sum = 0.0;
  for (const Slot& slot : slots) {
    if (!slot.ok || !std::isfinite(slot.se)) continue;
    ++with_se;
    se_sum += slot.se;
    if (std::abs(slot.estimate - slot.truth) <= kZ95 * slot.se) ++covered;
  }
  report.mean_se = with_se > 0 ? se_sum / with_se : kNaN;
  report.coverage95 = with_se > 0 ? static_cast<double>(covered) / with_se : kNaN;
  report.mean_ms_per_rep = sum_ms / reps;
  report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace didlab
