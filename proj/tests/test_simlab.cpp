#include <doctest.h>

#include <cmath>
#include <random>

#include "didlab/errors.hpp"
#include "didlab/imputation.hpp"
#include "didlab/rng.hpp"
#include "didlab/simlab.hpp"

using namespace didlab;

TEST_CASE("generator determinism") {
  DgpConfig config;
  config.n_units = 12;
  config.n_periods = 20;
  config.launch.window_start = 6;
  config.launch.window_end = 24;
  config.profile.kind = EffectProfile::Kind::constant;
  config.profile.tau = 0.08;
  config.seed = 2024;

  auto [a, truth_a] = generate(config);
  auto [b, truth_b] = generate(config);
  CHECK(a.cells.size() == b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i)
    CHECK(a.cells[i]->accidents == b.cells[i]->accidents);
  for (int u = 0; u < a.n_units(); ++u) CHECK(a.units[u].launch == b.units[u].launch);
  REQUIRE(truth_a.tau.size() == truth_b.tau.size());
  for (std::size_t i = 0; i < truth_a.tau.size(); ++i) {
    bool both_nan = std::isnan(truth_a.tau[i]) && std::isnan(truth_b.tau[i]);
    CHECK((both_nan || truth_a.tau[i] == truth_b.tau[i]));
  }

  config.seed = 2025;
  auto [c, truth_c] = generate(config);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.cells.size() && !any_diff; ++i)
    any_diff = a.cells[i]->accidents != c.cells[i]->accidents;
  CHECK(any_diff);
}

TEST_CASE("truth records") {
  DgpConfig config;
  config.n_units = 10;
  config.n_periods = 18;
  config.launch.window_start = 6;
  config.launch.window_end = 20;
  config.seed = 7;

  SUBCASE("zero profile") {
    config.profile.kind = EffectProfile::Kind::zero;
    auto [panel, truth] = generate(config);
    CHECK(true_estimand(panel, truth, WeightScheme::all_post()) == doctest::Approx(0.0));
  }
  SUBCASE("constant profile: every scheme sees the constant") {
    config.profile.kind = EffectProfile::Kind::constant;
    config.profile.tau = 0.08;
    auto [panel, truth] = generate(config);
    CHECK(true_estimand(panel, truth, WeightScheme::all_post()) == doctest::Approx(0.08));
    CHECK(true_estimand(panel, truth, WeightScheme::first_k(6)) == doctest::Approx(0.08));
  }
  SUBCASE("linear growth: equal weights over h = 0..k-1 average the profile") {
    config.profile.kind = EffectProfile::Kind::linear_growth;
    config.profile.rate = 0.01;
    auto [panel, truth] = generate(config);
    // restrict to a window every treated unit covers
    int k = 3;
    double expected = 0.0;
    for (int h = 0; h < k; ++h) expected += 0.01 * (h + 1);
    expected /= k;
    // only units with at least k treated months contribute equally; build the
    // truth directly to confirm the weighting
    WeightScheme scheme = WeightScheme::first_k(k);
    double value = true_estimand(panel, truth, scheme);
    CHECK(value == doctest::Approx(expected).epsilon(0.25));  // composition varies
  }
  SUBCASE("seasonal profile: non-winter estimand reads tau_nonwinter") {
    config.profile.kind = EffectProfile::Kind::seasonal;
    config.profile.tau_nonwinter = 0.115;
    config.profile.tau_winter = 0.019;
    auto [panel, truth] = generate(config);
    CHECK(true_estimand(panel, truth, WeightScheme::non_winter()) == doctest::Approx(0.115));
    CHECK(true_estimand(panel, truth, WeightScheme::winter()) == doctest::Approx(0.019));
  }
  SUBCASE("group contrast reads the gap") {
    config.profile.kind = EffectProfile::Kind::by_group;
    config.profile.tau_above = 0.11;
    config.profile.tau_below = 0.0;
    auto [panel, truth] = generate(config);
    CHECK(true_estimand(panel, truth, WeightScheme::contrast()) == doctest::Approx(0.11));
  }
}

TEST_CASE("noiseless continuous output reproduces the model exactly") {
  DgpConfig config;
  config.n_units = 10;
  config.n_periods = 20;
  config.sigma = 0.0;
  config.continuous_outcome = true;
  config.launch.window_start = 8;
  config.launch.window_end = 24;
  config.profile.kind = EffectProfile::Kind::constant;
  config.profile.tau = 0.08;
  config.seed = 99;
  auto [panel, truth] = generate(config);

  ImputationPipeline pipeline(panel, ImputationOptions{});
  const CellEffects& effects = pipeline.effects();
  REQUIRE(!effects.cells.empty());
  for (std::size_t i = 0; i < effects.cells.size(); ++i)
    CHECK(effects.tau[i] == doctest::Approx(0.08).epsilon(1e-9));
}

TEST_CASE("poisson noise produces integer counts") {
  DgpConfig config;
  config.n_units = 8;
  config.n_periods = 10;
  config.noise = DgpConfig::Noise::poisson;
  config.sigma = 0.0;
  config.launch.window_start = 4;
  config.launch.window_end = 12;
  config.seed = 3;
  auto [panel, truth] = generate(config);
  for (const auto& cell : panel.cells) {
    REQUIRE(cell.has_value());
    CHECK(cell->accidents == std::floor(cell->accidents));
  }
}

TEST_CASE("monte carlo driver") {
  DgpConfig config;
  config.n_units = 14;
  config.n_periods = 20;
  config.launch.window_start = 8;
  config.launch.window_end = 26;
  config.profile.kind = EffectProfile::Kind::constant;
  config.profile.tau = 0.08;
  config.sigma = 0.05;
  config.seed = 11;

  EstimatorSpec spec;
  spec.method = EstimatorSpec::Method::imputation;

  SUBCASE("report identity rmse^2 = bias^2 + sd^2") {
    McReport report = monte_carlo(spec, config, 20, 1);
    CHECK(report.reps == 20);
    CHECK(report.failed == 0);
    CHECK(report.rmse * report.rmse ==
          doctest::Approx(report.bias * report.bias +
                          report.empirical_sd * report.empirical_sd)
              .epsilon(1e-10));
    CHECK(std::abs(report.bias) < 0.05);
  }
  SUBCASE("thread count does not change results") {
    McReport one = monte_carlo(spec, config, 12, 1);
    McReport four = monte_carlo(spec, config, 12, 4);
    REQUIRE(one.estimates.size() == four.estimates.size());
    for (std::size_t i = 0; i < one.estimates.size(); ++i)
      CHECK(one.estimates[i] == four.estimates[i]);
    CHECK(one.bias == four.bias);
  }
  SUBCASE("reps below 2 are rejected") {
    CHECK_THROWS_AS(monte_carlo(spec, config, 1, 1), Error);
  }
}

TEST_CASE("null rejection rate stays near the nominal level") {
  // zero effects, random launch timing: the all_post z-test should reject at
  // roughly 5 percent over many replications
  DgpConfig config;
  config.n_units = 48;
  config.n_periods = 54;
  config.n_countries = 6;
  config.launch.window_start = 30;
  config.launch.window_end = 60;
  config.profile.kind = EffectProfile::Kind::zero;
  config.sigma = 0.08;

  const int reps = 500;
  int rejected = 0;
  for (int rep = 0; rep < reps; ++rep) {
    config.seed = mix_seed(987654, static_cast<std::uint64_t>(rep));
    auto [panel, truth] = generate(config);
    Panel prepared = apply_zero_policy(panel, ZeroPolicy::impute_one);
    ImputationPipeline pipeline(prepared, ImputationOptions{});
    EffectEstimate est = pipeline.estimate(WeightScheme::all_post());
    if (std::abs(est.tau) > 1.959964 * est.se) ++rejected;
  }
  double rate = static_cast<double>(rejected) / reps;
  CHECK(rate >= 0.02);
  CHECK(rate <= 0.08);
}
