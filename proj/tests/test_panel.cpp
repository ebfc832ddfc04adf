#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "didlab/csv.hpp"
#include "didlab/errors.hpp"
#include "didlab/panel.hpp"
#include "helpers.hpp"

using namespace didlab;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("didlab_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    std::string p = (path / name).string();
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

const char* kUnits =
    "unit_id,country,population,latitude,longitude,launch_period,attr:share_bike_lanes\n"
    "u1,DE,200000,52.5,13.4,2019-03,0.10\n"
    "u2,DE,150000,48.1,11.6,,0.25\n";

const char* kObs =
    "unit_id,period,accidents,slight_share,slight_source\n"
    "u1,2019-01,10,0.8,accident_share\n"
    "u1,2019-02,12,,\n"
    "u1,2019-03,14,,\n"
    "u2,2019-01,20,,\n"
    "u2,2019-02,21,,\n"
    "u2,2019-03,22,,\n";

}  // namespace

TEST_CASE("period parsing, ordering and month arithmetic") {
  PeriodId p = PeriodId::parse("2019-07");
  CHECK(p.year == 2019);
  CHECK(p.month == 7);
  CHECK(p.str() == "2019-07");
  CHECK(p.plus_months(12).str() == "2020-07");
  CHECK(p.plus_months(-12).str() == "2018-07");
  CHECK(p.plus_months(6).str() == "2020-01");
  CHECK(p.plus_months(-7).str() == "2018-12");
  CHECK(PeriodId::parse("2019") < PeriodId::parse("2020"));
  CHECK(PeriodId::parse("2019-01") < PeriodId::parse("2019-02"));
  CHECK_THROWS_AS(PeriodId::parse("2019-13"), Error);
  CHECK_THROWS_AS(PeriodId::parse("19-01"), Error);
  // round trip over a wide range, including year boundaries
  for (int k = -40; k <= 40; ++k) CHECK(p.plus_months(k).plus_months(-k) == p);
}

TEST_CASE("load_panel builds a complete grid") {
  TempDir dir;
  LoadResult result = load_panel(dir.file("units.csv", kUnits), dir.file("panel.csv", kObs));
  const Panel& panel = result.panel;
  CHECK(panel.n_units() == 2);
  CHECK(panel.n_periods() == 3);
  CHECK(panel.cell(0, 0)->accidents == 10.0);
  CHECK(panel.cell(0, 0)->slight_share == doctest::Approx(0.8));
  CHECK(panel.units[0].launch.has_value());
  CHECK(!panel.units[1].launch.has_value());  // blank launch_period = never
  CHECK(panel.units[0].attributes.at("share_bike_lanes") == doctest::Approx(0.10));
  CHECK(panel.treated(0, 2));
  CHECK(!panel.treated(0, 1));
  CHECK(result.report.units_per_country.at("DE") == 2);
}

TEST_CASE("load_panel error paths") {
  TempDir dir;
  std::string units = dir.file("units.csv", kUnits);

  SUBCASE("duplicate cell") {
    std::string obs = dir.file("dup.csv",
                               "unit_id,period,accidents,slight_share,slight_source\n"
                               "u1,2019-03,5,,\nu1,2019-03,6,,\n");
    CHECK_THROWS_WITH_AS(load_panel(units, obs), doctest::Contains("duplicate cell"), Error);
  }
  SUBCASE("unknown unit") {
    std::string obs = dir.file("unknown.csv",
                               "unit_id,period,accidents,slight_share,slight_source\n"
                               "ghost,2019-01,5,,\n");
    CHECK_THROWS_WITH_AS(load_panel(units, obs), doctest::Contains("unknown unit"), Error);
  }
  SUBCASE("negative count") {
    std::string obs = dir.file("neg.csv",
                               "unit_id,period,accidents,slight_share,slight_source\n"
                               "u1,2019-01,-3,,\n");
    CHECK_THROWS_AS(load_panel(units, obs), Error);
  }
  SUBCASE("malformed period") {
    std::string obs = dir.file("badp.csv",
                               "unit_id,period,accidents,slight_share,slight_source\n"
                               "u1,2019/01,3,,\n");
    CHECK_THROWS_AS(load_panel(units, obs), Error);
  }
  SUBCASE("empty month column inside the axis") {
    std::string obs = dir.file("gap.csv",
                               "unit_id,period,accidents,slight_share,slight_source\n"
                               "u1,2019-01,3,,\nu1,2019-03,4,,\nu2,2019-01,1,,\nu2,2019-03,1,,\n");
    CHECK_THROWS_WITH_AS(load_panel(units, obs), doctest::Contains("non-contiguous"), Error);
  }
  SUBCASE("firm launches must be consistent with launch_period") {
    std::string obs = dir.file("ok.csv", kObs);
    std::string firms = dir.file("bad_firms.csv",
                                 "unit_id,firm_id,period\nu1,voight,2019-01\n");
    CHECK_THROWS_AS(load_panel(units, obs, firms), Error);
  }
}

TEST_CASE("round trip: load, save, reload is identical") {
  TempDir dir;
  const char* units_with_firms =
      "unit_id,country,population,latitude,longitude,launch_period,attr:x\n"
      "u1,DE,200000,52.5,13.4,2019-03,0.5\n"
      "u2,AT,150000,,,,-1.25\n";
  const char* firms = "unit_id,firm_id,period\nu1,voight,2019-03\nu1,lyme,2019-05\n";
  LoadResult first = load_panel(dir.file("u.csv", units_with_firms), dir.file("p.csv", kObs),
                                dir.file("f.csv", firms));
  save_panel(first.panel, dir.file("u2.csv"), dir.file("p2.csv"), dir.file("f2.csv"));
  LoadResult second = load_panel(dir.file("u2.csv"), dir.file("p2.csv"), dir.file("f2.csv"));
  save_panel(second.panel, dir.file("u3.csv"), dir.file("p3.csv"), dir.file("f3.csv"));

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir.file("u2.csv")) == slurp(dir.file("u3.csv")));
  CHECK(slurp(dir.file("p2.csv")) == slurp(dir.file("p3.csv")));
  CHECK(slurp(dir.file("f2.csv")) == slurp(dir.file("f3.csv")));
}

TEST_CASE("zero policy") {
  Panel panel = testutil::make_panel({{"a", "DE"}, {"b", "DE"}}, {"2019-01", "2019-02"},
                                     {{"a", "2019-01", 0.0},
                                      {"a", "2019-02", 5.0},
                                      {"b", "2019-01", 3.0},
                                      {"b", "2019-02", 4.0}});
  panel.zero_policy_applied = false;

  SUBCASE("impute_one flags and is idempotent") {
    Panel once = apply_zero_policy(panel, ZeroPolicy::impute_one);
    CHECK(once.cell(0, 0)->accidents == 1.0);
    CHECK(once.cell(0, 0)->zero_imputed);
    CHECK(once.cell(1, 0)->accidents == 3.0);
    Panel twice = apply_zero_policy(once, ZeroPolicy::impute_one);
    for (int u = 0; u < 2; ++u)
      for (int t = 0; t < 2; ++t) {
        CHECK(twice.cell(u, t)->accidents == once.cell(u, t)->accidents);
        CHECK(twice.cell(u, t)->zero_imputed == once.cell(u, t)->zero_imputed);
      }
  }
  SUBCASE("drop removes the cell") {
    Panel dropped = apply_zero_policy(panel, ZeroPolicy::drop);
    CHECK(!dropped.cell(0, 0).has_value());
    CHECK(dropped.cell(0, 1).has_value());
  }
  SUBCASE("fail names the offending cell") {
    CHECK_THROWS_WITH_AS(apply_zero_policy(panel, ZeroPolicy::fail),
                         doctest::Contains("(a, 2019-01)"), Error);
  }
}

TEST_CASE("log outcome") {
  Panel panel = testutil::make_panel({{"a", "DE"}}, {"2019-01", "2019-02"},
                                     {{"a", "2019-01", 1.0}, {"a", "2019-02", 93.0}});
  std::vector<double> logs = log_outcome(panel);
  CHECK(logs[0] == doctest::Approx(0.0));
  CHECK(logs[1] == doctest::Approx(4.5326).epsilon(1e-4));  // ln 93

  Panel zero = testutil::make_panel({{"a", "DE"}}, {"2019-01"}, {{"a", "2019-01", 0.0}});
  CHECK_THROWS_AS(log_outcome(zero), Error);
}

TEST_CASE("country median split") {
  Panel panel = testutil::make_panel(
      {{"a", "DE"}, {"b", "DE"}, {"c", "DE"}, {"d", "AT"}, {"e", "AT"}}, {"2019-01"},
      {{"a", "2019-01", 1},
       {"b", "2019-01", 1},
       {"c", "2019-01", 1},
       {"d", "2019-01", 1},
       {"e", "2019-01", 1}});
  panel.units[0].attributes["x"] = 1.0;
  panel.units[1].attributes["x"] = 2.0;
  panel.units[2].attributes["x"] = 3.0;
  panel.units[3].attributes["x"] = 1.0;
  panel.units[4].attributes["x"] = 3.0;

  GroupAssignment split = country_median_split(panel, "x");
  CHECK(split.country_medians.at("DE") == doctest::Approx(2.0));  // odd count
  CHECK(split.country_medians.at("AT") == doctest::Approx(2.0));  // even-count midpoint
  CHECK(!split.side[0]);
  CHECK(!split.side[1]);  // equal to the median is below under the strict rule
  CHECK(split.side[2]);
  CHECK(!split.side[3]);
  CHECK(split.side[4]);

  SUBCASE("all units equal: everyone below, warning emitted") {
    for (auto& unit : panel.units) unit.attributes["x"] = 7.0;
    GroupAssignment equal = country_median_split(panel, "x");
    for (int u = 0; u < panel.n_units(); ++u) CHECK(!equal.side[u]);
    CHECK(!equal.warnings.empty());
  }
  SUBCASE("missing attribute is an error") {
    panel.units[1].attributes.erase("x");
    CHECK_THROWS_AS(country_median_split(panel, "x"), Error);
  }
  SUBCASE("strict rule bounds the above side by floor(n/2)") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      for (auto& unit : panel.units)
        unit.attributes["x"] = static_cast<double>(rng() % 1000) / 10.0;
      GroupAssignment s = country_median_split(panel, "x");
      std::map<std::string, int> above, total;
      for (int u = 0; u < panel.n_units(); ++u) {
        total[panel.units[u].country] += 1;
        if (s.side[u]) above[panel.units[u].country] += 1;
      }
      for (const auto& [country, n] : total) CHECK(above[country] <= n / 2);
    }
  }
}

TEST_CASE("shift_launch_dates") {
  std::vector<std::string> periods;
  for (int m = 0; m < 24; ++m) periods.push_back(PeriodId{2018, 1}.plus_months(m).str());
  std::vector<testutil::CellSpec> cells;
  for (const auto& p : periods) {
    cells.push_back({"a", p, 5});
    cells.push_back({"b", p, 5});
  }
  Panel panel = testutil::make_panel({{"a", "DE"}, {"b", "DE"}}, periods, cells,
                                     {{"a", "2019-07"}});
  panel.units[0].firm_launches.emplace_back("f1", PeriodId::parse("2019-07"));

  Panel shifted = shift_launch_dates(panel, 12);
  CHECK(shifted.units[0].launch->str() == "2018-07");
  CHECK(shifted.units[0].firm_launches[0].second.str() == "2018-07");
  CHECK(!shifted.units[1].launch.has_value());  // never stays never

  SUBCASE("round trip restores the registry") {
    Panel back = shift_launch_dates(shifted, -12);
    CHECK(back.units[0].launch == panel.units[0].launch);
    CHECK(back.units[0].firm_launches == panel.units[0].firm_launches);
  }
  SUBCASE("zero shift rejected") { CHECK_THROWS_AS(shift_launch_dates(panel, 0), Error); }
  SUBCASE("all launches shifted before the panel start is an error") {
    CHECK_THROWS_WITH_AS(shift_launch_dates(panel, 12 * 10),
                         doctest::Contains("nothing estimable"), Error);
  }
  SUBCASE("launch shifted before the start is retained when others remain") {
    Panel two = panel;
    two.units[1].launch = PeriodId::parse("2022-07");
    Panel far = shift_launch_dates(two, 42);
    CHECK(far.units[0].launch->str() == "2016-01");
    CHECK(far.units[0].launch < far.periods.front());  // every in-panel cell treated
    CHECK(far.units[1].launch->str() == "2019-01");
  }
}

TEST_CASE("aggregate_annual") {
  std::vector<std::string> periods;
  for (int y = 2018; y <= 2020; ++y)
    for (int m = 1; m <= 12; ++m) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "%04d-%02d", y, m);
      periods.emplace_back(buf);
    }
  std::vector<testutil::CellSpec> cells;
  for (const auto& p : periods) {
    cells.push_back({"t1", p, 10});
    cells.push_back({"c1", p, 7});
    cells.push_back({"x1", p, 5});
  }
  Panel panel = testutil::make_panel({{"t1", "DE"}, {"c1", "DE"}, {"x1", "DE"}}, periods, cells,
                                     {{"t1", "2019-06"}, {"c1", "2020-09"}, {"x1", "2020-03"}});

  AnnualPanel annual = aggregate_annual(panel, 2018, 2020, {});
  CHECK(annual.panel.n_periods() == 2);
  CHECK(annual.panel.frequency == Frequency::annual);
  // t1 launched during 2019: treated; c1 launched after July 2020: control;
  // x1 launched March 2020: dropped
  CHECK(annual.panel.n_units() == 2);
  CHECK(annual.n_dropped_units == 1);
  CHECK(annual.treated_group[0]);
  CHECK(!annual.treated_group[1]);
  CHECK(annual.panel.cell(0, 0)->accidents == doctest::Approx(120.0));  // 12 x 10

  SUBCASE("total accidents conserved over retained units") {
    double monthly_total = 0.0;
    for (int year : {2018, 2020})
      for (int m = 1; m <= 12; ++m) {
        int t = panel.period_index(PeriodId{year, m});
        monthly_total += panel.cell(0, t)->accidents + panel.cell(1, t)->accidents;
      }
    double annual_total = 0.0;
    for (int u = 0; u < annual.panel.n_units(); ++u)
      for (int t = 0; t < 2; ++t) annual_total += annual.panel.cell(u, t)->accidents;
    CHECK(annual_total == doctest::Approx(monthly_total).epsilon(1e-12));
  }
  SUBCASE("never-treated units enter only with the flag") {
    Panel with_never = panel;
    with_never.units[2].launch.reset();
    with_never.units[2].firm_launches.clear();
    AnnualPanel excl = aggregate_annual(with_never, 2018, 2020, {});
    CHECK(excl.panel.n_units() == 2);
    AnnualAggregationRule rule;
    rule.include_never = true;
    AnnualPanel incl = aggregate_annual(with_never, 2018, 2020, rule);
    CHECK(incl.panel.n_units() == 3);
  }
  SUBCASE("missing month inside a year is an error") {
    Panel holed = panel;
    holed.cell(0, holed.period_index(PeriodId{2018, 5})).reset();
    CHECK_THROWS_WITH_AS(aggregate_annual(holed, 2018, 2020, {}),
                         doctest::Contains("missing months"), Error);
  }
}

TEST_CASE("severity share projection") {
  Panel panel = testutil::make_panel({{"de1", "DE"}, {"at1", "AT"}}, {"2019-01", "2019-02"},
                                     {{"de1", "2019-01", 10},
                                      {"de1", "2019-02", 10},
                                      {"at1", "2019-01", 10},
                                      {"at1", "2019-02", 10}});
  // German cells observe both shares; Austrian cells carry victim shares only
  panel.cell(0, 0)->slight_share = 0.8;
  panel.cell(0, 0)->victim_share = 0.8;
  panel.cell(0, 1)->slight_share = 0.9;
  panel.cell(0, 1)->victim_share = 0.9;
  panel.cell(1, 0)->slight_share = 0.871;
  panel.cell(1, 0)->slight_source = SlightSource::victim_share;
  panel.cell(1, 1)->slight_share = 0.99;
  panel.cell(1, 1)->slight_source = SlightSource::victim_share;

  SUBCASE("perfect correlation gives the identity projection") {
    auto [projected, fit] = project_severity_share(panel);
    CHECK(fit.intercept == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(fit.slope == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.r_squared == doctest::Approx(1.0));
    CHECK(projected.cell(1, 0)->slight_share == doctest::Approx(0.871));
    CHECK(projected.cell(1, 0)->slight_source == SlightSource::projected);
    CHECK(projected.cell(0, 0)->slight_source == SlightSource::accident_share);
  }
  SUBCASE("projection matches the closed-form OLS line and stays in [0,1]") {
    panel.cell(0, 0)->victim_share = 0.6;
    panel.cell(0, 0)->slight_share = 0.7;
    panel.cell(0, 1)->victim_share = 0.8;
    panel.cell(0, 1)->slight_share = 0.95;

    double mx = 0.7, my = 0.825;
    double sxy = (0.6 - mx) * (0.7 - my) + (0.8 - mx) * (0.95 - my);
    double sxx = (0.6 - mx) * (0.6 - mx) + (0.8 - mx) * (0.8 - mx);
    double slope = sxy / sxx, intercept = my - slope * mx;

    auto [projected, fit] = project_severity_share(panel);
    CHECK(fit.slope == doctest::Approx(slope).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(intercept).epsilon(1e-12));
    double expected = std::clamp(intercept + slope * 0.871, 0.0, 1.0);
    CHECK(projected.cell(1, 0)->slight_share == doctest::Approx(expected));
    CHECK(projected.cell(1, 1)->slight_share.value() <= 1.0);  // 0.99 maps above 1, clamped
    CHECK(fit.n_clamped >= 1);
  }
  SUBCASE("no training pairs is an error") {
    panel.cell(0, 0)->victim_share.reset();
    panel.cell(0, 1)->victim_share.reset();
    CHECK_THROWS_AS(project_severity_share(panel), Error);
  }
  SUBCASE("constant regressor is an error") {
    panel.cell(0, 1)->victim_share = 0.8;
    panel.cell(0, 1)->slight_share = 0.9;
    CHECK_THROWS_AS(project_severity_share(panel), Error);
  }
}

TEST_CASE("gap filling by neighbor-month averaging") {
  TempDir dir;
  std::string units = dir.file("units.csv", kUnits);
  std::string obs = dir.file("panel.csv",
                             "unit_id,period,accidents,slight_share,slight_source\n"
                             "u1,2019-01,10,,\nu1,2019-03,14,,\n"
                             "u2,2019-01,20,,\nu2,2019-02,21,,\nu2,2019-03,22,,\n");
  LoadOptions options;
  options.fill_gaps_mean_of_neighbors = true;
  LoadResult result = load_panel(units, obs, "", options);
  CHECK(result.report.gap_filled_cells == 1);
  CHECK(result.panel.cell(0, 1)->accidents == doctest::Approx(12.0));
  CHECK(result.panel.cell(0, 1)->gap_filled);

  LoadResult plain = load_panel(units, obs, "", {});
  CHECK(!plain.panel.cell(0, 1).has_value());
}
