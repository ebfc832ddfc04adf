#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "didlab/imputation.hpp"
#include "didlab/panel.hpp"
#include "didlab/table.hpp"

namespace didlab {

// Two-period two-group DD on an annually aggregated panel. With a balanced
// 2x2 design the coefficient equals the double difference of group-mean log
// outcomes exactly.
EffectEstimate annual_dd(const AnnualPanel& annual);

enum class ExtraFe { none, country_year };

struct TwfeOptions {
  ExtraFe extra_fe = ExtraFe::none;
  OutcomeKind outcome = OutcomeKind::log_accidents;
  bool ppml = false;               // Poisson pseudo-likelihood on counts
  bool include_never_treated = false;
};

struct TwfeResult {
  EffectEstimate estimate;
  long dropped_observations = 0;   // fully treated country-years
  std::vector<std::string> dropped_groups;
};

// Pooled-coefficient two-way fixed-effects DD (OLS on logs or PPML on counts).
TwfeResult twfe_dd(const Panel& panel, const TwfeOptions& options = {});

enum class IvTimeDriver { any_national_launch, national_firm_count };
enum class IvMargin { binary, firm_count };

struct IvSpec {
  std::vector<std::string> attributes;  // country-demeaned base characteristics
  bool use_population = true;           // include log population as a base characteristic
  IvTimeDriver driver = IvTimeDriver::any_national_launch;
};

struct InstrumentSet {
  std::vector<std::pair<int, int>> rows;  // (unit, period), aligned with X
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

// Interaction instruments: country-demeaned characteristics times a national
// rollout driver computed excluding the city itself.
InstrumentSet build_instruments(const Panel& panel, const IvSpec& spec,
                                bool include_never_treated = false);

struct IvResult {
  EffectEstimate estimate;
  double first_stage_F = 0.0;
  std::vector<std::string> warnings;
};

IvResult iv_dd(const Panel& panel, const IvSpec& spec, ExtraFe extra_fe = ExtraFe::none,
               IvMargin margin = IvMargin::binary);

// OLS of the launch month index on population (per 100k) and standardized
// city characteristics with country effects; HC1 robust standard errors.
Table launch_timing_regression(const Panel& panel,
                               const std::vector<std::string>& attributes = {});

struct NeighborRegressionOptions {
  int window = 2;                     // months: current plus window-1 preceding
  bool first_firm_outcome = false;    // default: any new firm launch
  std::optional<PeriodId> sample_start;
};

// Linear probability model of firm-launch indicators on nearest-neighbor and
// same-country launch recency, with city and month effects. Coefficients are
// scaled to percentage points.
Table neighbor_launch_regression(const Panel& panel,
                                 const NeighborRegressionOptions& options = {});

struct PretrendRegressionOptions {
  int lag = 12;
  bool first_firm_outcome = false;
};

// LPM of the launch indicator on the 12-month difference in log accidents and
// on the rolling-12-month-sum variant; city and month effects, city clusters.
Table pretrend_launch_regression(const Panel& panel,
                                 const PretrendRegressionOptions& options = {});

// Discussion-style cost projection.
struct CostProjection {
  double monthly = 0.0;
  double annual = 0.0;
};

CostProjection cost_projection(double effect_pct, double baseline_monthly_accidents,
                               double cost_per_accident);

}  // namespace didlab
