#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "didlab/panel.hpp"

namespace didlab {

// A declarative estimand: how cell-level treatment effects are averaged.
// Non-contrast schemes place weights summing to 1 on treated cells; contrast
// schemes sum to +1 on one group side and -1 on the other.
struct WeightScheme {
  enum class Kind {
    average_all_post,   // equal weight on every treated cell
    first_k_months,     // equal weight on event times 0..k-1
    season,             // treated cells in the given calendar months
    event_time,         // single event time h
    event_range,        // event times in [h_min, h_max]; used for pooled tails
    calendar_exclude,   // all treated cells outside an excluded period set
    group_contrast,     // above-median minus below-median
    group_side,         // one side of a median split
    custom,             // user-supplied weights on treated cells
  };

  Kind kind = Kind::average_all_post;
  int k = 12;                       // first_k_months
  int h = 0;                        // event_time
  int h_min = 0, h_max = 0;         // event_range
  std::set<int> months;             // season: calendar months 1..12
  std::set<PeriodId> excluded;      // calendar_exclude
  bool side_above = true;           // group_side
  std::map<std::pair<int, int>, double> custom_weights;  // (unit, period) -> w

  std::string name = "all_post";

  bool is_contrast() const { return kind == Kind::group_contrast; }
  bool needs_groups() const {
    return kind == Kind::group_contrast || kind == Kind::group_side;
  }

  // Named presets mirroring the headline estimands.
  static WeightScheme all_post();
  static WeightScheme first_k(int k);
  static WeightScheme season(std::set<int> months, std::string name);
  static WeightScheme non_winter();  // Mar-Oct
  static WeightScheme winter();      // Nov-Feb
  static WeightScheme excl_covid();  // drops 2020-03..2020-05 and 2020-11..2021-05
  static WeightScheme event_time(int h);
  static WeightScheme event_tail(int h_min);
  static WeightScheme contrast();
  static WeightScheme side(bool above);

  // True when the scheme keeps the treated cell (unit, period). Group
  // membership is resolved by the caller.
  bool admits(const Panel& panel, int unit, int period) const;
};

// Materialized weights over a support of treated cells. `cells` and `weight`
// are parallel; weights are renormalized within the available support.
struct CellWeights {
  std::vector<std::pair<int, int>> cells;  // (unit, period)
  std::vector<double> weight;
  long n_support = 0;  // cells with nonzero weight
};

// Derives weights for `scheme` over the given support. For contrast/side
// schemes a GroupAssignment must be supplied.
CellWeights derive_weights(const WeightScheme& scheme, const Panel& panel,
                           const std::vector<std::pair<int, int>>& support,
                           const GroupAssignment* groups = nullptr);

}  // namespace didlab
