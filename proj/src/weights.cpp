#include "didlab/weights.hpp"

#include <cmath>
#include <limits>

#include "didlab/errors.hpp"

namespace didlab {

WeightScheme WeightScheme::all_post() {
  WeightScheme s;
  s.kind = Kind::average_all_post;
  s.name = "all_post";
  return s;
}

WeightScheme WeightScheme::first_k(int k) {
  WeightScheme s;
  s.kind = Kind::first_k_months;
  s.k = k;
  s.name = "first_" + std::to_string(k);
  return s;
}

WeightScheme WeightScheme::season(std::set<int> months, std::string name) {
  WeightScheme s;
  s.kind = Kind::season;
  s.months = std::move(months);
  s.name = std::move(name);
  return s;
}

WeightScheme WeightScheme::non_winter() { return season({3, 4, 5, 6, 7, 8, 9, 10}, "non_winter"); }

WeightScheme WeightScheme::winter() { return season({11, 12, 1, 2}, "winter"); }

WeightScheme WeightScheme::excl_covid() {
  WeightScheme s;
  s.kind = Kind::calendar_exclude;
  s.name = "excl_covid";
  for (PeriodId p{2020, 3}; p <= PeriodId{2020, 5}; p = p.plus_months(1)) s.excluded.insert(p);
  for (PeriodId p{2020, 11}; p <= PeriodId{2021, 5}; p = p.plus_months(1)) s.excluded.insert(p);
  return s;
}

WeightScheme WeightScheme::event_time(int h) {
  WeightScheme s;
  s.kind = Kind::event_time;
  s.h = h;
  s.name = "event_" + std::to_string(h);
  return s;
}

WeightScheme WeightScheme::event_tail(int h_min) {
  WeightScheme s;
  s.kind = Kind::event_range;
  s.h_min = h_min;
  s.h_max = std::numeric_limits<int>::max();
  s.name = "event_" + std::to_string(h_min) + "plus";
  return s;
}

WeightScheme WeightScheme::contrast() {
  WeightScheme s;
  s.kind = Kind::group_contrast;
  s.name = "contrast";
  return s;
}

WeightScheme WeightScheme::side(bool above) {
  WeightScheme s;
  s.kind = Kind::group_side;
  s.side_above = above;
  s.name = above ? "above_median" : "below_median";
  return s;
}

bool WeightScheme::admits(const Panel& panel, int unit, int period) const {
  switch (kind) {
    case Kind::average_all_post:
    case Kind::group_contrast:
    case Kind::group_side:
      return true;
    case Kind::first_k_months: {
      auto h = panel.event_time(unit, period);
      return h.has_value() && *h >= 0 && *h < k;
    }
    case Kind::event_time: {
      auto et = panel.event_time(unit, period);
      return et.has_value() && *et == h;
    }
    case Kind::event_range: {
      auto et = panel.event_time(unit, period);
      return et.has_value() && *et >= h_min && *et <= h_max;
    }
    case Kind::season:
      return months.count(panel.periods[period].month) > 0;
    case Kind::calendar_exclude:
      return excluded.count(panel.periods[period]) == 0;
    case Kind::custom:
      return custom_weights.count({unit, period}) > 0;
  }
  return false;
}

CellWeights derive_weights(const WeightScheme& scheme, const Panel& panel,
                           const std::vector<std::pair<int, int>>& support,
                           const GroupAssignment* groups) {
  if (scheme.needs_groups() && groups == nullptr)
    fail_invalid("scheme '" + scheme.name + "' requires a group assignment");

  CellWeights out;
  out.cells.reserve(support.size());
  out.weight.reserve(support.size());

  if (scheme.kind == WeightScheme::Kind::custom) {
    double total = 0.0;
    for (const auto& cell : support) {
      auto it = scheme.custom_weights.find(cell);
      if (it == scheme.custom_weights.end()) continue;
      out.cells.push_back(cell);
      out.weight.push_back(it->second);
      total += it->second;
      ++out.n_support;
    }
    if (out.cells.empty()) fail_estimation("scheme '" + scheme.name + "' has empty support");
    if (std::abs(total) > 1e-12)  // renormalize plain averages, leave contrasts alone
      for (double& w : out.weight) w /= total;
    return out;
  }

  if (scheme.is_contrast() || scheme.kind == WeightScheme::Kind::group_side) {
    long n_above = 0, n_below = 0;
    std::vector<bool> above;
    for (const auto& [u, t] : support) {
      if (!scheme.admits(panel, u, t)) continue;
      bool is_above = groups->side[u];
      out.cells.emplace_back(u, t);
      above.push_back(is_above);
      (is_above ? n_above : n_below) += 1;
    }
    if (scheme.is_contrast()) {
      if (n_above == 0 || n_below == 0)
        fail_estimation("contrast scheme: a median side has no treated cells");
      for (bool a : above) out.weight.push_back(a ? 1.0 / n_above : -1.0 / n_below);
    } else {
      // keep only the requested side
      CellWeights side_only;
      for (std::size_t i = 0; i < out.cells.size(); ++i) {
        if (above[i] != scheme.side_above) continue;
        side_only.cells.push_back(out.cells[i]);
        side_only.weight.push_back(1.0);
      }
      long n = static_cast<long>(side_only.cells.size());
      if (n == 0) fail_estimation("group-side scheme: side has no treated cells");
      for (double& w : side_only.weight) w /= n;
      side_only.n_support = n;
      return side_only;
    }
    out.n_support = n_above + n_below;
    return out;
  }

  for (const auto& [u, t] : support) {
    if (!scheme.admits(panel, u, t)) continue;
    out.cells.emplace_back(u, t);
    out.weight.push_back(1.0);
  }
  out.n_support = static_cast<long>(out.cells.size());
  if (out.n_support == 0) fail_estimation("scheme '" + scheme.name + "' has empty support");
  for (double& w : out.weight) w /= static_cast<double>(out.n_support);
  return out;
}

}  // namespace didlab
