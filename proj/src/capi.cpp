#include "didlab.h"

#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "didlab/classic.hpp"
#include "didlab/errors.hpp"
#include "didlab/panel.hpp"
#include "didlab/runner.hpp"
#include "didlab/table.hpp"

// C boundary: exceptions from the core become error codes plus a thread-local
// message; handles wrap the immutable core values.

struct didlab_panel {
  didlab::Panel panel;
};

struct didlab_table {
  didlab::Table table;
  // stable storage for didlab_table_text pointers
  mutable std::map<std::pair<int, int>, std::string> text_cache;
};

namespace {

thread_local std::string g_last_error;

int set_error(const didlab::Error& e) {
  g_last_error = e.what();
  return static_cast<int>(e.kind());
}

int set_error(const std::exception& e) {
  g_last_error = e.what();
  return DIDLAB_ERR_INTERNAL;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return DIDLAB_OK;
  } catch (const didlab::Error& e) {
    return set_error(e);
  } catch (const std::exception& e) {
    return set_error(e);
  }
}

std::string opt(const char* s) { return s == nullptr ? std::string() : std::string(s); }

didlab_table* wrap(didlab::Table table) {
  auto* out = new didlab_table;
  out->table = std::move(table);
  return out;
}

}  // namespace

extern "C" {

const char* didlab_version(void) { return "0.1.0"; }

const char* didlab_last_error(void) { return g_last_error.c_str(); }

int didlab_panel_load(const char* units_csv, const char* panel_csv, const char* firms_csv,
                      const char* options_json, didlab_panel** out) {
  return guarded([&] {
    if (units_csv == nullptr || panel_csv == nullptr || out == nullptr)
      didlab::fail_invalid("didlab_panel_load: null argument");
    didlab::LoadOptions options;
    std::string text = opt(options_json);
    if (!text.empty()) {
      auto j = nlohmann::json::parse(text, nullptr, false);
      if (j.is_discarded() || !j.is_object())
        didlab::fail_invalid("didlab_panel_load: malformed options JSON");
      for (const auto& [key, value] : j.items()) {
        if (key == "fill_gaps") {
          std::string mode = value.get<std::string>();
          if (mode == "mean_of_neighbors")
            options.fill_gaps_mean_of_neighbors = true;
          else if (mode != "none")
            didlab::fail_invalid("fill_gaps must be none or mean_of_neighbors");
        } else if (key == "min_population") {
          options.min_population = value.get<long long>();
        } else if (key == "exclude_units") {
          for (const auto& unit : value) options.exclude_units.insert(unit.get<std::string>());
        } else {
          didlab::fail_invalid("unknown load option '" + key +
                               "'; valid keys: fill_gaps min_population exclude_units");
        }
      }
    }
    didlab::LoadResult result = didlab::load_panel(opt(units_csv), opt(panel_csv),
                                                   opt(firms_csv), options);
    *out = new didlab_panel{std::move(result.panel)};
  });
}

int didlab_panel_simulate(const char* dgp_json, didlab_panel** out) {
  return guarded([&] {
    if (out == nullptr) didlab::fail_invalid("didlab_panel_simulate: null output");
    didlab::DgpConfig config = didlab::parse_dgp_config(opt(dgp_json));
    auto [panel, truth] = didlab::generate(config);
    (void)truth;
    *out = new didlab_panel{std::move(panel)};
  });
}

int didlab_panel_save(const didlab_panel* panel, const char* units_csv, const char* panel_csv,
                      const char* firms_csv) {
  return guarded([&] {
    if (panel == nullptr || units_csv == nullptr || panel_csv == nullptr)
      didlab::fail_invalid("didlab_panel_save: null argument");
    didlab::save_panel(panel->panel, units_csv, panel_csv, opt(firms_csv));
  });
}

int didlab_panel_shift_launches(const didlab_panel* panel, int shift_months,
                                didlab_panel** out) {
  return guarded([&] {
    if (panel == nullptr || out == nullptr)
      didlab::fail_invalid("didlab_panel_shift_launches: null argument");
    *out = new didlab_panel{didlab::shift_launch_dates(panel->panel, shift_months)};
  });
}

int didlab_panel_n_units(const didlab_panel* panel) {
  return panel == nullptr ? 0 : panel->panel.n_units();
}

int didlab_panel_n_periods(const didlab_panel* panel) {
  return panel == nullptr ? 0 : panel->panel.n_periods();
}

void didlab_panel_free(didlab_panel* panel) { delete panel; }

int didlab_estimate(const didlab_panel* panel, const char* preset, const char* options_json,
                    didlab_table** out) {
  return guarded([&] {
    if (panel == nullptr || preset == nullptr || out == nullptr)
      didlab::fail_invalid("didlab_estimate: null argument");
    didlab::RunOptions options = didlab::parse_run_options(opt(options_json));
    *out = wrap(didlab::run_estimate(panel->panel, preset, options));
  });
}

int didlab_event_study(const didlab_panel* panel, const char* options_json,
                       didlab_table** out) {
  return guarded([&] {
    if (panel == nullptr || out == nullptr)
      didlab::fail_invalid("didlab_event_study: null argument");
    didlab::RunOptions options = didlab::parse_run_options(opt(options_json));
    *out = wrap(didlab::run_event_study(panel->panel, options));
  });
}

int didlab_placebo(const didlab_panel* panel, int shift_months, const char* options_json,
                   didlab_table** profile_out, didlab_table** summary_out) {
  return guarded([&] {
    if (panel == nullptr || profile_out == nullptr || summary_out == nullptr)
      didlab::fail_invalid("didlab_placebo: null argument");
    didlab::RunOptions options = didlab::parse_run_options(opt(options_json));
    didlab::PlaceboRun run = didlab::run_placebo(panel->panel, shift_months, options);
    *profile_out = wrap(std::move(run.profile));
    *summary_out = wrap(std::move(run.summary));
  });
}

int didlab_heterogeneity(const didlab_panel* panel, const char* attribute,
                         const char* options_json, didlab_table** out) {
  return guarded([&] {
    if (panel == nullptr || attribute == nullptr || out == nullptr)
      didlab::fail_invalid("didlab_heterogeneity: null argument");
    didlab::RunOptions options = didlab::parse_run_options(opt(options_json));
    *out = wrap(didlab::run_heterogeneity(panel->panel, attribute, options));
  });
}

int didlab_sdid(const didlab_panel* panel, const char* config_json, didlab_table** out,
                didlab_table** weights_out) {
  return guarded([&] {
    if (panel == nullptr || out == nullptr) didlab::fail_invalid("didlab_sdid: null argument");
    std::string text = opt(config_json);
    didlab::SdidConfig config = didlab::parse_sdid_config(text);
    bool exclude_winter = false;
    if (!text.empty()) {
      auto j = nlohmann::json::parse(text, nullptr, false);
      if (j.is_object() && j.contains("exclude_winter"))
        exclude_winter = j["exclude_winter"].get<bool>();
    }
    didlab::SdidRun run = didlab::run_sdid(panel->panel, config, exclude_winter);
    *out = wrap(std::move(run.summary));
    if (weights_out != nullptr) *weights_out = wrap(std::move(run.weights));
  });
}

int didlab_classic(const didlab_panel* panel, const char* kind, const char* options_json,
                   didlab_table** out) {
  return guarded([&] {
    if (panel == nullptr || kind == nullptr || out == nullptr)
      didlab::fail_invalid("didlab_classic: null argument");
    *out = wrap(didlab::run_classic(panel->panel, kind, opt(options_json)));
  });
}

int didlab_series(const didlab_panel* panel, didlab_table** out) {
  return guarded([&] {
    if (panel == nullptr || out == nullptr) didlab::fail_invalid("didlab_series: null argument");
    *out = wrap(didlab::run_series(panel->panel));
  });
}

int didlab_monte_carlo(const char* config_json, didlab_table** out) {
  return guarded([&] {
    if (out == nullptr) didlab::fail_invalid("didlab_monte_carlo: null output");
    *out = wrap(didlab::run_monte_carlo(opt(config_json)));
  });
}

int didlab_cost_projection(double effect_pct, double baseline_monthly_accidents,
                           double cost_per_accident, double* monthly_out, double* annual_out) {
  return guarded([&] {
    if (monthly_out == nullptr || annual_out == nullptr)
      didlab::fail_invalid("didlab_cost_projection: null output");
    didlab::CostProjection projection =
        didlab::cost_projection(effect_pct, baseline_monthly_accidents, cost_per_accident);
    *monthly_out = projection.monthly;
    *annual_out = projection.annual;
  });
}

int didlab_table_n_rows(const didlab_table* table) {
  return table == nullptr ? 0 : table->table.n_rows();
}

int didlab_table_n_cols(const didlab_table* table) {
  return table == nullptr ? 0 : table->table.n_cols();
}

const char* didlab_table_column(const didlab_table* table, int col) {
  if (table == nullptr || col < 0 || col >= table->table.n_cols()) return nullptr;
  return table->table.columns()[static_cast<std::size_t>(col)].c_str();
}

int didlab_table_is_numeric(const didlab_table* table, int row, int col) {
  if (table == nullptr) return 0;
  try {
    return table->table.is_numeric(row, col) ? 1 : 0;
  } catch (const std::exception&) {
    return 0;
  }
}

double didlab_table_number(const didlab_table* table, int row, int col) {
  if (table == nullptr) return std::nan("");
  try {
    return table->table.number(row, col);
  } catch (const std::exception&) {
    return std::nan("");
  }
}

const char* didlab_table_text(const didlab_table* table, int row, int col) {
  if (table == nullptr) return nullptr;
  try {
    auto key = std::make_pair(row, col);
    auto it = table->text_cache.find(key);
    if (it == table->text_cache.end())
      it = table->text_cache.emplace(key, table->table.text(row, col)).first;
    return it->second.c_str();
  } catch (const std::exception&) {
    return nullptr;
  }
}

int didlab_table_write_csv(const didlab_table* table, const char* path) {
  return guarded([&] {
    if (table == nullptr || path == nullptr)
      didlab::fail_invalid("didlab_table_write_csv: null argument");
    table->table.write_csv(path);
  });
}

void didlab_table_free(didlab_table* table) { delete table; }

}  // extern "C"
