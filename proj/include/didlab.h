/*
 * didlab — staggered-rollout difference-in-differences toolkit.
 *
 * C interface to the estimation core: opaque handles, integer error codes,
 * UTF-8 strings, JSON option payloads. Every function returning int yields
 * DIDLAB_OK on success; on failure didlab_last_error() describes the problem
 * for the calling thread.
 *
 * Handles are created by didlab_* constructors and must be released with the
 * matching *_free call. Result tables are rectangular; cells are numeric or
 * text, and text pointers stay valid until the table is freed.
 */

#ifndef DIDLAB_H
#define DIDLAB_H

#ifdef __cplusplus
extern "C" {
#endif

#define DIDLAB_OK 0
#define DIDLAB_ERR_INVALID 1    /* malformed input, bad config, broken precondition */
#define DIDLAB_ERR_IO 2         /* file system or parse failure */
#define DIDLAB_ERR_ESTIMATION 3 /* estimator could not produce a result */
#define DIDLAB_ERR_INTERNAL 4

typedef struct didlab_panel didlab_panel;
typedef struct didlab_table didlab_table;

const char* didlab_version(void);

/* Last error message for the calling thread; valid until the next failing
 * didlab call on the same thread. */
const char* didlab_last_error(void);

/* ------------------------------------------------------------------ panels */

/* Loads units.csv / panel.csv (and optionally firm_launches.csv).
 * options_json: {"fill_gaps": "mean_of_neighbors", "min_population": N,
 *                "exclude_units": ["..."]} — all optional. */
int didlab_panel_load(const char* units_csv, const char* panel_csv, const char* firms_csv,
                      const char* options_json, didlab_panel** out);

/* Simulates a ground-truth panel; dgp_json schema is documented in README.md. */
int didlab_panel_simulate(const char* dgp_json, didlab_panel** out);

int didlab_panel_save(const didlab_panel* panel, const char* units_csv, const char* panel_csv,
                      const char* firms_csv);

/* Placebo registry: launches moved shift_months into the past. */
int didlab_panel_shift_launches(const didlab_panel* panel, int shift_months,
                                didlab_panel** out);

int didlab_panel_n_units(const didlab_panel* panel);
int didlab_panel_n_periods(const didlab_panel* panel);
void didlab_panel_free(didlab_panel* panel);

/* -------------------------------------------------------------- estimation */

/* Presets: all_post, incl_never_treated, first_12, non_winter, winter,
 * excl_covid, annual_dd, annual_dd_never.
 * options_json keys: include_never_treated, unit_trends, outcome, cohorts,
 * zero_policy, cohort_merge_until/since, cohort_merges, h_pre, h_post, seed. */
int didlab_estimate(const didlab_panel* panel, const char* preset, const char* options_json,
                    didlab_table** out);

int didlab_event_study(const didlab_panel* panel, const char* options_json,
                       didlab_table** out);

/* Event-study profile under shifted launch dates plus a significance summary
 * over the clean placebo window. Returns two tables. */
int didlab_placebo(const didlab_panel* panel, int shift_months, const char* options_json,
                   didlab_table** profile_out, didlab_table** summary_out);

int didlab_heterogeneity(const didlab_panel* panel, const char* attribute,
                         const char* options_json, didlab_table** out);

/* config_json keys: zeta, zeta_lambda, solver, max_iters, tolerance,
 * placebo_reps, seed, exclude_winter. weights_out (optional) receives the
 * per-cohort omega and lambda weights. */
int didlab_sdid(const didlab_panel* panel, const char* config_json, didlab_table** out,
                didlab_table** weights_out);

/* Comparison estimators and launch-timing diagnostics. kind: twfe_ols,
 * twfe_ppml, iv_binary, iv_firm_count, launch_timing, neighbor_launch,
 * pretrend_launch. options_json keys: country_year_fe, window, lag,
 * attributes, first_firm_outcome, sample_start. */
int didlab_classic(const didlab_panel* panel, const char* kind, const char* options_json,
                   didlab_table** out);

/* Per-city 3-month moving averages of log accidents (plot data). */
int didlab_series(const didlab_panel* panel, didlab_table** out);

/* config_json: {"estimator": {...}, "dgp": {...}, "reps": n, "threads": k,
 * "seed": s}. */
int didlab_monte_carlo(const char* config_json, didlab_table** out);

/* monthly = effect_pct/100 * baseline * cost; annual = 12 * monthly. */
int didlab_cost_projection(double effect_pct, double baseline_monthly_accidents,
                           double cost_per_accident, double* monthly_out, double* annual_out);

/* ------------------------------------------------------------------ tables */

int didlab_table_n_rows(const didlab_table* table);
int didlab_table_n_cols(const didlab_table* table);
const char* didlab_table_column(const didlab_table* table, int col);
int didlab_table_is_numeric(const didlab_table* table, int row, int col);
double didlab_table_number(const didlab_table* table, int row, int col); /* NaN if text */
const char* didlab_table_text(const didlab_table* table, int row, int col);
int didlab_table_write_csv(const didlab_table* table, const char* path);
void didlab_table_free(didlab_table* table);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DIDLAB_H */
