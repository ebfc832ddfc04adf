#include "didlab/sdid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "didlab/errors.hpp"
#include "didlab/imputation.hpp"
#include "didlab/rng.hpp"

/*
 * Staggered synthetic difference-in-differences.
 *
 * Per adoption cohort the estimator solves two simplex-constrained least
 * squares problems: unit weights match the donors' pre-period series to the
 * cohort's mean pre-period outcome (up to a free intercept, ridge-regularized
 * with the standard (n_tr * T_post)^(1/4) * noise scaling), and time weights
 * match donor pre-period columns to donor post-period means. The cohort
 * effect is the two-by-two contrast of treated vs omega-weighted donors over
 * lambda-weighted pre vs post periods; cohorts pool by treated-cell counts.
 */

namespace didlab {

namespace {

Eigen::MatrixXd center_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c).array() -= out.col(c).mean();
  return out;
}

double objective_value(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                       const Eigen::VectorXd& w, double eta) {
  return (a * w - b).squaredNorm() + eta * w.squaredNorm();
}

// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(Eigen::VectorXd v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<double>());
  double running = 0.0, theta = 0.0;
  int rho = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    running += u[i];
    double candidate = (running - 1.0) / static_cast<double>(i + 1);
    if (u[i] - candidate > 0) {
      rho = static_cast<int>(i + 1);
      theta = candidate;
    }
  }
  (void)rho;
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::max(0.0, v(i) - theta);
  return v;
}

// Frank-Wolfe with pairwise steps (mass moves from the worst active vertex to
// the best one), exact line search, and duality-gap stopping. The pairwise
// variant converges linearly on the simplex, so tight gap tolerances are
// attainable; the gap bounds the objective suboptimality directly.
Eigen::VectorXd solve_frank_wolfe(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                  double eta, const SdidConfig& config, int* iterations) {
  const Eigen::Index k = a.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  const double scale = 1.0 + objective_value(a, b, w, eta);
  int it = 0;
  for (; it < config.max_iters; ++it) {
    Eigen::VectorXd grad = 2.0 * (a.transpose() * (a * w - b)) + 2.0 * eta * w;
    Eigen::Index toward;
    grad.minCoeff(&toward);
    double gap = grad.dot(w) - grad(toward);
    if (gap <= config.tolerance * scale) break;

    Eigen::Index away = toward;
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < k; ++j)
      if (w(j) > 0.0 && grad(j) > worst) {
        worst = grad(j);
        away = j;
      }
    if (away == toward) break;

    // direction e_toward - e_away, step capped by the mass available
    Eigen::VectorXd ad = a.col(toward) - a.col(away);
    double denom = ad.squaredNorm() + 2.0 * eta;
    if (denom <= 0.0) break;
    double step = -0.5 * (grad(toward) - grad(away)) / denom;
    step = std::clamp(step, 0.0, w(away));
    if (step <= 0.0) break;
    w(toward) += step;
    w(away) -= step;
  }
  *iterations = it;
  return w;
}

Eigen::VectorXd solve_projected_gradient(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                         double eta, const SdidConfig& config,
                                         int* iterations) {
  const Eigen::Index k = a.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  // Lipschitz constant of the gradient: 2 (sigma_max(A)^2 + eta).
  double lip = 2.0 * (a.squaredNorm() + eta);  // Frobenius bound, cheap and safe
  double step = 1.0 / lip;
  double prev = objective_value(a, b, w, eta);
  const double scale = std::max(1.0, prev);
  int it = 0;
  for (; it < config.max_iters; ++it) {
    Eigen::VectorXd grad = 2.0 * (a.transpose() * (a * w - b)) + 2.0 * eta * w;
    Eigen::VectorXd next = project_simplex(w - step * grad);
    double value = objective_value(a, b, next, eta);
    w = next;
    if (prev - value <= config.tolerance * scale) {
      ++it;
      break;
    }
    prev = value;
  }
  *iterations = it;
  return w;
}

// Standard deviation of donor first differences; the noise scale behind the
// default ridge.
double donor_noise_sd(const Eigen::MatrixXd& donors_pre) {
  std::vector<double> diffs;
  for (Eigen::Index c = 0; c < donors_pre.cols(); ++c)
    for (Eigen::Index r = 1; r < donors_pre.rows(); ++r)
      diffs.push_back(donors_pre(r, c) - donors_pre(r - 1, c));
  if (diffs.size() < 2) return 1.0;
  double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / diffs.size();
  double var = 0.0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  var /= static_cast<double>(diffs.size() - 1);
  return var > 0.0 ? std::sqrt(var) : 1.0;
}

}  // namespace

SimplexFit simplex_regression(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                              double zeta, const SdidConfig& config) {
  if (A.rows() != b.size()) fail_invalid("simplex_regression: misaligned inputs");
  if (A.cols() == 0) fail_estimation("simplex_regression: no donors");
  SimplexFit fit;
  if (A.cols() == 1) {
    fit.weights = Eigen::VectorXd::Ones(1);
    fit.intercept = (b - A.col(0)).mean();
    Eigen::VectorXd resid = b.array() - A.col(0).array() - fit.intercept;
    fit.mspe = resid.squaredNorm() / static_cast<double>(b.size());
    fit.objective = resid.squaredNorm() + zeta * zeta * static_cast<double>(A.rows());
    fit.iterations = 0;
    return fit;
  }

  Eigen::MatrixXd a = center_columns(A);
  Eigen::VectorXd bc = b.array() - b.mean();
  double eta = zeta * zeta * static_cast<double>(A.rows());

  int iterations = 0;
  Eigen::VectorXd w = config.solver == SdidConfig::Solver::frank_wolfe
                          ? solve_frank_wolfe(a, bc, eta, config, &iterations)
                          : solve_projected_gradient(a, bc, eta, config, &iterations);

  fit.weights = w;
  fit.intercept = b.mean() - (A * w).mean();
  Eigen::VectorXd resid = b - A * w - Eigen::VectorXd::Constant(b.size(), fit.intercept);
  fit.mspe = resid.squaredNorm() / static_cast<double>(b.size());
  fit.objective = resid.squaredNorm() + eta * w.squaredNorm();
  fit.iterations = iterations;
  return fit;
}

SimplexFit sdid_unit_weights(const Eigen::MatrixXd& donors_pre, const Eigen::VectorXd& target_pre,
                             const SdidConfig& config) {
  double zeta = config.zeta_omega.value_or(-1.0);
  if (zeta < 0.0) {
    // caller passes the resolved default; bare call falls back to noise * 1
    zeta = donor_noise_sd(donors_pre);
  }
  return simplex_regression(donors_pre, target_pre, zeta, config);
}

SimplexFit sdid_time_weights(const Eigen::MatrixXd& donors_pre,
                             const Eigen::VectorXd& donors_post_mean, const SdidConfig& config) {
  // rows = donors, columns = pre periods
  return simplex_regression(donors_pre.transpose(), donors_post_mean, config.zeta_lambda, config);
}

// ---------------------------------------------------------------------------
// Staggered estimator
// ---------------------------------------------------------------------------

namespace {

struct SdidData {
  std::vector<int> donors;                 // unit indices, complete series, never treated in-window
  std::map<int, std::vector<int>> cohorts;  // adoption period index -> treated unit indices
  Eigen::MatrixXd y;                        // units x periods log outcome (NaN where missing)
  std::vector<std::string> notes;
};

SdidData prepare(const Panel& panel) {
  SdidData data;
  const int T = panel.n_periods();
  std::vector<double> values = outcome_values(panel, OutcomeKind::log_accidents);
  data.y.resize(panel.n_units(), T);
  for (int u = 0; u < panel.n_units(); ++u)
    for (int t = 0; t < T; ++t)
      data.y(u, t) = values[static_cast<std::size_t>(u) * T + t];

  for (int u = 0; u < panel.n_units(); ++u) {
    bool complete = true;
    for (int t = 0; t < T && complete; ++t) complete = std::isfinite(data.y(u, t));
    const auto& launch = panel.units[u].launch;
    bool treated_in_window = launch.has_value() && *launch <= panel.periods.back();
    if (!treated_in_window) {
      if (complete)
        data.donors.push_back(u);
      else
        data.notes.push_back("donor " + panel.units[u].unit_id + " dropped: incomplete series");
      continue;
    }
    if (!complete) {
      data.notes.push_back("treated unit " + panel.units[u].unit_id +
                           " dropped: incomplete series");
      continue;
    }
    int g = panel.period_index(*launch);
    if (g <= 0) {
      data.notes.push_back("treated unit " + panel.units[u].unit_id +
                           " dropped: no pre-treatment periods");
      continue;
    }
    data.cohorts[g].push_back(u);
  }
  return data;
}

SdidResult estimate_from(const Panel& panel, const SdidData& data, const SdidConfig& config) {
  SdidResult out;
  out.notes = data.notes;
  const int T = panel.n_periods();
  if (data.cohorts.empty()) fail_estimation("sdid: no treated units with pre-periods");

  double pooled_num = 0.0, mspe_num = 0.0;
  long pooled_den = 0;
  for (const auto& [g, treated] : data.cohorts) {
    if (data.donors.empty()) {
      out.notes.push_back("cohort at " + panel.periods[g].str() + " skipped: no donors");
      continue;
    }
    const int n_pre = g;
    const int n_post = T - g;
    const int n_donors = static_cast<int>(data.donors.size());

    Eigen::MatrixXd donors_pre(n_pre, n_donors);
    for (int j = 0; j < n_donors; ++j)
      for (int t = 0; t < n_pre; ++t) donors_pre(t, j) = data.y(data.donors[j], t);
    Eigen::VectorXd target_pre(n_pre);
    for (int t = 0; t < n_pre; ++t) {
      double s = 0.0;
      for (int u : treated) s += data.y(u, t);
      target_pre(t) = s / static_cast<double>(treated.size());
    }
    Eigen::VectorXd donors_post_mean(n_donors);
    for (int j = 0; j < n_donors; ++j) {
      double s = 0.0;
      for (int t = g; t < T; ++t) s += data.y(data.donors[j], t);
      donors_post_mean(j) = s / static_cast<double>(n_post);
    }

    double zeta = config.zeta_omega.value_or(
        std::pow(static_cast<double>(treated.size()) * n_post, 0.25) *
        donor_noise_sd(donors_pre));

    SimplexFit unit_fit = simplex_regression(donors_pre, target_pre, zeta, config);
    SimplexFit time_fit = sdid_time_weights(donors_pre, donors_post_mean, config);

    // two-by-two contrast with omega / lambda weighting
    double treated_post = 0.0;
    for (int u : treated)
      for (int t = g; t < T; ++t) treated_post += data.y(u, t);
    treated_post /= static_cast<double>(treated.size() * n_post);
    double treated_pre = time_fit.weights.dot(target_pre);
    double donor_post = unit_fit.weights.dot(donors_post_mean);
    double donor_pre = time_fit.weights.dot(donors_pre * unit_fit.weights);

    SdidCohortResult cohort;
    cohort.adoption = panel.periods[g];
    cohort.treated_units = treated;
    cohort.donor_units = data.donors;
    cohort.omega = unit_fit.weights;
    cohort.lambda = time_fit.weights;
    cohort.intercept = unit_fit.intercept;
    cohort.tau = (treated_post - treated_pre) - (donor_post - donor_pre);
    cohort.n_treated_cells = static_cast<long>(treated.size()) * n_post;
    cohort.mspe_monthly = unit_fit.mspe;
    out.cohorts.push_back(std::move(cohort));

    pooled_num += out.cohorts.back().tau * out.cohorts.back().n_treated_cells;
    mspe_num += out.cohorts.back().mspe_monthly * out.cohorts.back().n_treated_cells;
    pooled_den += out.cohorts.back().n_treated_cells;
  }
  if (out.cohorts.empty()) fail_estimation("sdid: every cohort lacks admissible donors");
  out.tau_pooled = pooled_num / static_cast<double>(pooled_den);
  out.mspe_monthly = mspe_num / static_cast<double>(pooled_den);
  return out;
}

}  // namespace

SdidResult sdid_estimate(const Panel& panel, const SdidConfig& config) {
  if (panel.frequency != Frequency::monthly)
    fail_invalid("sdid_estimate requires a monthly panel");
  SdidData data = prepare(panel);
  return estimate_from(panel, data, config);
}

double sdid_placebo_se(const Panel& panel, const SdidConfig& config) {
  if (config.placebo_reps < 2) fail_invalid("sdid_placebo_se: need at least 2 replications");
  SdidData data = prepare(panel);
  if (data.cohorts.empty()) fail_estimation("sdid_placebo_se: no treated cohorts");

  // cohort structure to re-assign: (period index, size), in time order
  std::vector<std::pair<int, int>> structure;
  long n_treated_total = 0;
  for (const auto& [g, treated] : data.cohorts) {
    structure.emplace_back(g, static_cast<int>(treated.size()));
    n_treated_total += static_cast<long>(treated.size());
  }
  const int n_donors = static_cast<int>(data.donors.size());
  if (n_donors <= static_cast<int>(n_treated_total))
    fail_estimation("sdid_placebo_se: donor pool too small for placebo reassignment (" +
                    std::to_string(n_donors) + " donors, " + std::to_string(n_treated_total) +
                    " treated)");

  std::vector<double> estimates(static_cast<std::size_t>(config.placebo_reps));
  for (int rep = 0; rep < config.placebo_reps; ++rep) {
    std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(rep)));
    std::vector<int> pool = data.donors;
    deterministic_shuffle(pool, rng);

    SdidData placebo;
    placebo.y = data.y;
    std::size_t cursor = 0;
    for (const auto& [g, size] : structure) {
      std::vector<int>& assigned = placebo.cohorts[g];
      for (int s = 0; s < size; ++s) assigned.push_back(pool[cursor++]);
    }
    placebo.donors.assign(pool.begin() + static_cast<std::ptrdiff_t>(cursor), pool.end());
    std::sort(placebo.donors.begin(), placebo.donors.end());
    for (auto& [g, units] : placebo.cohorts) std::sort(units.begin(), units.end());

    SdidResult res = estimate_from(panel, placebo, config);
    estimates[static_cast<std::size_t>(rep)] = res.tau_pooled;
  }
  double mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / estimates.size();
  double var = 0.0;
  for (double e : estimates) var += (e - mean) * (e - mean);
  var /= static_cast<double>(estimates.size());
  return std::sqrt(var);
}

SdidResult sdid_run(const Panel& panel, const SdidConfig& config) {
  SdidResult out = sdid_estimate(panel, config);
  try {
    out.se_placebo = sdid_placebo_se(panel, config);
  } catch (const Error& e) {
    out.notes.push_back(std::string("placebo variance unavailable: ") + e.what());
  }
  return out;
}

SeasonalBalance seasonal_balance_report(const Panel& panel, const SdidConfig& config) {
  if (panel.frequency != Frequency::monthly)
    fail_invalid("seasonal_balance_report requires a monthly panel");
  auto is_summer = [](const PeriodId& p) { return p.month >= 4 && p.month <= 9; };

  SeasonalBalance out;
  long pre_summer = 0, pre_total = 0, post_summer = 0, post_total = 0;
  for (int u = 0; u < panel.n_units(); ++u) {
    const auto& launch = panel.units[u].launch;
    if (!launch.has_value() || *launch > panel.periods.back()) continue;
    for (int t = 0; t < panel.n_periods(); ++t) {
      bool treated = panel.treated(u, t);
      (treated ? post_total : pre_total) += 1;
      if (is_summer(panel.periods[t])) (treated ? post_summer : pre_summer) += 1;
    }
  }
  if (pre_total > 0) out.pre_summer_share = static_cast<double>(pre_summer) / pre_total;
  if (post_total > 0) out.post_summer_share = static_cast<double>(post_summer) / post_total;
  out.imbalance_flag = std::abs(out.pre_summer_share - out.post_summer_share) > 0.02;

  // Signed seasonal residual of the synthetic control over pre periods,
  // pooled over cohorts by treated-cell count.
  SdidResult fit = sdid_estimate(panel, config);
  double summer_sum = 0.0, winter_sum = 0.0;
  long summer_n = 0, winter_n = 0;
  SdidData data = prepare(panel);
  for (const auto& cohort : fit.cohorts) {
    int g = panel.period_index(cohort.adoption);
    for (int t = 0; t < g; ++t) {
      double treated_mean = 0.0;
      for (int u : cohort.treated_units) treated_mean += data.y(u, t);
      treated_mean /= static_cast<double>(cohort.treated_units.size());
      double synthetic = cohort.intercept;
      for (std::size_t j = 0; j < cohort.donor_units.size(); ++j)
        synthetic += cohort.omega(static_cast<Eigen::Index>(j)) * data.y(cohort.donor_units[j], t);
      double residual = treated_mean - synthetic;
      if (is_summer(panel.periods[t])) {
        summer_sum += residual * cohort.n_treated_cells;
        summer_n += cohort.n_treated_cells;
      } else {
        winter_sum += residual * cohort.n_treated_cells;
        winter_n += cohort.n_treated_cells;
      }
    }
  }
  double summer_mean = summer_n > 0 ? summer_sum / summer_n : 0.0;
  double winter_mean = winter_n > 0 ? winter_sum / winter_n : 0.0;
  out.seasonal_residual = summer_mean - winter_mean;
  return out;
}

}  // namespace didlab
