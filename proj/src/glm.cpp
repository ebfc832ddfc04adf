#include "didlab/glm.hpp"

#include <cmath>
#include <set>

#include "didlab/errors.hpp"

namespace didlab {

namespace {

// IRLS inner absorber: unit/group-period structure plus extras, weighted by
// the current mean.
Absorber make_absorber(const FeRows& rows, const std::vector<Factor>& extra_factors,
                       const Eigen::VectorXd& weights) {
  const Eigen::Index n = rows.y.size();
  std::vector<Factor> factors(2);
  factors[0].name = "unit";
  factors[0].n_levels = rows.n_units;
  factors[0].level.resize(n);
  factors[1].name = "group_period";
  int n_groups = rows.n_groups < 1 ? 1 : rows.n_groups;
  factors[1].n_levels = n_groups * rows.n_periods;
  factors[1].level.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int g = rows.group_of_unit.empty() ? 0 : rows.group_of_unit[rows.unit[i]];
    factors[0].level[i] = rows.unit[i];
    factors[1].level[i] = g * rows.n_periods + rows.period[i];
  }
  // compact away unsampled levels
  auto compact = [](Factor f) {
    std::vector<int> map(f.n_levels, -1);
    int next = 0;
    for (int& l : f.level) {
      if (map[l] < 0) map[l] = next++;
      l = map[l];
    }
    f.n_levels = next;
    return f;
  };
  std::vector<Factor> all;
  all.push_back(compact(factors[0]));
  all.push_back(compact(factors[1]));
  for (const auto& f : extra_factors) all.push_back(compact(f));
  return Absorber(std::move(all), weights);
}

}  // namespace

PpmlResult ppml_fit(const FeRows& rows, const Eigen::MatrixXd& X,
                    const std::vector<std::string>& names,
                    const std::vector<Factor>& extra_factors, double tol, int max_outer) {
  const Eigen::Index n = rows.y.size();
  if (X.rows() != n) fail_invalid("ppml_fit: regressor rows misaligned");
  const Eigen::VectorXd& counts = rows.y;
  if (counts.minCoeff() < 0) fail_invalid("ppml_fit: negative counts");

  // Separation screen: a unit (or period) whose counts are all zero has no
  // finite fixed effect.
  {
    std::vector<double> unit_sum(rows.n_units, 0.0), period_sum(rows.n_periods, 0.0);
    std::vector<bool> unit_seen(rows.n_units, false), period_seen(rows.n_periods, false);
    for (Eigen::Index i = 0; i < n; ++i) {
      unit_sum[rows.unit[i]] += counts(i);
      period_sum[rows.period[i]] += counts(i);
      unit_seen[rows.unit[i]] = true;
      period_seen[rows.period[i]] = true;
    }
    for (int u = 0; u < rows.n_units; ++u)
      if (unit_seen[u] && unit_sum[u] <= 0.0)
        fail_estimation("ppml_fit: separation, unit index " + std::to_string(u) +
                        " has all-zero counts");
    for (int t = 0; t < rows.n_periods; ++t)
      if (period_seen[t] && period_sum[t] <= 0.0)
        fail_estimation("ppml_fit: separation, period index " + std::to_string(t) +
                        " has all-zero counts");
  }

  const Eigen::Index k = X.cols();
  Eigen::VectorXd mu = (counts.array() + 0.5).matrix();
  Eigen::VectorXd eta = mu.array().log().matrix();
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(k);

  PpmlResult out;
  for (int iter = 0; iter < max_outer; ++iter) {
    Eigen::VectorXd w = mu;
    Eigen::VectorXd z = eta + ((counts - mu).array() / mu.array()).matrix();

    Absorber absorber = make_absorber(rows, extra_factors, w);
    Eigen::VectorXd z_dem = z;
    {
      auto eff = absorber.demean(z_dem, 1e-11, 10000);
      if (!eff.converged) fail_estimation("ppml_fit: inner demeaning did not converge");
    }
    Eigen::MatrixXd X_dem = X;
    absorber.demean_matrix(X_dem, 1e-11, 10000);

    WlsFit wls = solve_wls(X_dem, z_dem, w, names);
    Eigen::VectorXd new_coef = Eigen::VectorXd::Zero(k);
    for (Eigen::Index j = 0; j < k; ++j)
      if (!std::isnan(wls.coef(j))) new_coef(j) = wls.coef(j);

    // eta = absorbed part + X * coef; the absorbed part is z - z_dem shifted
    // by the regressor projection.
    Eigen::VectorXd fe_part = (z - X * new_coef) - (z_dem - X_dem * new_coef);
    Eigen::VectorXd new_eta = fe_part + X * new_coef;

    double delta = (new_coef - coef).cwiseAbs().maxCoeff();
    coef = new_coef;
    eta = new_eta;
    mu = eta.array().min(30.0).exp().matrix();  // guard against overflow while iterating
    out.iterations = iter + 1;
    if (delta <= tol && iter > 0) {
      out.converged = true;
      // final sandwich on the score sum_i x~_i (y_i - mu_i), clustered by
      // unit; heteroskedasticity-robust when a single cluster remains, empty
      // for saturated fits with no residual degrees of freedom
      Eigen::VectorXd u_pearson = ((counts - mu).array() / mu.array()).matrix();
      std::set<int> cluster_ids(rows.unit.begin(), rows.unit.end());
      try {
        if (cluster_ids.size() >= 2)
          out.vcov = cluster_robust_vcov(X_dem, u_pearson, w, rows.unit, wls.kept,
                                         absorber.absorbed_df());
        else
          out.vcov = hc1_vcov(X_dem, u_pearson, w, wls.kept, absorber.absorbed_df());
      } catch (const Error&) {
        out.vcov = VcovResult{};
      }
      break;
    }
  }
  if (!out.converged)
    fail_estimation("ppml_fit: no convergence in " + std::to_string(max_outer) +
                    " outer iterations");
  out.coef = coef;
  out.eta = eta;
  return out;
}

TslsResult tsls_fit(const FeRows& rows, const Eigen::VectorXd& endog,
                    const Eigen::MatrixXd& instruments,
                    const std::vector<std::string>& instrument_names,
                    const std::vector<Factor>& extra_factors) {
  const Eigen::Index n = rows.y.size();
  if (endog.size() != n || instruments.rows() != n) fail_invalid("tsls_fit: misaligned inputs");
  if (instruments.cols() < 1) fail_invalid("tsls_fit: need at least one instrument");

  Absorber absorber = make_absorber(rows, extra_factors, rows.weight);
  const int df_absorbed = absorber.absorbed_df();

  Eigen::VectorXd y_dem = rows.y;
  Eigen::VectorXd d_dem = endog;
  Eigen::MatrixXd Z_dem = instruments;
  {
    auto eff_y = absorber.demean(y_dem);
    auto eff_d = absorber.demean(d_dem);
    if (!eff_y.converged || !eff_d.converged)
      fail_estimation("tsls_fit: demeaning did not converge");
    absorber.demean_matrix(Z_dem);
  }

  // First stage: demeaned endogenous regressor on demeaned instruments.
  WlsFit first = solve_wls(Z_dem, d_dem, rows.weight, instrument_names);
  if (first.kept.empty()) fail_estimation("tsls_fit: no within-FE instrument variation");
  VcovResult first_vcov = cluster_robust_vcov(Z_dem, first.residuals, rows.weight,
                                              rows.unit, first.kept, df_absorbed);

  // Joint Wald test of the kept instruments, divided by the instrument count:
  // equals the Kleibergen-Paap rk Wald F with one endogenous regressor.
  Eigen::VectorXd pi(static_cast<Eigen::Index>(first.kept.size()));
  for (std::size_t j = 0; j < first.kept.size(); ++j)
    pi(static_cast<Eigen::Index>(j)) = first.coef(first.kept[j]);
  Eigen::VectorXd solved = first_vcov.cov.ldlt().solve(pi);
  double wald = pi.dot(solved);

  TslsResult out;
  out.n_instruments = static_cast<int>(first.kept.size());
  out.first_stage_F = wald / out.n_instruments;

  const Eigen::VectorXd& d_hat = first.fitted;
  double denom = d_hat.dot(rows.weight.cwiseProduct(d_dem));
  if (std::abs(denom) < 1e-12) fail_estimation("tsls_fit: first-stage rank failure");
  out.estimate = d_hat.dot(rows.weight.cwiseProduct(y_dem)) / denom;

  // Clustered sandwich with residuals built from the actual regressor.
  Eigen::VectorXd u = y_dem - d_dem * out.estimate;
  VcovResult vc = cluster_robust_vcov(d_hat, u, rows.weight, rows.unit, {0}, df_absorbed);
  out.se = std::sqrt(vc.cov(0, 0));
  return out;
}

}  // namespace didlab
