#include "didlab/wls.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "didlab/errors.hpp"

namespace didlab {

namespace {

constexpr double kRankTol = 1e-9;  // relative column-norm tolerance for drops

std::string column_name(const std::vector<std::string>& names, int j) {
  if (j < static_cast<int>(names.size())) return names[j];
  return "x" + std::to_string(j);
}

}  // namespace

WlsFit solve_wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                 const Eigen::VectorXd& weights, const std::vector<std::string>& names) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  if (y.size() != n) fail_invalid("solve_wls: y length does not match X rows");
  if (weights.size() != n) fail_invalid("solve_wls: weight length does not match X rows");
  if (!X.allFinite() || !y.allFinite() || !weights.allFinite())
    fail_invalid("solve_wls: non-finite inputs");
  if (weights.minCoeff() < 0.0) fail_invalid("solve_wls: negative weights");
  if (weights.maxCoeff() <= 0.0) fail_invalid("solve_wls: all weights are zero");

  Eigen::VectorXd sw = weights.array().sqrt();
  Eigen::MatrixXd Xs = sw.asDiagonal() * X;
  Eigen::VectorXd ys = sw.asDiagonal() * y;

  // Modified Gram-Schmidt in column order. A column whose residual norm falls
  // below tol * original norm is declared collinear with earlier columns.
  WlsFit fit;
  fit.coef = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::quiet_NaN());
  std::vector<Eigen::VectorXd> q;  // orthonormal basis of kept columns
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::VectorXd v = Xs.col(j);
    double orig = v.norm();
    for (std::size_t m = 0; m < q.size(); ++m) {
      double r = q[m].dot(v);
      R(static_cast<Eigen::Index>(m), j) = r;
      v -= r * q[m];
    }
    // one re-orthogonalization pass for stability
    for (std::size_t m = 0; m < q.size(); ++m) {
      double r = q[m].dot(v);
      R(static_cast<Eigen::Index>(m), j) += r;
      v -= r * q[m];
    }
    double norm = v.norm();
    if (orig <= 0.0 || norm <= kRankTol * orig) {
      fit.dropped.push_back(column_name(names, static_cast<int>(j)));
      continue;
    }
    R(static_cast<Eigen::Index>(q.size()), j) = norm;
    q.push_back(v / norm);
    fit.kept.push_back(static_cast<int>(j));
  }

  const Eigen::Index r = static_cast<Eigen::Index>(fit.kept.size());
  Eigen::VectorXd qy(r);
  for (Eigen::Index m = 0; m < r; ++m) qy(m) = q[static_cast<std::size_t>(m)].dot(ys);

  // Back-substitution on the kept-column triangular system.
  Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
  for (Eigen::Index m = r - 1; m >= 0; --m) {
    double s = qy(m);
    for (Eigen::Index j = m + 1; j < r; ++j) s -= R(m, fit.kept[j]) * b(j);
    b(m) = s / R(m, fit.kept[m]);
  }
  for (Eigen::Index m = 0; m < r; ++m) fit.coef(fit.kept[m]) = b(m);

  Eigen::VectorXd coef_filled = fit.coef;
  for (Eigen::Index j = 0; j < k; ++j)
    if (std::isnan(coef_filled(j))) coef_filled(j) = 0.0;
  fit.fitted = X * coef_filled;
  fit.residuals = y - fit.fitted;
  return fit;
}

VcovResult cluster_robust_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                               const Eigen::VectorXd& weights, const std::vector<int>& cluster,
                               const std::vector<int>& kept, int df_absorbed) {
  const Eigen::Index n = X.rows();
  if (residuals.size() != n || weights.size() != n ||
      static_cast<Eigen::Index>(cluster.size()) != n)
    fail_invalid("cluster_robust_vcov: misaligned inputs");
  const int k = static_cast<int>(kept.size());
  if (k == 0) fail_invalid("cluster_robust_vcov: no retained coefficients");

  std::map<int, Eigen::VectorXd> scores;
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd xi(k);
    for (int j = 0; j < k; ++j) xi(j) = X(i, kept[j]);
    bread.noalias() += weights(i) * xi * xi.transpose();
    auto [it, inserted] = scores.try_emplace(cluster[i], Eigen::VectorXd::Zero(k));
    it->second.noalias() += weights(i) * residuals(i) * xi;
  }
  const int G = static_cast<int>(scores.size());
  if (G < 2) fail_invalid("cluster_robust_vcov: need at least 2 clusters");
  const double N = static_cast<double>(n);
  const double K = static_cast<double>(k + df_absorbed);
  if (K >= N) fail_invalid("cluster_robust_vcov: K >= N");

  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (const auto& [id, s] : scores) meat.noalias() += s * s.transpose();

  Eigen::MatrixXd bread_inv = bread.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  VcovResult out;
  out.kept = kept;
  out.n_clusters = G;
  out.small_sample_factor = (static_cast<double>(G) / (G - 1.0)) * ((N - 1.0) / (N - K));
  out.cov = out.small_sample_factor * bread_inv * meat * bread_inv;
  // symmetrize against round-off
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

VcovResult hc1_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                    const Eigen::VectorXd& weights, const std::vector<int>& kept,
                    int df_absorbed) {
  const Eigen::Index n = X.rows();
  const int k = static_cast<int>(kept.size());
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd xi(k);
    for (int j = 0; j < k; ++j) xi(j) = X(i, kept[j]);
    bread.noalias() += weights(i) * xi * xi.transpose();
    double s = weights(i) * residuals(i);
    meat.noalias() += s * s * xi * xi.transpose();
  }
  const double N = static_cast<double>(n);
  const double K = static_cast<double>(k + df_absorbed);
  if (K >= N) fail_invalid("hc1_vcov: K >= N");
  Eigen::MatrixXd bread_inv = bread.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  VcovResult out;
  out.kept = kept;
  out.n_clusters = static_cast<int>(n);
  out.small_sample_factor = N / (N - K);
  out.cov = out.small_sample_factor * bread_inv * meat * bread_inv;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

}  // namespace didlab
