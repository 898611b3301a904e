#include "nisb/statcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "nisb/error.hpp"

namespace nisb {

VariableSet::VariableSet(std::vector<std::string> names, std::vector<Role> roles)
    : names_(std::move(names)), roles_(std::move(roles)) {
  if (names_.size() != roles_.size())
    throw Error(ErrorCode::dimension_mismatch, "variable names and roles differ in length");
  std::set<std::string> seen;
  for (const auto& n : names_)
    if (!seen.insert(n).second) throw Error(ErrorCode::invalid_argument, "duplicate variable '" + n + "'");
  if (std::count(roles_.begin(), roles_.end(), Role::outcome) != 1)
    throw Error(ErrorCode::invalid_argument, "exactly one outcome variable is required");
  if (std::count(roles_.begin(), roles_.end(), Role::auxiliary) < 1)
    throw Error(ErrorCode::invalid_argument, "at least one auxiliary variable is required");
}

std::vector<std::string> VariableSet::with_role(Role r) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (roles_[i] == r) out.push_back(names_[i]);
  return out;
}

const std::string& VariableSet::outcome() const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (roles_[i] == Role::outcome) return names_[i];
  throw Error(ErrorCode::invalid_argument, "no outcome variable");
}

std::vector<std::string> VariableSet::predictors() const { return with_role(Role::predictor); }
std::vector<std::string> VariableSet::auxiliaries() const { return with_role(Role::auxiliary); }

std::size_t SummaryStats::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end())
    throw Error(ErrorCode::invalid_argument, "summary statistics do not cover '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

bool SummaryStats::contains(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

SummaryStats SummaryStats::subset(const std::vector<std::string>& keep) const {
  SummaryStats out;
  out.pattern = pattern;
  out.count = count;
  out.names = keep;
  const auto k = static_cast<Eigen::Index>(keep.size());
  out.means.resize(k);
  out.cov.resize(k, k);
  std::vector<Eigen::Index> idx;
  for (const auto& n : keep) idx.push_back(static_cast<Eigen::Index>(index_of(n)));
  for (Eigen::Index i = 0; i < k; ++i) {
    out.means[i] = means[idx[i]];
    for (Eigen::Index j = 0; j < k; ++j) out.cov(i, j) = cov(idx[i], idx[j]);
  }
  return out;
}

void SummaryStats::validate() const {
  const auto k = static_cast<Eigen::Index>(names.size());
  if (means.size() != k || cov.rows() != k || cov.cols() != k)
    throw Error(ErrorCode::dimension_mismatch, "means/cov dimensions do not match the variable list");
  if (count && *count < 1) throw Error(ErrorCode::invalid_argument, "count must be positive");
  if (!means.allFinite() || !cov.allFinite())
    throw Error(ErrorCode::non_finite, "summary statistics contain non-finite values");
  const double scale = std::max(cov.cwiseAbs().maxCoeff(), 1e-300);
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw Error(ErrorCode::invalid_argument, "covariance matrix is not symmetric");
  if (k == 0) return;
  const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(sym.trace(), 0.0))
    throw Error(ErrorCode::invalid_argument, "covariance matrix is not positive semidefinite");
}

SummaryStats compute_summary(const Eigen::MatrixXd& rows, const std::vector<std::string>& names,
                             Pattern pattern) {
  if (rows.cols() != static_cast<Eigen::Index>(names.size()))
    throw Error(ErrorCode::dimension_mismatch, "column count does not match the variable list");
  if (rows.rows() < 2) throw Error(ErrorCode::insufficient_data, "need at least 2 rows for a covariance");
  if (!rows.allFinite()) throw Error(ErrorCode::non_finite, "microdata contain non-finite values");

  SummaryStats s;
  s.pattern = pattern;
  s.count = rows.rows();
  s.names = names;
  s.means = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - s.means.transpose();
  s.cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
  s.cov = (0.5 * (s.cov + s.cov.transpose())).eval();
  return s;
}

Eigen::VectorXd RegressionFit::coefficients() const {
  Eigen::VectorXd c(slopes.size() + 1);
  c[0] = intercept;
  c.tail(slopes.size()) = slopes;
  return c;
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& columns) {
  Eigen::MatrixXd d(columns.rows(), columns.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(columns.cols()) = columns;
  return d;
}

double scaled_condition_number(const Eigen::MatrixXd& m) {
  const Eigen::VectorXd norms = m.colwise().norm().transpose();
  if (norms.size() == 0) return 1.0;
  if ((norms.array() == 0.0).any()) return std::numeric_limits<double>::infinity();
  const Eigen::MatrixXd scaled = m * norms.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled);
  const auto& s = svd.singularValues();
  if (s[s.size() - 1] <= 0.0) return std::numeric_limits<double>::infinity();
  return s[0] / s[s.size() - 1];
}

RegressionFit ols_from_micro(const Eigen::VectorXd& y, const Eigen::MatrixXd& design) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  if (y.size() != n) throw Error(ErrorCode::dimension_mismatch, "response length differs from design rows");
  if (k < 1) throw Error(ErrorCode::invalid_argument, "design has no columns");
  if (n <= k) throw Error(ErrorCode::insufficient_data, "need more rows than design columns");
  if (!y.allFinite() || !design.allFinite())
    throw Error(ErrorCode::non_finite, "regression inputs contain non-finite values");

  const Eigen::VectorXd norms = design.colwise().norm().transpose();
  if ((norms.array() == 0.0).any()) throw Error(ErrorCode::rank_deficient, "design has an all-zero column");
  const Eigen::VectorXd inv_norms = norms.cwiseInverse();
  const Eigen::MatrixXd scaled = design * inv_norms.asDiagonal();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double smin = sv[k - 1];
  if (!(smin > 0.0) || sv[0] / smin > kMaxConditionNumber)
    throw Error(ErrorCode::rank_deficient, "design matrix is rank deficient (condition number " +
                                               std::to_string(smin > 0 ? sv[0] / smin : INFINITY) + ")");

  const Eigen::VectorXd inv_sv = sv.cwiseInverse();
  const Eigen::VectorXd beta_scaled = svd.matrixV() * (inv_sv.asDiagonal() * (svd.matrixU().transpose() * y));
  const Eigen::VectorXd beta = inv_norms.asDiagonal() * beta_scaled;

  const Eigen::VectorXd resid = y - design * beta;
  const double rss = resid.squaredNorm();
  const double df = static_cast<double>(n - k);

  const Eigen::MatrixXd v_scaled = svd.matrixV() * inv_sv.asDiagonal();
  Eigen::MatrixXd xtx_inv = inv_norms.asDiagonal() * (v_scaled * v_scaled.transpose()) * inv_norms.asDiagonal();
  xtx_inv = (0.5 * (xtx_inv + xtx_inv.transpose())).eval();

  RegressionFit fit;
  fit.intercept = beta[0];
  fit.slopes = beta.tail(k - 1);
  fit.resid_var = rss / df;
  fit.coef_cov = fit.resid_var * xtx_inv;
  fit.resid_df = df;
  return fit;
}

RegressionFit ols_from_summary(const SummaryStats& stats, const std::string& response,
                               const std::vector<std::string>& predictors) {
  const std::size_t r = stats.index_of(response);
  const auto p = static_cast<Eigen::Index>(predictors.size());
  std::vector<Eigen::Index> idx;
  for (const auto& name : predictors) idx.push_back(static_cast<Eigen::Index>(stats.index_of(name)));

  Eigen::MatrixXd s_pp(p, p);
  Eigen::VectorXd s_pr(p);
  Eigen::VectorXd m_p(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    s_pr[i] = stats.cov(idx[i], static_cast<Eigen::Index>(r));
    m_p[i] = stats.means[idx[i]];
    for (Eigen::Index j = 0; j < p; ++j) s_pp(i, j) = stats.cov(idx[i], idx[j]);
  }
  const double s_rr = stats.cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));

  if (stats.count && *stats.count <= p)
    throw Error(ErrorCode::insufficient_data, "count must exceed the number of predictors");

  Eigen::VectorXd slopes = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s_pp_inv = Eigen::MatrixXd::Zero(p, p);
  if (p > 0) {
    const Eigen::VectorXd sd = s_pp.diagonal().cwiseSqrt();
    if (!((sd.array() > 0.0).all()))
      throw Error(ErrorCode::singular_covariance, "a predictor has zero variance");
    const Eigen::VectorXd inv_sd = sd.cwiseInverse();
    const Eigen::MatrixXd corr = inv_sd.asDiagonal() * s_pp * inv_sd.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
    const Eigen::VectorXd ev = eig.eigenvalues();
    if (!(ev[0] > 0.0) || ev[p - 1] / ev[0] > kMaxConditionNumber)
      throw Error(ErrorCode::singular_covariance, "predictor covariance matrix is singular");
    const Eigen::MatrixXd corr_inv =
        eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    s_pp_inv = inv_sd.asDiagonal() * corr_inv * inv_sd.asDiagonal();
    s_pp_inv = (0.5 * (s_pp_inv + s_pp_inv.transpose())).eval();
    slopes = s_pp_inv * s_pr;
  }

  double resid = s_rr - s_pr.dot(slopes);
  const double tol = 1e-10 * std::max(s_rr, 1e-300);
  if (resid < -tol)
    throw Error(ErrorCode::inconsistent_moments,
                "negative residual variance from summary moments (" + std::to_string(resid) + ")");
  resid = std::max(resid, 0.0);

  RegressionFit fit;
  fit.slopes = slopes;
  fit.intercept = stats.means[static_cast<Eigen::Index>(r)] - slopes.dot(m_p);
  fit.coef_cov = Eigen::MatrixXd::Zero(p + 1, p + 1);
  if (stats.count) {
    const double n = static_cast<double>(*stats.count);
    fit.resid_var = n / (n - static_cast<double>(p)) * resid;
    fit.resid_df = n - static_cast<double>(p);
    // Inverse of X'X for X = [1, predictors], rebuilt from the moments.
    if (n > 1.0) {
      const Eigen::MatrixXd c_inv = s_pp_inv / (n - 1.0);
      const Eigen::VectorXd cm = c_inv * m_p;
      Eigen::MatrixXd xtx_inv(p + 1, p + 1);
      xtx_inv(0, 0) = 1.0 / n + m_p.dot(cm);
      xtx_inv.block(1, 0, p, 1) = -cm;
      xtx_inv.block(0, 1, 1, p) = -cm.transpose();
      xtx_inv.bottomRightCorner(p, p) = c_inv;
      fit.coef_cov = fit.resid_var * xtx_inv;
    }
  } else {
    fit.resid_var = resid;
    fit.resid_df = std::numeric_limits<double>::infinity();
  }
  return fit;
}

}  // namespace nisb
