#include "nisb/proxy.hpp"

#include <algorithm>
#include <cmath>

#include "nisb/error.hpp"

namespace nisb {

namespace {

double column_sd(const Eigen::VectorXd& v) {
  const double n = static_cast<double>(v.size());
  if (n < 2) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / (n - 1.0));
}

}  // namespace

Eigen::MatrixXd SelectedSample::design_za() const {
  Eigen::MatrixXd d(size(), 1 + p() + q());
  d.col(0).setOnes();
  d.middleCols(1, p()) = z;
  d.rightCols(q()) = a;
  return d;
}

Eigen::MatrixXd SelectedSample::design_z() const { return with_intercept(z); }

void SelectedSample::validate() const {
  if (z.rows() != y.size() || a.rows() != y.size())
    throw Error(ErrorCode::dimension_mismatch, "Y, Z and A row counts differ");
  if (static_cast<std::size_t>(z.cols()) != z_names.size() ||
      static_cast<std::size_t>(a.cols()) != a_names.size())
    throw Error(ErrorCode::dimension_mismatch, "column names do not match the data");
  if (a.cols() < 1) throw Error(ErrorCode::invalid_argument, "at least one auxiliary variable is required");
  if (!y.allFinite() || !z.allFinite() || !a.allFinite())
    throw Error(ErrorCode::non_finite, "selected microdata contain non-finite values");
}

void ConditionalMoments::set_outcome(double beta_y0, Eigen::VectorXd beta_yz, double sigma_yy,
                                     double sigma_xy) {
  Outcome o;
  o.beta_y0_z = beta_y0;
  o.beta_yz_z = std::move(beta_yz);
  o.sigma_yy_z = sigma_yy;
  o.sigma_xy_z = sigma_xy;
  if (!(sigma_xx_z > 0.0) || !(sigma_yy > 0.0))
    throw Error(ErrorCode::zero_residual_variance,
                "residual variance of the proxy or outcome given Z is zero");
  const double bound = std::sqrt(sigma_xx_z * sigma_yy);
  if (std::abs(sigma_xy) > bound * (1.0 + 1e-10) + 1e-300)
    throw Error(ErrorCode::inconsistent_moments, "|sigma_xy| exceeds sqrt(sigma_xx sigma_yy)");
  o.rho_xy_z = std::clamp(sigma_xy / bound, -1.0, 1.0);
  outcome = std::move(o);
}

void require_usable_proxy(const ProxySpec& spec, const SelectedSample& sample) {
  const double sd_y = column_sd(sample.y);
  double strongest = 0.0;
  for (Eigen::Index j = 0; j < sample.q(); ++j)
    strongest = std::max(strongest, std::abs(spec.a_coeffs[j]) * column_sd(sample.a.col(j)));
  if (!(strongest >= 1e-8 * sd_y) || strongest == 0.0)
    throw Error(ErrorCode::no_usable_proxy,
                "auxiliary variables carry no information about the outcome given Z");
}

ProxySpec fit_proxy_linear(const SelectedSample& sample) {
  sample.validate();
  const RegressionFit fit = ols_from_micro(sample.y, sample.design_za());
  ProxySpec spec;
  spec.intercept = fit.intercept;
  spec.z_coeffs = fit.slopes.head(sample.p());
  spec.a_coeffs = fit.slopes.tail(sample.q());
  spec.source = ProxySource::linear;
  require_usable_proxy(spec, sample);
  return spec;
}

Eigen::VectorXd proxy_values(const ProxySpec& spec, const Eigen::MatrixXd& a_rows) {
  if (a_rows.cols() != spec.a_coeffs.size())
    throw Error(ErrorCode::dimension_mismatch, "auxiliary column count differs from proxy coefficients");
  return a_rows * spec.a_coeffs;
}

ConditionalMoments conditional_moments_selected(const SelectedSample& sample, const ProxySpec& spec) {
  sample.validate();
  const Eigen::VectorXd x = proxy_values(spec, sample.a);
  const Eigen::MatrixXd design = sample.design_z();
  const RegressionFit fx = ols_from_micro(x, design);
  const RegressionFit fy = ols_from_micro(sample.y, design);

  const Eigen::VectorXd rx = x - design * fx.coefficients();
  const Eigen::VectorXd ry = sample.y - design * fy.coefficients();

  ConditionalMoments m;
  m.pattern = Pattern::selected;
  m.beta_x0_z = fx.intercept;
  m.beta_xz_z = fx.slopes;
  m.sigma_xx_z = fx.resid_var;
  m.set_outcome(fy.intercept, fy.slopes, fy.resid_var, rx.dot(ry) / fx.resid_df);
  return m;
}

ConditionalMoments conditional_moments_nonselected(const ProxySpec& spec, const SummaryStats& nonsel,
                                                   const std::vector<std::string>& z_names,
                                                   const std::vector<std::string>& a_names) {
  const auto p = static_cast<Eigen::Index>(z_names.size());
  const auto q = static_cast<Eigen::Index>(a_names.size());
  if (spec.a_coeffs.size() != q)
    throw Error(ErrorCode::dimension_mismatch, "auxiliary names differ from proxy coefficients");

  std::vector<std::string> za = z_names;
  za.insert(za.end(), a_names.begin(), a_names.end());
  const SummaryStats s = nonsel.subset(za);

  // Moments of (X, Z) with X = a' A.
  const Eigen::VectorXd& a = spec.a_coeffs;
  const Eigen::MatrixXd s_zz = s.cov.topLeftCorner(p, p);
  const Eigen::MatrixXd s_az = s.cov.block(p, 0, q, p);
  const Eigen::MatrixXd s_aa = s.cov.bottomRightCorner(q, q);

  SummaryStats xz;
  xz.pattern = Pattern::nonselected;
  xz.count = nonsel.count;
  xz.names.push_back("\x01proxy");
  xz.names.insert(xz.names.end(), z_names.begin(), z_names.end());
  xz.means.resize(p + 1);
  xz.means[0] = a.dot(s.means.tail(q));
  xz.means.tail(p) = s.means.head(p);
  xz.cov.resize(p + 1, p + 1);
  xz.cov(0, 0) = a.dot(s_aa * a);
  xz.cov.block(0, 1, 1, p) = a.transpose() * s_az;
  xz.cov.block(1, 0, p, 1) = (a.transpose() * s_az).transpose();
  xz.cov.bottomRightCorner(p, p) = s_zz;

  const RegressionFit f = ols_from_summary(xz, xz.names[0], z_names);

  ConditionalMoments m;
  m.pattern = Pattern::nonselected;
  m.beta_x0_z = f.intercept;
  m.beta_xz_z = f.slopes;
  m.sigma_xx_z = f.resid_var;
  return m;
}

}  // namespace nisb
