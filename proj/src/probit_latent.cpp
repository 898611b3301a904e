#include "nisb/probit_latent.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <boost/math/special_functions/erf.hpp>

#include "nisb/error.hpp"

namespace nisb {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kTailSwitch = 5.0;

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double log_normal_cdf(double x) {
  if (x > -37.0) return std::log(normal_cdf(x));
  // Asymptotic expansion of log Phi in the far lower tail.
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

// z ~ N(0, 1) conditioned on z > a.
double draw_std_normal_above(double a, Random& rng) {
  if (a <= kTailSwitch) {
    const double mass = normal_sf(a);
    const double u = rng.uniform() * mass;
    const double z = kSqrt2 * boost::math::erfc_inv(2.0 * u);
    return std::max(z, a);
  }
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(rng.uniform()) / alpha;
    const double d = z - alpha;
    if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
  }
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }
double normal_sf(double x) { return 0.5 * std::erfc(x / kSqrt2); }

double inverse_mills(double x) {
  if (x > -37.0) return normal_pdf(x) / normal_cdf(x);
  const double x2 = x * x;
  return -x - 1.0 / x + 2.0 / (x2 * x);
}

double probit_log_likelihood(const Eigen::VectorXd& y, const Eigen::MatrixXd& design,
                             const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = design * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) ll += log_normal_cdf(y[i] > 0.5 ? eta[i] : -eta[i]);
  return ll;
}

ProbitMle probit_mle(const Eigen::VectorXd& y, const Eigen::MatrixXd& design) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  if (y.size() != n) throw Error(ErrorCode::dimension_mismatch, "response length differs from design rows");
  if (n <= k) throw Error(ErrorCode::insufficient_data, "need more rows than design columns");
  Eigen::Index ones = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw Error(ErrorCode::invalid_argument, "binary outcome must be 0/1");
    ones += y[i] == 1.0;
  }
  if (ones == 0 || ones == n) throw Error(ErrorCode::invalid_argument, "binary outcome has a single class");
  if (scaled_condition_number(design) > kMaxConditionNumber)
    throw Error(ErrorCode::rank_deficient, "probit design matrix is rank deficient");

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  double ll = probit_log_likelihood(y, design, beta);
  Eigen::MatrixXd info(k, k);
  double last_norm = 0.0;
  int growing = 0;

  for (int iter = 1; iter <= 100; ++iter) {
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd score = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lp = inverse_mills(eta[i]);
      const double lm = inverse_mills(-eta[i]);
      score += (y[i] > 0.5 ? lp : -lm) * design.row(i).transpose();
      w[i] = lp * lm;
    }
    info = design.transpose() * w.asDiagonal() * design;
    Eigen::VectorXd step = info.ldlt().solve(score);

    Eigen::VectorXd next = beta + step;
    double next_ll = probit_log_likelihood(y, design, next);
    for (int half = 0; half < 30 && !(next_ll >= ll - 1e-12 * std::abs(ll)); ++half) {
      step *= 0.5;
      next = beta + step;
      next_ll = probit_log_likelihood(y, design, next);
    }
    beta = next;
    ll = next_ll;

    const double norm = beta.norm();
    growing = norm > last_norm * 1.01 ? growing + 1 : 0;
    last_norm = norm;
    const double max_eta = (design * beta).cwiseAbs().maxCoeff();
    if (max_eta > 40.0 && growing >= 3 && ll > -1e-6 * static_cast<double>(n))
      throw Error(ErrorCode::separation, "perfect separation: probit coefficients diverge");

    if (step.cwiseAbs().maxCoeff() < 1e-8) {
      ProbitMle out;
      out.coefficients = beta;
      Eigen::MatrixXd cov = info.inverse();
      out.coef_cov = 0.5 * (cov + cov.transpose());
      out.log_likelihood = ll;
      out.iterations = iter;
      return out;
    }
  }
  if (growing >= 5) throw Error(ErrorCode::separation, "perfect separation: probit coefficients diverge");
  throw Error(ErrorCode::not_converged, "probit scoring did not converge in 100 iterations");
}

ProbitFit fit_probit(const SelectedSample& sample) {
  sample.validate();
  ProbitFit fit;
  fit.mle = probit_mle(sample.y, sample.design_za());
  const Eigen::VectorXd& b = fit.mle.coefficients;
  fit.proxy.intercept = b[0];
  fit.proxy.z_coeffs = b.segment(1, sample.p());
  fit.proxy.a_coeffs = b.tail(sample.q());
  fit.proxy.source = ProxySource::probit_latent;
  return fit;
}

double draw_truncated_normal(double mean, bool positive, Random& rng) {
  if (positive) return std::max(mean + draw_std_normal_above(-mean, rng), 1e-300);
  return std::min(mean - draw_std_normal_above(mean, rng), -1e-300);
}

Eigen::VectorXd draw_latent(const Eigen::VectorXd& y, const Eigen::VectorXd& linear_predictor, Random& rng) {
  if (y.size() != linear_predictor.size())
    throw Error(ErrorCode::dimension_mismatch, "outcome and linear predictor lengths differ");
  Eigen::VectorXd u(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) u[i] = draw_truncated_normal(linear_predictor[i], y[i] > 0.5, rng);
  return u;
}

LatentDesign::LatentDesign(Eigen::MatrixXd design) : design_(std::move(design)) {
  if (design_.rows() <= design_.cols())
    throw Error(ErrorCode::insufficient_data, "need more rows than design columns");
  if (scaled_condition_number(design_) > kMaxConditionNumber)
    throw Error(ErrorCode::rank_deficient, "latent design matrix is rank deficient");
  gram_llt_.compute(design_.transpose() * design_);
  if (gram_llt_.info() != Eigen::Success)
    throw Error(ErrorCode::rank_deficient, "latent design gram matrix is not positive definite");
}

Eigen::VectorXd LatentDesign::ols(const Eigen::VectorXd& u) const {
  return gram_llt_.solve(design_.transpose() * u);
}

Eigen::MatrixXd LatentDesign::inverse_gram() const {
  return gram_llt_.solve(Eigen::MatrixXd::Identity(design_.cols(), design_.cols()));
}

Eigen::VectorXd LatentDesign::draw_beta(const Eigen::VectorXd& u, Random& rng) const {
  if (u.size() != design_.rows()) throw Error(ErrorCode::dimension_mismatch, "latent vector length differs from design");
  Eigen::VectorXd z(design_.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  // With D'D = L L', L^{-T} z has covariance (D'D)^{-1}.
  const Eigen::VectorXd offset = gram_llt_.matrixU().solve(z);
  return ols(u) + offset;
}

Eigen::VectorXd draw_beta(const Eigen::VectorXd& u, const Eigen::MatrixXd& design, Random& rng) {
  return LatentDesign(design).draw_beta(u, rng);
}

double rescale_divisor(double sigma_uu_z_draw, RescaleMode mode) {
  if (!(sigma_uu_z_draw > 0.0) || !std::isfinite(sigma_uu_z_draw))
    throw Error(ErrorCode::invalid_argument, "sigma_uu.z draw must be positive, got " + std::to_string(sigma_uu_z_draw));
  return mode == RescaleMode::sqrt ? std::sqrt(sigma_uu_z_draw) : sigma_uu_z_draw;
}

RegressionFit rescale_u_on_z(const RegressionFit& u_on_z, double sigma_uu_z_draw, RescaleMode mode) {
  const double c = rescale_divisor(sigma_uu_z_draw, mode);
  RegressionFit out = u_on_z;
  out.intercept /= c;
  out.slopes /= c;
  out.resid_var /= c * c;
  out.coef_cov /= c * c;
  return out;
}

void rescale_latent_moments(ConditionalMoments& moments, double sigma_uu_z_draw, RescaleMode mode) {
  if (!moments.outcome) throw Error(ErrorCode::invalid_argument, "moments lack the latent outcome block");
  const double c = rescale_divisor(sigma_uu_z_draw, mode);
  auto& o = *moments.outcome;
  o.beta_y0_z /= c;
  o.beta_yz_z /= c;
  o.sigma_xy_z /= c;
  o.sigma_yy_z /= c * c;
}

ProbitGibbs::ProbitGibbs(const SelectedSample& sample, const ProbitFit& start)
    : sample_(&sample), design_(sample.design_za()) {
  state_.beta_draw = start.mle.coefficients;
  state_.proxy_draw = start.proxy;
  state_.u = Eigen::VectorXd::Zero(sample.size());
}

void ProbitGibbs::sweep(Random& rng) {
  const Eigen::VectorXd eta = design_.design() * state_.beta_draw;
  state_.u = draw_latent(sample_->y, eta, rng);
  check_signs();
  state_.beta_draw = design_.draw_beta(state_.u, rng);
  const auto p = sample_->p();
  state_.proxy_draw.intercept = state_.beta_draw[0];
  state_.proxy_draw.z_coeffs = state_.beta_draw.segment(1, p);
  state_.proxy_draw.a_coeffs = state_.beta_draw.tail(sample_->q());
  state_.proxy_draw.source = ProxySource::probit_latent;
}

void ProbitGibbs::check_signs() const {
  for (Eigen::Index i = 0; i < state_.u.size(); ++i) {
    const bool pos = state_.u[i] > 0.0;
    if (pos != (sample_->y[i] > 0.5))
      throw Error(ErrorCode::invalid_argument, "latent draw " + std::to_string(i) + " has the wrong sign");
  }
}

}  // namespace nisb
