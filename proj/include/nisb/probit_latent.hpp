#pragma once

#include <Eigen/Dense>

#include "nisb/proxy.hpp"
#include "nisb/random.hpp"
#include "nisb/statcore.hpp"

namespace nisb {

/// Standard normal CDF, accurate in both tails.
double normal_cdf(double x);
/// Upper tail 1 - Phi(x) without cancellation.
double normal_sf(double x);
/// phi(x) / Phi(x), the inverse Mills ratio.
double inverse_mills(double x);

struct ProbitMle {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd coef_cov;
  double log_likelihood = 0.0;
  int iterations = 0;
};

double probit_log_likelihood(const Eigen::VectorXd& y, const Eigen::MatrixXd& design,
                             const Eigen::VectorXd& beta);

/// Fisher scoring with step halving. Stops when the largest coefficient
/// change drops below 1e-8; more than 100 iterations is an error.
ProbitMle probit_mle(const Eigen::VectorXd& y, const Eigen::MatrixXd& design);

struct ProbitFit {
  ProxySpec proxy;
  ProbitMle mle;
};

/// Probit regression of binary Y on (Z, A) over the selected rows; the A part
/// defines the latent-scale proxy.
ProbitFit fit_probit(const SelectedSample& sample);

/// Draw from N(mean, 1) truncated to (0, inf) when `positive`, else to
/// (-inf, 0). Inverse CDF up to 5 standard deviations into the tail, then an
/// exponential-proposal rejection sampler.
double draw_truncated_normal(double mean, bool positive, Random& rng);

Eigen::VectorXd draw_latent(const Eigen::VectorXd& y, const Eigen::VectorXd& linear_predictor, Random& rng);

/// Fixed design for repeated unit-variance coefficient draws; factors D'D once.
class LatentDesign {
 public:
  explicit LatentDesign(Eigen::MatrixXd design);

  const Eigen::MatrixXd& design() const { return design_; }
  Eigen::VectorXd ols(const Eigen::VectorXd& u) const;
  /// (D'D)^{-1}
  Eigen::MatrixXd inverse_gram() const;

  /// beta ~ N(ols(u), (D'D)^{-1})
  Eigen::VectorXd draw_beta(const Eigen::VectorXd& u, Random& rng) const;

 private:
  Eigen::MatrixXd design_;
  Eigen::LLT<Eigen::MatrixXd> gram_llt_;
};

Eigen::VectorXd draw_beta(const Eigen::VectorXd& u, const Eigen::MatrixXd& design, Random& rng);

/// How the U-on-Z coefficients are brought back to unit latent variance:
/// divide by the square root of the sigma_uu.z draw (default) or by the draw
/// itself.
enum class RescaleMode { sqrt, variance };

double rescale_divisor(double sigma_uu_z_draw, RescaleMode mode);

RegressionFit rescale_u_on_z(const RegressionFit& u_on_z, double sigma_uu_z_draw,
                             RescaleMode mode = RescaleMode::sqrt);

/// Same rescaling applied to the outcome block of latent-scale moments
/// (coefficients and sigma_xu by the divisor, sigma_uu by its square).
void rescale_latent_moments(ConditionalMoments& moments, double sigma_uu_z_draw, RescaleMode mode);

struct LatentState {
  Eigen::VectorXd u;
  Eigen::VectorXd beta_draw;
  ProxySpec proxy_draw;
  double sigma_uu_z_draw = 1.0;
};

/// Data-augmentation chain for the probit model of Y on (1, Z, A) with unit
/// latent residual variance. Starts at the MLE.
class ProbitGibbs {
 public:
  ProbitGibbs(const SelectedSample& sample, const ProbitFit& start);

  /// Latent draws given the current coefficients, then new coefficients and
  /// proxy given the latent draws.
  void sweep(Random& rng);

  const LatentState& state() const { return state_; }
  LatentState& state() { return state_; }

  /// Throws unless u_i > 0 exactly when y_i = 1.
  void check_signs() const;

 private:
  const SelectedSample* sample_;
  LatentDesign design_;
  LatentState state_;
};

}  // namespace nisb
