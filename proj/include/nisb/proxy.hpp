#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nisb/statcore.hpp"

namespace nisb {

/// Complete-case microdata of the selected (S = 1) sample: outcome y,
/// predictors Z of the regression of interest (possibly none) and auxiliary
/// variables A.
struct SelectedSample {
  std::string y_name = "y";
  std::vector<std::string> z_names;
  std::vector<std::string> a_names;
  Eigen::VectorXd y;
  Eigen::MatrixXd z;
  Eigen::MatrixXd a;

  Eigen::Index size() const { return y.size(); }
  Eigen::Index p() const { return z.cols(); }
  Eigen::Index q() const { return a.cols(); }

  /// [1, Z, A]
  Eigen::MatrixXd design_za() const;
  /// [1, Z]
  Eigen::MatrixXd design_z() const;

  void validate() const;
};

enum class ProxySource { linear, probit_latent };

/// Regression of Y on (Z, A) in the selected sample, split into its Z and A
/// parts. The proxy is X = a_coeffs' A.
struct ProxySpec {
  double intercept = 0.0;
  Eigen::VectorXd z_coeffs;
  Eigen::VectorXd a_coeffs;
  ProxySource source = ProxySource::linear;
};

/// Moments of (X, Y) given Z within one pattern. Only the X part is
/// identified for the non-selected pattern.
struct ConditionalMoments {
  struct Outcome {
    double beta_y0_z = 0.0;
    Eigen::VectorXd beta_yz_z;
    double sigma_yy_z = 0.0;
    double sigma_xy_z = 0.0;
    double rho_xy_z = 0.0;
  };

  Pattern pattern = Pattern::selected;
  double beta_x0_z = 0.0;
  Eigen::VectorXd beta_xz_z;
  double sigma_xx_z = 0.0;
  std::optional<Outcome> outcome;

  /// Fills sigma_xy_z-derived rho and checks |sigma_xy| <= sqrt(sxx syy).
  void set_outcome(double beta_y0_z, Eigen::VectorXd beta_yz_z, double sigma_yy_z, double sigma_xy_z);
};

/// Throws no_usable_proxy when every |a_j| * sd(A_j) < 1e-8 * sd(Y).
void require_usable_proxy(const ProxySpec& spec, const SelectedSample& sample);

ProxySpec fit_proxy_linear(const SelectedSample& sample);

Eigen::VectorXd proxy_values(const ProxySpec& spec, const Eigen::MatrixXd& a_rows);

ConditionalMoments conditional_moments_selected(const SelectedSample& sample, const ProxySpec& spec);

/// Non-selected proxy moments from aggregate means and covariances of (Z, A).
/// `z_names`/`a_names` locate the variables in `nonsel`.
ConditionalMoments conditional_moments_nonselected(const ProxySpec& spec, const SummaryStats& nonsel,
                                                   const std::vector<std::string>& z_names,
                                                   const std::vector<std::string>& a_names);

}  // namespace nisb
