#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nisb/proxy.hpp"
#include "nisb/statcore.hpp"

namespace nisb {

/// Sensitivity parameter: 0 is selection at random given (Z, X, V), 1 is
/// selection driven by the outcome.
class PhiValue {
 public:
  PhiValue() = default;
  explicit PhiValue(double value);

  double value() const { return value_; }

 private:
  double value_ = 0.0;
};

/// Largest admissible |g|. At phi = 1, g = 1/rho, so this rejects rho < 0.01.
inline constexpr double kMaxGFactor = 100.0;

/// (phi + (1 - phi) rho) / (phi rho + (1 - phi)). Throws weak_proxy when the
/// denominator vanishes or |g| exceeds kMaxGFactor.
double g_factor(PhiValue phi, double rho);

struct NonselectedOutcome {
  double beta_y0_z = 0.0;
  Eigen::VectorXd beta_yz_z;
  double sigma_yy_z = 0.0;
  /// The raw residual variance came out negative and was set to 0.
  bool sigma_floored = false;
};

NonselectedOutcome nonselected_outcome_params(const ConditionalMoments& sel,
                                              const ConditionalMoments& nonsel, PhiValue phi);

/// Bias indices at one phi. Coefficient vectors are ordered (intercept,
/// slopes...). `mub` and `nonselection_rate` are present together.
struct BiasIndexSet {
  PhiValue phi;
  Eigen::VectorXd mubns;
  double sigma_yy_z_0 = 0.0;
  bool sigma_floored = false;
  std::optional<Eigen::VectorXd> mub;
  std::optional<double> nonselection_rate;

  double mubns_intercept() const { return mubns[0]; }
  Eigen::VectorXd mubns_slopes() const { return mubns.tail(mubns.size() - 1); }
};

/// Selected minus non-selected regression coefficients implied by the model.
BiasIndexSet mubns(const ConditionalMoments& sel, const ConditionalMoments& nonsel, PhiValue phi);

/// Scales MUBNS by the overall non-selection rate Pr(S = 0).
BiasIndexSet mub(BiasIndexSet index, double nonselection_rate);

/// Selected-sample coefficients (intercept, slopes...) with MUB subtracted.
Eigen::VectorXd adjusted_coefficients(const RegressionFit& selected_fit, const BiasIndexSet& index);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double v) const { return lower <= v && v <= upper; }
  double width() const { return upper - lower; }
};

/// Per-coefficient [min, max] of MUBNS(0) and MUBNS(1).
std::vector<Interval> mle_interval(const ConditionalMoments& sel, const ConditionalMoments& nonsel);

std::vector<BiasIndexSet> mubns_grid(const ConditionalMoments& sel, const ConditionalMoments& nonsel,
                                     const std::vector<double>& phis);

inline const std::vector<double> kDefaultPhiGrid{0.0, 0.5, 1.0};

}  // namespace nisb
