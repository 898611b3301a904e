#include "nisb/pmm_linear.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nisb/error.hpp"

namespace nisb {

PhiValue::PhiValue(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0))
    throw Error(ErrorCode::invalid_argument, "phi must lie in [0, 1], got " + std::to_string(value));
}

double g_factor(PhiValue phi, double rho) {
  const double f = phi.value();
  const double den = f * rho + (1.0 - f);
  if (std::abs(den) < 1e-12)
    throw Error(ErrorCode::weak_proxy, "g-factor denominator vanishes at phi=" + std::to_string(f) +
                                           " (rho=" + std::to_string(rho) + ")");
  const double g = (f + (1.0 - f) * rho) / den;
  if (!(std::abs(g) <= kMaxGFactor))
    throw Error(ErrorCode::weak_proxy, "proxy too weak for phi=" + std::to_string(f) +
                                           " bound (rho=" + std::to_string(rho) + ")");
  return g;
}

NonselectedOutcome nonselected_outcome_params(const ConditionalMoments& sel,
                                              const ConditionalMoments& nonsel, PhiValue phi) {
  if (!sel.outcome)
    throw Error(ErrorCode::invalid_argument, "selected-pattern moments lack the outcome regression");
  if (!(sel.sigma_xx_z > 0.0))
    throw Error(ErrorCode::zero_residual_variance, "selected proxy residual variance is zero");
  if (sel.beta_xz_z.size() != nonsel.beta_xz_z.size())
    throw Error(ErrorCode::dimension_mismatch, "patterns have different predictor counts");

  const auto& o = *sel.outcome;
  const double g = g_factor(phi, o.rho_xy_z);
  const double ratio = o.sigma_yy_z / sel.sigma_xx_z;
  const double slope = g * std::sqrt(ratio);

  NonselectedOutcome out;
  out.beta_y0_z = o.beta_y0_z + slope * (nonsel.beta_x0_z - sel.beta_x0_z);
  out.beta_yz_z = o.beta_yz_z + slope * (nonsel.beta_xz_z - sel.beta_xz_z);
  const double s = o.sigma_yy_z + g * g * ratio * (nonsel.sigma_xx_z - sel.sigma_xx_z);
  out.sigma_floored = s < 0.0;
  out.sigma_yy_z = std::max(s, 0.0);
  return out;
}

BiasIndexSet mubns(const ConditionalMoments& sel, const ConditionalMoments& nonsel, PhiValue phi) {
  const NonselectedOutcome ns = nonselected_outcome_params(sel, nonsel, phi);
  const auto& o = *sel.outcome;
  BiasIndexSet idx;
  idx.phi = phi;
  idx.mubns.resize(o.beta_yz_z.size() + 1);
  idx.mubns[0] = o.beta_y0_z - ns.beta_y0_z;
  idx.mubns.tail(o.beta_yz_z.size()) = o.beta_yz_z - ns.beta_yz_z;
  idx.sigma_yy_z_0 = ns.sigma_yy_z;
  idx.sigma_floored = ns.sigma_floored;
  return idx;
}

BiasIndexSet mub(BiasIndexSet index, double nonselection_rate) {
  if (!(nonselection_rate >= 0.0 && nonselection_rate <= 1.0))
    throw Error(ErrorCode::invalid_argument,
                "non-selection rate must lie in [0, 1], got " + std::to_string(nonselection_rate));
  index.nonselection_rate = nonselection_rate;
  index.mub = index.mubns * nonselection_rate;
  return index;
}

Eigen::VectorXd adjusted_coefficients(const RegressionFit& selected_fit, const BiasIndexSet& index) {
  if (!index.mub) throw Error(ErrorCode::invalid_argument, "adjustment needs MUB (supply a non-selection rate)");
  const Eigen::VectorXd c = selected_fit.coefficients();
  if (c.size() != index.mub->size())
    throw Error(ErrorCode::dimension_mismatch, "coefficient count differs from index count");
  return c - *index.mub;
}

std::vector<Interval> mle_interval(const ConditionalMoments& sel, const ConditionalMoments& nonsel) {
  const BiasIndexSet lo = mubns(sel, nonsel, PhiValue(0.0));
  const BiasIndexSet hi = mubns(sel, nonsel, PhiValue(1.0));
  std::vector<Interval> out(static_cast<std::size_t>(lo.mubns.size()));
  for (Eigen::Index i = 0; i < lo.mubns.size(); ++i)
    out[static_cast<std::size_t>(i)] = {std::min(lo.mubns[i], hi.mubns[i]), std::max(lo.mubns[i], hi.mubns[i])};
  return out;
}

std::vector<BiasIndexSet> mubns_grid(const ConditionalMoments& sel, const ConditionalMoments& nonsel,
                                     const std::vector<double>& phis) {
  std::vector<BiasIndexSet> out;
  out.reserve(phis.size());
  for (double f : phis) out.push_back(mubns(sel, nonsel, PhiValue(f)));
  return out;
}

}  // namespace nisb
