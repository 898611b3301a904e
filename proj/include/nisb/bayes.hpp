#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nisb/pmm_linear.hpp"
#include "nisb/probit_latent.hpp"
#include "nisb/proxy.hpp"
#include "nisb/random.hpp"
#include "nisb/statcore.hpp"

namespace nisb {

/// Prior on phi: Uniform(0, 1), equal mass on {0, 0.5, 1}, or a point mass.
class PhiPrior {
 public:
  enum class Kind { uniform01, discrete, point };

  static PhiPrior uniform() { return PhiPrior(Kind::uniform01, 0.0); }
  static PhiPrior discrete() { return PhiPrior(Kind::discrete, 0.0); }
  static PhiPrior point(double value);
  /// "uniform", "discrete" or "point=V".
  static PhiPrior parse(const std::string& text);

  Kind kind() const { return kind_; }
  double value() const { return value_; }
  std::string label() const;

  double draw(Random& rng) const;

 private:
  PhiPrior(Kind kind, double value) : kind_(kind), value_(value) {}

  Kind kind_;
  double value_;
};

/// Cross-product matrix of [1, Z, A, Y] over the selected rows. Everything
/// the linear-target posterior needs is a function of it.
struct SelectedCrossProducts {
  Eigen::MatrixXd gram;
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  Eigen::Index q = 0;

  static SelectedCrossProducts from_sample(const SelectedSample& sample);
  /// Same design with the outcome column replaced by `outcome`.
  static SelectedCrossProducts from_sample(const SelectedSample& sample, const Eigen::VectorXd& outcome);
};

/// One posterior draw of the Y-on-(Z, A) regression (Jeffreys prior), split
/// into a proxy specification.
ProxySpec draw_proxy_linear(const SelectedCrossProducts& xp, Random& rng);

/// One joint draw of the selected-pattern moments of (X, Y) given Z. Y given
/// Z is drawn first (scaled inverse chi-squared variance, normal
/// coefficients), then X given (Z, Y), and the pair is recombined.
ConditionalMoments draw_selected_params(const SelectedCrossProducts& xp, const ProxySpec& spec, Random& rng);
ConditionalMoments draw_selected_params(const SelectedSample& sample, const ProxySpec& spec, Random& rng);

enum class AggregateMode { fixed, resample };

/// Aggregates redrawn from their sampling distribution: covariance from a
/// Wishart with count-1 degrees of freedom, means from N(m, cov/count).
SummaryStats resample_aggregates(const SummaryStats& stats, Random& rng);

ConditionalMoments draw_nonselected_params(const SummaryStats& nonsel, const ProxySpec& spec,
                                           const std::vector<std::string>& z_names,
                                           const std::vector<std::string>& a_names, Random& rng,
                                           AggregateMode mode);

/// Medians and 2.5/97.5 percentiles per column (linear interpolation between
/// order statistics). Needs at least 100 rows.
struct PosteriorSummary {
  Eigen::MatrixXd draws;
  Eigen::VectorXd median;
  Eigen::VectorXd ci_lower;
  Eigen::VectorXd ci_upper;
  int n_draws = 0;
  std::uint64_t seed = 0;
};

PosteriorSummary summarize(const Eigen::MatrixXd& draws, std::uint64_t seed = 0);

/// Quantile with linear interpolation between order statistics.
double quantile_sorted(const std::vector<double>& sorted, double prob);

enum class Target { linear, probit };

inline constexpr int kDefaultDraws = 1000;
inline constexpr int kDefaultWarmup = 100;

struct PosteriorOptions {
  PhiPrior prior = PhiPrior::uniform();
  int n_draws = kDefaultDraws;
  Target target = Target::linear;
  AggregateMode aggregate_mode = AggregateMode::fixed;
  RescaleMode rescale_mode = RescaleMode::sqrt;
  /// Warm-up sweeps for the probit chain.
  int warmup = kDefaultWarmup;
  std::optional<double> nonselection_rate;
  /// Fixed phi values evaluated on every parameter draw as well.
  std::vector<double> phi_grid;
  int phi_redraw_cap = 50;
  double max_unstable_fraction = 0.10;
};

struct PosteriorResult {
  PosteriorSummary mubns;
  std::optional<PosteriorSummary> mub;
  /// One entry per phi_grid value; empty when fewer than 100 draws were
  /// stable at that phi.
  std::vector<std::optional<PosteriorSummary>> mubns_at_phi;
  Eigen::VectorXd phi_draws;
  Eigen::VectorXd rho_draws;
  int unstable_draws = 0;
  int phi_redraws = 0;
  int floored_sigma_draws = 0;
};

/// Posterior draws of the bias indices. `z_names`/`a_names` of the sample
/// locate the variables in `nonsel`.
PosteriorResult posterior_mubns(const SelectedSample& sample, const SummaryStats& nonsel,
                                const PosteriorOptions& options, Random& rng);

}  // namespace nisb
