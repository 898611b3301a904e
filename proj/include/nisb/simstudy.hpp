#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nisb/bayes.hpp"
#include "nisb/pmm_linear.hpp"
#include "nisb/random.hpp"

namespace nisb::sim {

/// Cov(Y, A) that gives the requested Cor(Y, A | Z1, Z2) in the
/// superpopulation with Var(Y) = 4 and unit-variance Z1, Z2, A.
double sigma_ya_from_conditional(double rho_y1, double rho_y2, double rho_1a, double cond_cor);

struct PopulationConfig {
  int N = 10000;
  double rho_y1 = 0.2;
  double rho_y2 = 0.2;
  double cond_cor_ya = 0.5;
  double rho_1a = 0.2;

  /// Throws unless the implied covariance is positive definite.
  static PopulationConfig make(double rho_y1, double rho_y2, double cond_cor_ya, double rho_1a, int N = 10000);

  double sigma_ya() const;
  Eigen::Vector4d mean() const;
  /// Covariance of (Y, Z1, Z2, A).
  Eigen::Matrix4d covariance() const;
};

struct SelectionConfig {
  double gamma_y = 0.0;
  double gamma_z1 = 0.0;
  double gamma_z2 = 0.0;
  double gamma_a = 0.0;
  double target_fraction = 0.05;
  std::optional<double> gamma_0;
};

/// Population columns.
enum Column : Eigen::Index { kY = 0, kZ1 = 1, kZ2 = 2, kA = 3 };

/// N iid rows of (Y, Z1, Z2, A) through the Cholesky factor of the covariance.
Eigen::MatrixXd generate_population(const PopulationConfig& cfg, Random& rng);

/// gamma_y Y + gamma_z1 Z1 + gamma_z2 Z2 + gamma_a A, without gamma_0.
Eigen::VectorXd selection_linear_predictor(const Eigen::MatrixXd& pop, const SelectionConfig& sel);

/// gamma_0 making the mean selection probability over the population equal
/// the target fraction (bisection; the mean is increasing in gamma_0).
double calibrate_gamma0(const Eigen::MatrixXd& pop, const SelectionConfig& sel);

/// Bernoulli selection at the logistic probabilities. Needs sel.gamma_0.
std::vector<std::uint8_t> apply_selection(const Eigen::MatrixXd& pop, const SelectionConfig& sel, Random& rng);

/// Average ranks, ties sharing the mean rank.
std::vector<double> average_ranks(const std::vector<double>& v);
/// Spearman rank correlation; NaN when either input is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct EvaluationOptions {
  std::vector<double> phi_grid = kDefaultPhiGrid;
  /// 0 disables the Bayesian intervals.
  int bayes_draws = 0;
  double max_failed_fraction = 0.20;
};

inline constexpr int kCoefficients = 3;  // intercept, Z1, Z2

struct BayesInterval {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  Eigen::VectorXd median;
};

struct ReplicateResult {
  bool ok = false;
  std::string error;
  int n_selected = 0;
  double gamma_0 = 0.0;
  double rho_xy_z = 0.0;
  /// Selected minus non-selected OLS coefficients of Y on (1, Z1, Z2).
  Eigen::VectorXd true_diff;
  /// Selected minus whole-population coefficients.
  Eigen::VectorXd true_bias;
  /// Row per phi in the grid, column per coefficient.
  Eigen::MatrixXd mubns;
  std::vector<Interval> mle;
  std::optional<BayesInterval> bayes_uniform;
  std::optional<BayesInterval> bayes_discrete;
};

ReplicateResult run_replicate(const PopulationConfig& pop_cfg, const SelectionConfig& sel_cfg,
                              const EvaluationOptions& options, Random& rng);

struct CoefficientMetrics {
  std::vector<double> spearman_diff;   // per phi
  std::vector<double> spearman_bias;   // per phi
  std::vector<double> median_mubns;    // per phi, over replicates
  double median_true_diff = 0.0;
  double median_true_bias = 0.0;
  double mle_coverage = 0.0;
  double mle_median_width = 0.0;
  std::optional<double> bayes_uniform_coverage;
  std::optional<double> bayes_uniform_median_width;
  std::optional<double> bayes_uniform_median_posterior_median;
  std::optional<double> bayes_discrete_coverage;
  std::optional<double> bayes_discrete_median_width;
  std::optional<double> bayes_discrete_median_posterior_median;
};

struct SimResult {
  int cell_id = 0;
  PopulationConfig population;
  SelectionConfig selection;
  std::vector<ReplicateResult> replicates;
  int failed_replicates = 0;
  bool cell_failed = false;
  std::vector<CoefficientMetrics> coefficients;
  double mean_selected = 0.0;
};

/// Aggregates replicate-level results into per-coefficient metrics.
void summarize_cell(SimResult& result, const EvaluationOptions& options);

/// Replicates run serially with per-replicate seeds derived from `seed`.
SimResult evaluate_cell(const PopulationConfig& pop_cfg, const SelectionConfig& sel_cfg, int n_reps,
                        const EvaluationOptions& options, std::uint64_t seed, int cell_id = 0);

struct Cell {
  PopulationConfig population;
  SelectionConfig selection;
  bool bayes = false;
};

/// All 81 populations crossed with all 24 selection mechanisms.
std::vector<Cell> full_grid();
/// Two levels of each marginal correlation and all three conditional
/// correlations (24 populations) crossed with 6 selection mechanisms (three
/// gamma_y, two gamma_a, gamma_z1 = gamma_z2 = ln 1.1). Bayesian intervals
/// only where gamma_y = ln 2.
std::vector<Cell> desk_grid();

/// Every (cell, replicate) pair is an independent unit on a pool of
/// `threads` workers; unit seeds derive from (seed, cell index, replicate).
std::vector<SimResult> run_grid(const std::vector<Cell>& cells, int n_reps, const EvaluationOptions& options,
                                std::uint64_t seed, int threads = 0);

}  // namespace nisb::sim
