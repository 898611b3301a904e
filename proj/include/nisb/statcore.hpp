#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nisb {

/// Role of a variable in the analysis: the outcome Y, a predictor Z of the
/// regression of interest, or an auxiliary variable A left out of it.
enum class Role { outcome, predictor, auxiliary };

class VariableSet {
 public:
  /// Throws unless names are unique, exactly one is the outcome and at least
  /// one is auxiliary.
  VariableSet(std::vector<std::string> names, std::vector<Role> roles);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Role>& roles() const { return roles_; }

  const std::string& outcome() const;
  std::vector<std::string> predictors() const;
  std::vector<std::string> auxiliaries() const;

 private:
  std::vector<std::string> with_role(Role r) const;

  std::vector<std::string> names_;
  std::vector<Role> roles_;
};

enum class Pattern { selected, nonselected };

/// Means and covariance (n-1 divisor) of a set of variables within one
/// pattern. `count` is absent for census-type aggregates with no sampling
/// error.
struct SummaryStats {
  Pattern pattern = Pattern::selected;
  std::optional<std::int64_t> count;
  std::vector<std::string> names;
  Eigen::VectorXd means;
  Eigen::MatrixXd cov;

  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const;
  SummaryStats subset(const std::vector<std::string>& keep) const;

  /// Dimension, symmetry and PSD (eigenvalues >= -1e-10 * trace) checks.
  void validate() const;
};

SummaryStats compute_summary(const Eigen::MatrixXd& rows, const std::vector<std::string>& names,
                             Pattern pattern = Pattern::selected);

/// Linear regression fit. `coef_cov` is over (intercept, slopes...).
/// `resid_df` is +inf for fits built from census aggregates.
struct RegressionFit {
  double intercept = 0.0;
  Eigen::VectorXd slopes;
  double resid_var = 0.0;
  Eigen::MatrixXd coef_cov;
  double resid_df = 0.0;

  Eigen::VectorXd coefficients() const;
};

inline constexpr double kMaxConditionNumber = 1e10;

/// 2-norm condition number of `m` after scaling its columns to unit length.
double scaled_condition_number(const Eigen::MatrixXd& m);

/// Least squares of y on `design`, whose first column must be the intercept.
/// Solved through an SVD of the column-equilibrated design.
RegressionFit ols_from_micro(const Eigen::VectorXd& y, const Eigen::MatrixXd& design);

/// The same regression computed from means and covariances alone. The
/// residual variance carries the finite-population factor n/(n-p) on the
/// moment-based residual variance, p being the number of predictors; with no
/// count the factor is 1.
RegressionFit ols_from_summary(const SummaryStats& stats, const std::string& response,
                               const std::vector<std::string>& predictors);

/// Design matrix [1, columns...].
Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& columns);

}  // namespace nisb
