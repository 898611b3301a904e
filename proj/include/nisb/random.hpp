#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace nisb {

/// Mixes a base seed with stream coordinates (cell, replicate, chain, ...) so
/// that every independent work unit gets its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept;

/// Owns one engine and the distributions drawn from it. Not thread-safe;
/// each chain or worker holds its own instance.
class Random {
 public:
  explicit Random(std::uint64_t seed);

  double normal();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double chi_squared(double df);

  /// mean + lower * z with z standard normal.
  Eigen::VectorXd multivariate_normal(const Eigen::VectorXd& mean, const Eigen::MatrixXd& lower);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace nisb
