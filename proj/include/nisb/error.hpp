#pragma once

#include <stdexcept>
#include <string>

namespace nisb {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  insufficient_data,
  non_finite,
  rank_deficient,
  singular_covariance,
  inconsistent_moments,
  zero_residual_variance,
  no_usable_proxy,
  weak_proxy,
  separation,
  not_converged,
  improper_posterior,
  too_many_failures,
  parse_error,
  io_error,
};

const char* to_string(ErrorCode code) noexcept;

/// Every library failure is reported through this type; `code()` lets callers
/// (the simulation harness, the CLI) react to specific conditions.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nisb
