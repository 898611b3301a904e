#include "nisb/error.hpp"

namespace nisb {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::singular_covariance: return "singular_covariance";
    case ErrorCode::inconsistent_moments: return "inconsistent_moments";
    case ErrorCode::zero_residual_variance: return "zero_residual_variance";
    case ErrorCode::no_usable_proxy: return "no_usable_proxy";
    case ErrorCode::weak_proxy: return "weak_proxy";
    case ErrorCode::separation: return "separation";
    case ErrorCode::not_converged: return "not_converged";
    case ErrorCode::improper_posterior: return "improper_posterior";
    case ErrorCode::too_many_failures: return "too_many_failures";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace nisb
