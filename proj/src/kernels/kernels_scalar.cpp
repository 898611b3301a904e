#include <cmath>

#include "nisb/kernels.hpp"

namespace nisb::kernels {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double logistic1(double t) { return 1.0 / (1.0 + std::exp(-t)); }

void logistic_scalar(const double* eta, double offset, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = logistic1(eta[i] + offset);
}

double logistic_sum_scalar(const double* eta, double offset, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += logistic1(eta[i] + offset);
  return s;
}

}  // namespace

const KernelTable& scalar_table() noexcept {
  static const KernelTable table{"scalar", dot_scalar, axpy_scalar, logistic_scalar,
                                 logistic_sum_scalar};
  return table;
}

}  // namespace nisb::kernels
