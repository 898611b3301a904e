#pragma once

// Data-parallel inner loops. A scalar reference implementation is always
// present; an AVX2+FMA variant is compiled separately on x86-64 and chosen at
// startup when the CPU supports it. The NISB_KERNELS environment variable
// ("scalar", "avx2", "auto") overrides the choice.

#include <cstddef>
#include <span>
#include <string_view>

namespace nisb::kernels {

struct KernelTable {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// out[i] = 1 / (1 + exp(-(eta[i] + offset)))
  void (*logistic)(const double* eta, double offset, double* out, std::size_t n);
  /// sum_i 1 / (1 + exp(-(eta[i] + offset)))
  double (*logistic_sum)(const double* eta, double offset, std::size_t n);
};

const KernelTable& scalar_table() noexcept;

/// nullptr when the variant was not built or the running CPU lacks AVX2/FMA.
const KernelTable* avx2_table() noexcept;

const KernelTable& active() noexcept;

/// Switches the process-wide table. Returns false for an unknown or
/// unavailable name and leaves the selection unchanged.
bool select(std::string_view name) noexcept;

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void logistic(std::span<const double> eta, double offset, std::span<double> out);
double logistic_mean(std::span<const double> eta, double offset);

}  // namespace nisb::kernels
