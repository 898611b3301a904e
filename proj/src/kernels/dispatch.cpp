#include <atomic>
#include <cstdlib>
#include <string>

#include "nisb/error.hpp"
#include "nisb/kernels.hpp"

namespace nisb::kernels {

#if NISB_HAVE_AVX2
const KernelTable& avx2_table_unchecked() noexcept;
#endif

const KernelTable* avx2_table() noexcept {
#if NISB_HAVE_AVX2
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? &avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* pick(std::string_view name) noexcept {
  if (name == "scalar") return &scalar_table();
  if (name == "avx2") return avx2_table();
  if (name == "auto" || name.empty()) {
    if (const KernelTable* t = avx2_table()) return t;
    return &scalar_table();
  }
  return nullptr;
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table = [] {
    const char* env = std::getenv("NISB_KERNELS");
    const KernelTable* t = pick(env ? std::string_view(env) : std::string_view("auto"));
    return t ? t : pick("auto");
  }();
  return table;
}

void require_same_size(std::size_t a, std::size_t b) {
  if (a != b)
    throw Error(ErrorCode::dimension_mismatch,
                "kernel operands differ in length (" + std::to_string(a) + " vs " +
                    std::to_string(b) + ")");
}

}  // namespace

const KernelTable& active() noexcept { return *current().load(std::memory_order_acquire); }

bool select(std::string_view name) noexcept {
  const KernelTable* t = pick(name);
  if (!t) return false;
  current().store(t, std::memory_order_release);
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size());
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_size(x.size(), y.size());
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void logistic(std::span<const double> eta, double offset, std::span<double> out) {
  require_same_size(eta.size(), out.size());
  active().logistic(eta.data(), offset, out.data(), eta.size());
}

double logistic_mean(std::span<const double> eta, double offset) {
  if (eta.empty()) throw Error(ErrorCode::insufficient_data, "logistic_mean of an empty vector");
  return active().logistic_sum(eta.data(), offset, eta.size()) / static_cast<double>(eta.size());
}

}  // namespace nisb::kernels
