#include <doctest.h>

#include <cmath>
#include <vector>

#include "nisb/error.hpp"
#include "nisb/kernels.hpp"
#include "nisb/random.hpp"

using namespace nisb;

namespace {

std::vector<double> random_vec(std::size_t n, Random& rng, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

struct RestoreKernels {
  std::string name = kernels::active().name;
  ~RestoreKernels() { kernels::select(name); }
};

}  // namespace

TEST_CASE("scalar and AVX2 kernels agree") {
  const kernels::KernelTable* fast = kernels::avx2_table();
  if (!fast) {
    MESSAGE("AVX2 kernels unavailable on this CPU; equivalence not exercised");
    return;
  }
  const kernels::KernelTable& ref = kernels::scalar_table();
  Random rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 100u, 1001u}) {
    CAPTURE(n);
    const auto a = random_vec(n, rng, 3.0);
    const auto b = random_vec(n, rng, 3.0);

    const double d_ref = ref.dot(a.data(), b.data(), n);
    const double d_fast = fast->dot(a.data(), b.data(), n);
    CHECK(std::abs(d_ref - d_fast) <= 1e-12 * (1.0 + std::abs(d_ref)) * static_cast<double>(n + 1));

    auto y_ref = b;
    auto y_fast = b;
    ref.axpy(-1.7, a.data(), y_ref.data(), n);
    fast->axpy(-1.7, a.data(), y_fast.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y_ref[i] - y_fast[i]) <= 1e-14 * (1.0 + std::abs(y_ref[i])));

    // Predictors spanning the saturated range.
    const auto eta = random_vec(n, rng, 20.0);
    std::vector<double> p_ref(n), p_fast(n);
    ref.logistic(eta.data(), 0.3, p_ref.data(), n);
    fast->logistic(eta.data(), 0.3, p_fast.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(p_ref[i] - p_fast[i]) <= 1e-14);
      CHECK(std::abs(p_ref[i] - p_fast[i]) <= 1e-12 * p_ref[i] + 1e-300);
    }
    const double s_ref = ref.logistic_sum(eta.data(), -2.0, n);
    const double s_fast = fast->logistic_sum(eta.data(), -2.0, n);
    CHECK(std::abs(s_ref - s_fast) <= 1e-12 * (1.0 + s_ref));
  }
}

TEST_CASE("logistic stays in [0, 1] and finite at extreme predictors") {
  const std::vector<double> eta{-1e4, -800.0, -745.0, -40.0, 0.0, 40.0, 745.0, 800.0, 1e4};
  const kernels::KernelTable* tables[] = {&kernels::scalar_table(), kernels::avx2_table()};
  for (const auto* t : tables) {
    if (!t) continue;
    CAPTURE(t->name);
    std::vector<double> out(eta.size());
    t->logistic(eta.data(), 0.0, out.data(), eta.size());
    for (double p : out) {
      CHECK(std::isfinite(p));
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
    CHECK(out[4] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out.front() < 1e-300);
    CHECK(out.back() == 1.0);
  }
}

TEST_CASE("logistic_mean matches a direct average") {
  Random rng(3);
  const auto eta = random_vec(257, rng, 2.0);
  double direct = 0.0;
  for (double e : eta) direct += 1.0 / (1.0 + std::exp(-(e - 1.0)));
  direct /= static_cast<double>(eta.size());
  CHECK(kernels::logistic_mean(eta, -1.0) == doctest::Approx(direct).epsilon(1e-13));
  CHECK_THROWS_AS(kernels::logistic_mean(std::vector<double>{}, 0.0), Error);
}

TEST_CASE("kernel selection") {
  RestoreKernels restore;
  CHECK(kernels::select("scalar"));
  CHECK(std::string(kernels::active().name) == "scalar");
  CHECK_FALSE(kernels::select("no-such-kernel"));
  CHECK(std::string(kernels::active().name) == "scalar");
  if (kernels::avx2_table()) {
    CHECK(kernels::select("avx2"));
    CHECK(std::string(kernels::active().name) == "avx2");
  }
  CHECK(kernels::select("auto"));
}

TEST_CASE("span wrappers validate lengths") {
  std::vector<double> a(4, 1.0), b(5, 1.0), out(3);
  CHECK_THROWS_AS(kernels::dot(a, b), Error);
  CHECK_THROWS_AS(kernels::axpy(1.0, a, b), Error);
  CHECK_THROWS_AS(kernels::logistic(a, 0.0, out), Error);
  CHECK(kernels::dot(a, a) == 4.0);
}
