// Built with -mavx2 -mfma; only reached through avx2_table() after a CPU check.

#include <immintrin.h>

#include <cmath>

#include "nisb/kernels.hpp"

namespace nisb::kernels {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// exp(x) by ln2 range reduction and a degree-13 Taylor polynomial on
// |r| <= ln2/2; relative error is below 1e-15 on the clamped domain.
inline __m256d exp_pd(__m256d x) {
  x = _mm256_max_pd(x, _mm256_set1_pd(-708.0));
  x = _mm256_min_pd(x, _mm256_set1_pd(709.0));

  const __m256d k = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(k, _mm256_set1_pd(6.93145751953125e-1), x);
  r = _mm256_fnmadd_pd(k, _mm256_set1_pd(1.42860682030941723212e-6), r);

  static constexpr double c[] = {
      1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
      1.0 / 362880.0,     1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,
      1.0 / 120.0,        1.0 / 24.0,        1.0 / 6.0,        0.5,
      1.0,                1.0};
  __m256d p = _mm256_set1_pd(c[0]);
  for (int i = 1; i < 14; ++i) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(c[i]));

  // 2^k assembled directly in the exponent field.
  const __m128i k32 = _mm256_cvtpd_epi32(k);
  __m256i bits = _mm256_cvtepi32_epi64(k32);
  bits = _mm256_add_epi64(bits, _mm256_set1_epi64x(1023));
  bits = _mm256_slli_epi64(bits, 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
}

inline __m256d logistic_pd(__m256d t) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), t));
  return _mm256_div_pd(one, _mm256_add_pd(one, e));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void logistic_avx2(const double* eta, double offset, double* out, std::size_t n) {
  const __m256d off = _mm256_set1_pd(offset);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, logistic_pd(_mm256_add_pd(_mm256_loadu_pd(eta + i), off)));
  for (; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-(eta[i] + offset)));
}

double logistic_sum_avx2(const double* eta, double offset, std::size_t n) {
  const __m256d off = _mm256_set1_pd(offset);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, logistic_pd(_mm256_add_pd(_mm256_loadu_pd(eta + i), off)));
    acc1 = _mm256_add_pd(acc1, logistic_pd(_mm256_add_pd(_mm256_loadu_pd(eta + i + 4), off)));
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_add_pd(acc0, logistic_pd(_mm256_add_pd(_mm256_loadu_pd(eta + i), off)));
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += 1.0 / (1.0 + std::exp(-(eta[i] + offset)));
  return s;
}

}  // namespace

const KernelTable& avx2_table_unchecked() noexcept {
  static const KernelTable table{"avx2", dot_avx2, axpy_avx2, logistic_avx2, logistic_sum_avx2};
  return table;
}

}  // namespace nisb::kernels
