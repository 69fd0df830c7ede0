// Compiled with -mavx2 -mfma. Nothing in here may depend on inline code shared
// with the rest of the library (see kernels_impl.hpp).

#include <immintrin.h>

#include "kernels_impl.hpp"

namespace cmm::simd::detail::avx2 {
namespace {

struct Lanes {
  __m256d s = _mm256_setzero_pd();
  __m256d c = _mm256_setzero_pd();

  // Lane-wise Neumaier step.
  void add(__m256d x) {
    const __m256d sign = _mm256_set1_pd(-0.0);
    const __m256d t = _mm256_add_pd(s, x);
    const __m256d abs_s = _mm256_andnot_pd(sign, s);
    const __m256d abs_x = _mm256_andnot_pd(sign, x);
    const __m256d s_bigger = _mm256_cmp_pd(abs_s, abs_x, _CMP_GE_OQ);
    const __m256d big = _mm256_blendv_pd(x, s, s_bigger);
    const __m256d small = _mm256_blendv_pd(s, x, s_bigger);
    c = _mm256_add_pd(c, _mm256_add_pd(_mm256_sub_pd(big, t), small));
    s = t;
  }
};

struct Scalar {
  double s = 0.0;
  double c = 0.0;

  void add(double x) {
    const double t = s + x;
    const double as = s < 0 ? -s : s;
    const double ax = x < 0 ? -x : x;
    if (as >= ax) {
      c += (s - t) + x;
    } else {
      c += (x - t) + s;
    }
    s = t;
  }
};

double finish(const Lanes& lanes, Scalar tail) {
  alignas(32) double s[4];
  alignas(32) double c[4];
  _mm256_store_pd(s, lanes.s);
  _mm256_store_pd(c, lanes.c);
  Scalar acc;
  for (int k = 0; k < 4; ++k) acc.add(s[k]);
  acc.add(tail.s);
  double comp = acc.c;
  for (int k = 0; k < 4; ++k) comp += c[k];
  comp += tail.c;
  return acc.s + comp;
}

}  // namespace

double sum(const double* a, std::size_t n) {
  Lanes lanes;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) lanes.add(_mm256_loadu_pd(a + i));
  Scalar tail;
  for (; i < n; ++i) tail.add(a[i]);
  return finish(lanes, tail);
}

double dot(const double* a, const double* b, std::size_t n) {
  Lanes lanes;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    lanes.add(_mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  Scalar tail;
  for (; i < n; ++i) tail.add(a[i] * b[i]);
  return finish(lanes, tail);
}

double weighted_sum(const double* w, const double* a, std::size_t n) {
  return dot(w, a, n);
}

double weighted_dot(const double* w, const double* a, const double* b,
                    std::size_t n) {
  Lanes lanes;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d wa = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(a + i));
    lanes.add(_mm256_mul_pd(wa, _mm256_loadu_pd(b + i)));
  }
  Scalar tail;
  for (; i < n; ++i) tail.add((w[i] * a[i]) * b[i]);
  return finish(lanes, tail);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  // mul + add (no fma) so the result is bit-identical to the scalar kernel.
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace cmm::simd::detail::avx2
