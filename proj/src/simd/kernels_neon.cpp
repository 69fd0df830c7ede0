#include <arm_neon.h>

#include "kernels_impl.hpp"

namespace cmm::simd::detail::neon {
namespace {

struct Lanes {
  float64x2_t s = vdupq_n_f64(0.0);
  float64x2_t c = vdupq_n_f64(0.0);

  void add(float64x2_t x) {
    const float64x2_t t = vaddq_f64(s, x);
    const uint64x2_t s_bigger = vcgeq_f64(vabsq_f64(s), vabsq_f64(x));
    const float64x2_t big = vbslq_f64(s_bigger, s, x);
    const float64x2_t small = vbslq_f64(s_bigger, x, s);
    c = vaddq_f64(c, vaddq_f64(vsubq_f64(big, t), small));
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
  Scalar acc;
  acc.add(vgetq_lane_f64(lanes.s, 0));
  acc.add(vgetq_lane_f64(lanes.s, 1));
  acc.add(tail.s);
  const double comp = acc.c + vgetq_lane_f64(lanes.c, 0) +
                      vgetq_lane_f64(lanes.c, 1) + tail.c;
  return acc.s + comp;
}

}  // namespace

double sum(const double* a, std::size_t n) {
  Lanes lanes;
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) lanes.add(vld1q_f64(a + i));
  Scalar tail;
  for (; i < n; ++i) tail.add(a[i]);
  return finish(lanes, tail);
}

double dot(const double* a, const double* b, std::size_t n) {
  Lanes lanes;
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) lanes.add(vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
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
  for (; i + 2 <= n; i += 2) {
    const float64x2_t wa = vmulq_f64(vld1q_f64(w + i), vld1q_f64(a + i));
    lanes.add(vmulq_f64(wa, vld1q_f64(b + i)));
  }
  Scalar tail;
  for (; i < n; ++i) tail.add((w[i] * a[i]) * b[i]);
  return finish(lanes, tail);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace cmm::simd::detail::neon
