#include "kernels_impl.hpp"

namespace cmm::simd::detail::scalar {
namespace {

struct Neumaier {
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
  double value() const { return s + c; }
};

}  // namespace

double sum(const double* a, std::size_t n) {
  Neumaier acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(a[i]);
  return acc.value();
}

double dot(const double* a, const double* b, std::size_t n) {
  Neumaier acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(a[i] * b[i]);
  return acc.value();
}

double weighted_sum(const double* w, const double* a, std::size_t n) {
  Neumaier acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(w[i] * a[i]);
  return acc.value();
}

double weighted_dot(const double* w, const double* a, const double* b,
                    std::size_t n) {
  Neumaier acc;
  for (std::size_t i = 0; i < n; ++i) acc.add((w[i] * a[i]) * b[i]);
  return acc.value();
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace cmm::simd::detail::scalar
