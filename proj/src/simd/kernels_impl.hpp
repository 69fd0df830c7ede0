#pragma once

// Internal: per-ISA kernel entry points. This header must stay free of any
// inline library code, because it is included by translation units compiled
// with wider ISA flags than the rest of the library.

#include <cstddef>

namespace cmm::simd::detail {

#define CMM_DECLARE_KERNELS(ns)                                                \
  namespace ns {                                                               \
  double sum(const double* a, std::size_t n);                                  \
  double dot(const double* a, const double* b, std::size_t n);                 \
  double weighted_sum(const double* w, const double* a, std::size_t n);        \
  double weighted_dot(const double* w, const double* a, const double* b,       \
                      std::size_t n);                                          \
  void axpy(double alpha, const double* x, double* y, std::size_t n);          \
  }

CMM_DECLARE_KERNELS(scalar)
CMM_DECLARE_KERNELS(avx2)
CMM_DECLARE_KERNELS(neon)

#undef CMM_DECLARE_KERNELS

}  // namespace cmm::simd::detail
