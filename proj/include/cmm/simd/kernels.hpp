#pragma once

// Data-parallel reductions used by every empirical expectation in the library.
//
// Each kernel has a scalar reference implementation and, where the target
// supports it, an AVX2 (x86-64) or NEON (aarch64) variant. The variant is
// picked once at startup from the CPU's capabilities; CMM_SIMD=scalar|avx2|neon
// in the environment overrides the choice. All reductions use Neumaier
// compensated summation, so SIMD and scalar results agree to a few ulps of the
// absolute-value sum rather than bit-for-bit.

#include <cstddef>
#include <span>
#include <string_view>

namespace cmm::simd {

enum class Level { kScalar, kAvx2, kNeon };

struct KernelTable {
  double (*sum)(const double* a, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*weighted_sum)(const double* w, const double* a, std::size_t n);
  double (*weighted_dot)(const double* w, const double* a, const double* b,
                         std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

std::string_view level_name(Level level);
bool parse_level(std::string_view name, Level& out);

// True when the variant is compiled in and the running CPU can execute it.
bool supported(Level level);
Level best_level();
Level active_level();
// Throws ValidationError if the level is not supported.
void set_level(Level level);

// Direct access to one variant, independent of the active level.
const KernelTable& kernels(Level level);

double sum(std::span<const double> a);
double dot(std::span<const double> a, std::span<const double> b);
double weighted_sum(std::span<const double> w, std::span<const double> a);
double weighted_dot(std::span<const double> w, std::span<const double> a,
                    std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace cmm::simd
