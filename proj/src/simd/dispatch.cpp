#include <atomic>
#include <cstdlib>
#include <string>

#include "cmm/error.hpp"
#include "cmm/simd/kernels.hpp"
#include "kernels_impl.hpp"

namespace cmm::simd {
namespace {

#define CMM_KERNEL_TABLE(ns)                                                   \
  KernelTable {                                                                \
    &detail::ns::sum, &detail::ns::dot, &detail::ns::weighted_sum,             \
        &detail::ns::weighted_dot, &detail::ns::axpy                           \
  }

const KernelTable kScalarTable = CMM_KERNEL_TABLE(scalar);
#if defined(CMM_HAVE_AVX2_KERNELS)
const KernelTable kAvx2Table = CMM_KERNEL_TABLE(avx2);
#endif
#if defined(CMM_HAVE_NEON_KERNELS)
const KernelTable kNeonTable = CMM_KERNEL_TABLE(neon);
#endif

#undef CMM_KERNEL_TABLE

bool cpu_has_avx2() {
#if defined(CMM_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Level initial_level() {
  if (const char* env = std::getenv("CMM_SIMD")) {
    Level requested;
    if (parse_level(env, requested) && supported(requested)) return requested;
  }
  return best_level();
}

std::atomic<const KernelTable*>& active_table() {
  static std::atomic<const KernelTable*> table{&kernels(initial_level())};
  return table;
}

std::atomic<Level>& active() {
  static std::atomic<Level> level{initial_level()};
  return level;
}

}  // namespace

std::string_view level_name(Level level) {
  switch (level) {
    case Level::kScalar: return "scalar";
    case Level::kAvx2: return "avx2";
    case Level::kNeon: return "neon";
  }
  return "unknown";
}

bool parse_level(std::string_view name, Level& out) {
  for (Level l : {Level::kScalar, Level::kAvx2, Level::kNeon}) {
    if (name == level_name(l)) {
      out = l;
      return true;
    }
  }
  return false;
}

bool supported(Level level) {
  switch (level) {
    case Level::kScalar: return true;
    case Level::kAvx2: return cpu_has_avx2();
    case Level::kNeon:
#if defined(CMM_HAVE_NEON_KERNELS)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Level best_level() {
  if (supported(Level::kAvx2)) return Level::kAvx2;
  if (supported(Level::kNeon)) return Level::kNeon;
  return Level::kScalar;
}

Level active_level() { return active().load(std::memory_order_acquire); }

void set_level(Level level) {
  if (!supported(level)) {
    throw ValidationError("SIMD level '" + std::string(level_name(level)) +
                          "' is not supported on this machine");
  }
  active_table().store(&kernels(level), std::memory_order_release);
  active().store(level, std::memory_order_release);
}

const KernelTable& kernels(Level level) {
  switch (level) {
    case Level::kAvx2:
#if defined(CMM_HAVE_AVX2_KERNELS)
      return kAvx2Table;
#else
      break;
#endif
    case Level::kNeon:
#if defined(CMM_HAVE_NEON_KERNELS)
      return kNeonTable;
#else
      break;
#endif
    case Level::kScalar:
      return kScalarTable;
  }
  throw ValidationError("SIMD level '" + std::string(level_name(level)) +
                        "' is not compiled into this build");
}

namespace {

const KernelTable& current() {
  return *active_table().load(std::memory_order_acquire);
}

void check_same(std::size_t a, std::size_t b) {
  if (a != b) throw ValidationError("simd kernel: length mismatch");
}

}  // namespace

double sum(std::span<const double> a) { return current().sum(a.data(), a.size()); }

double dot(std::span<const double> a, std::span<const double> b) {
  check_same(a.size(), b.size());
  return current().dot(a.data(), b.data(), a.size());
}

double weighted_sum(std::span<const double> w, std::span<const double> a) {
  check_same(w.size(), a.size());
  return current().weighted_sum(w.data(), a.data(), a.size());
}

double weighted_dot(std::span<const double> w, std::span<const double> a,
                    std::span<const double> b) {
  check_same(w.size(), a.size());
  check_same(a.size(), b.size());
  return current().weighted_dot(w.data(), a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same(x.size(), y.size());
  current().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace cmm::simd
