#include <atomic>
#include <cstdlib>
#include <string_view>

#include "jtss/simd/kernels.hpp"

namespace jtss::simd {
namespace {

const KernelTable* choose_default() {
  const char* env = std::getenv("JTSS_SIMD");
  if (env != nullptr && std::string_view(env) == "scalar") return &scalar_kernels();
  if (cpu_has_avx2() && avx2_kernels() != nullptr) return avx2_kernels();
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{choose_default()};
  return table;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool select(std::string_view name) {
  if (name == "scalar") {
    slot().store(&scalar_kernels(), std::memory_order_release);
    return true;
  }
  if (name == "avx2" && cpu_has_avx2() && avx2_kernels() != nullptr) {
    slot().store(avx2_kernels(), std::memory_order_release);
    return true;
  }
  return false;
}

}  // namespace jtss::simd
