#pragma once
// Data-parallel inner loops used by the feature front-end, the network layers
// and the scoring back-end. Each kernel has a portable scalar reference and an
// AVX2+FMA variant; the active table is chosen once at runtime.
//
// Results of the two variants agree to rounding (FMA contraction and lane-wise
// partial sums reorder additions) but each variant is deterministic on its own.

#include <cstddef>
#include <string_view>

namespace jtss::simd {

struct KernelTable {
  const char* name;

  /// sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  /// y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  /// C[MxN] (+)= A[MxK] * B[KxN], all row-major with leading dimensions.
  /// When accumulate is false C is overwritten.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
};

const KernelTable& scalar_kernels();

/// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_kernels();

/// True if the running CPU supports AVX2 and FMA.
bool cpu_has_avx2();

/// Table selected at first use: AVX2 when available unless the environment
/// variable JTSS_SIMD=scalar forces the reference path.
const KernelTable& active();

/// Override the active table (tests, benchmarking). Accepts "scalar" or "avx2";
/// returns false if the requested variant is unavailable.
bool select(std::string_view name);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  active().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace jtss::simd
