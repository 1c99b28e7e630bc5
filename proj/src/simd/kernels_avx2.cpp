// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "jtss/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace jtss::simd {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sw = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sw));
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

// R x 8 register tile (R <= 6) over a packed B panel of kc rows of 8 values:
// C[i0:i0+R, j0:j0+8] += A[i0:i0+R, p0:p1] * panel
template <int R>
inline void tile_rx8(std::size_t kc, const double* a, std::size_t lda, const double* panel, double* c,
                     std::size_t ldc) {
  __m256d acc[R][2];
  for (int r = 0; r < R; ++r) {
    acc[r][0] = _mm256_loadu_pd(c + r * ldc);
    acc[r][1] = _mm256_loadu_pd(c + r * ldc + 4);
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_load_pd(panel + 8 * p);
    const __m256d b1 = _mm256_load_pd(panel + 8 * p + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc[r][0]);
    _mm256_storeu_pd(c + r * ldc + 4, acc[r][1]);
  }
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
  if (m == 0 || n == 0 || k == 0) return;

  constexpr std::size_t kBlockK = 256;
  const std::size_t n8 = n - n % 8;
  const std::size_t m6 = m - m % 6;
  alignas(32) double panel[kBlockK * 8];
  for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
    const std::size_t kc = std::min(kBlockK, k - p0);
    for (std::size_t j0 = 0; j0 < n8; j0 += 8) {
      for (std::size_t p = 0; p < kc; ++p) {
        const double* src = b + (p0 + p) * ldb + j0;
        _mm256_store_pd(panel + 8 * p, _mm256_loadu_pd(src));
        _mm256_store_pd(panel + 8 * p + 4, _mm256_loadu_pd(src + 4));
      }
      std::size_t i0 = 0;
      for (; i0 < m6; i0 += 6) tile_rx8<6>(kc, a + i0 * lda + p0, lda, panel, c + i0 * ldc + j0, ldc);
      const double* ar = a + i0 * lda + p0;
      double* cr = c + i0 * ldc + j0;
      switch (m - m6) {
        case 1: tile_rx8<1>(kc, ar, lda, panel, cr, ldc); break;
        case 2: tile_rx8<2>(kc, ar, lda, panel, cr, ldc); break;
        case 3: tile_rx8<3>(kc, ar, lda, panel, cr, ldc); break;
        case 4: tile_rx8<4>(kc, ar, lda, panel, cr, ldc); break;
        case 5: tile_rx8<5>(kc, ar, lda, panel, cr, ldc); break;
        default: break;
      }
    }
    // Column remainder: row-wise axpy over the last n % 8 columns.
    if (n8 < n) {
      for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        for (std::size_t p = p0; p < p0 + kc; ++p) {
          const double aip = a[i * lda + p];
          const double* brow = b + p * ldb;
          for (std::size_t j = n8; j < n; ++j) crow[j] = std::fma(aip, brow[j], crow[j]);
        }
      }
    }
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2", &dot_avx2, &axpy_avx2, &gemm_avx2};
  return &table;
}

}  // namespace jtss::simd

#else

namespace jtss::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace jtss::simd

#endif
