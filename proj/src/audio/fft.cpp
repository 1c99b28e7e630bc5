#include "fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>

namespace jtss::audio::detail {
namespace {

// Plans are created on fftw_malloc'd buffers and executed through the
// new-array interface on buffers allocated the same way, so alignment matches.
struct Plans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

const Plans& plans_for(std::size_t n) {
  static std::map<std::size_t, Plans> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  double* r = fftw_alloc_real(n);
  fftw_complex* c = fftw_alloc_complex(n / 2 + 1);
  Plans p;
  p.forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), r, c, FFTW_ESTIMATE);
  p.inverse = fftw_plan_dft_c2r_1d(static_cast<int>(n), c, r, FFTW_ESTIMATE);
  fftw_free(r);
  fftw_free(c);
  return cache.emplace(n, p).first->second;
}

struct RealBuf {
  explicit RealBuf(std::size_t n) : p(fftw_alloc_real(n)) {}
  ~RealBuf() { fftw_free(p); }
  RealBuf(const RealBuf&) = delete;
  RealBuf& operator=(const RealBuf&) = delete;
  double* p;
};

struct ComplexBuf {
  explicit ComplexBuf(std::size_t n) : p(fftw_alloc_complex(n)) {}
  ~ComplexBuf() { fftw_free(p); }
  ComplexBuf(const ComplexBuf&) = delete;
  ComplexBuf& operator=(const ComplexBuf&) = delete;
  fftw_complex* p;
};

}  // namespace

void rfft(const std::vector<double>& in, std::size_t n, std::vector<std::complex<double>>& out) {
  const Plans& plans = plans_for(n);
  RealBuf r(n);
  ComplexBuf c(n / 2 + 1);
  const std::size_t m = std::min(n, in.size());
  std::copy(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(m), r.p);
  std::fill(r.p + m, r.p + n, 0.0);
  fftw_execute_dft_r2c(plans.forward, r.p, c.p);
  out.resize(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) out[k] = {c.p[k][0], c.p[k][1]};
}

void irfft(const std::vector<std::complex<double>>& in, std::size_t n, std::vector<double>& out) {
  const Plans& plans = plans_for(n);
  RealBuf r(n);
  ComplexBuf c(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    c.p[k][0] = in[k].real();
    c.p[k][1] = in[k].imag();
  }
  fftw_execute_dft_c2r(plans.inverse, c.p, r.p);
  out.assign(r.p, r.p + n);
}

}  // namespace jtss::audio::detail
