#pragma once
// Thin RAII wrapper over FFTW real-to-complex transforms.

#include <complex>
#include <cstddef>
#include <vector>

namespace jtss::audio::detail {

/// Forward real FFT of size n; output has n/2 + 1 complex bins.
/// Plans are cached per size and shared; execution is thread-safe.
void rfft(const std::vector<double>& in, std::size_t n, std::vector<std::complex<double>>& out);

/// Inverse of rfft, unnormalized (FFTW convention: result is n times the input).
void irfft(const std::vector<std::complex<double>>& in, std::size_t n, std::vector<double>& out);

}  // namespace jtss::audio::detail
