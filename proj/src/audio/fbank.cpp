#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "fft.hpp"
#include "jtss/audio.hpp"
#include "jtss/simd/kernels.hpp"

namespace jtss::audio {

std::size_t num_fbank_frames(std::size_t n_samples) {
  if (n_samples < static_cast<std::size_t>(kFrameLength))
    throw Error("utterance shorter than one 25 ms window (" + std::to_string(n_samples) +
                " < 400 samples)");
  return 1 + (n_samples - kFrameLength) / kFrameShift;
}

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

const Matrix& mel_filterbank(int num_mels) {
  if (num_mels < 1) throw Error("num_mels must be positive");
  static std::mutex mu;
  static std::map<int, std::unique_ptr<Matrix>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[num_mels];
  if (slot) return *slot;

  const std::size_t bins = kFftSize / 2 + 1;
  const double mel_high = hz_to_mel(kSampleRate / 2.0);
  const double step = mel_high / (num_mels + 1);
  auto fb = std::make_unique<Matrix>(num_mels, bins);
  for (int j = 0; j < num_mels; ++j) {
    const double left = j * step, center = (j + 1) * step, right = (j + 2) * step;
    for (std::size_t k = 0; k < bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * kSampleRate / kFftSize);
      if (mel > left && mel <= center)
        (*fb)(j, k) = (mel - left) / (center - left);
      else if (mel > center && mel < right)
        (*fb)(j, k) = (right - mel) / (right - center);
    }
  }
  slot = std::move(fb);
  return *slot;
}

std::vector<double> power_spectrum(const std::vector<double>& frame) {
  std::vector<std::complex<double>> spec;
  detail::rfft(frame, kFftSize, spec);
  std::vector<double> power(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) power[k] = std::norm(spec[k]);
  return power;
}

namespace {

const std::vector<double>& hamming() {
  static const std::vector<double> window = [] {
    std::vector<double> w(kFrameLength);
    for (int n = 0; n < kFrameLength; ++n)
      w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (kFrameLength - 1));
    return w;
  }();
  return window;
}

}  // namespace

FeatureMatrix compute_fbank(const Waveform& w, int num_mels) {
  validate(w);
  const std::size_t frames = num_fbank_frames(w.size());
  const Matrix& fb = mel_filterbank(num_mels);
  const auto& window = hamming();

  FeatureMatrix out;
  out.num_mels = num_mels;
  out.frames = Matrix(frames, num_mels);
  std::vector<double> buf(kFrameLength);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = w.samples.data() + t * kFrameShift;
    for (int i = kFrameLength - 1; i > 0; --i) buf[i] = src[i] - kPreemphasis * src[i - 1];
    buf[0] = src[0] - kPreemphasis * src[0];
    for (int i = 0; i < kFrameLength; ++i) buf[i] *= window[i];
    const std::vector<double> power = power_spectrum(buf);
    for (int j = 0; j < num_mels; ++j) {
      const double e = simd::dot(fb.row(j).data(), power.data(), power.size());
      out.frames(t, j) = std::log(std::max(e, kLogFloor));
    }
  }
  return out;
}

}  // namespace jtss::audio
