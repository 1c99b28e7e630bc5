#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fft.hpp"
#include "jtss/audio.hpp"
#include "jtss/simd/kernels.hpp"

namespace jtss::audio {
namespace {

constexpr std::size_t kDirectConvMaxTaps = 64;

// Mean power of x (tiled to support.size() positions) over the support mask.
double support_power(const std::vector<double>& x, const std::vector<char>& support) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < support.size(); ++n) {
    if (!support[n]) continue;
    const double v = x[n % x.size()];
    sum += v * v;
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::vector<char> nonzero_support(const Waveform& w) {
  std::vector<char> mask(w.size());
  for (std::size_t n = 0; n < w.size(); ++n) mask[n] = w.samples[n] != 0.0;
  return mask;
}

double peak(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

}  // namespace

double noise_gain(const Waveform& clean, const Waveform& noise, double snr_db) {
  validate(clean);
  validate(noise);
  if (!std::isfinite(snr_db)) throw Error("add_noise: SNR must be finite");
  const auto support = nonzero_support(clean);
  const double p_clean = support_power(clean.samples, support);
  if (p_clean <= 0.0) throw Error("add_noise: clean signal has zero power");
  const double p_noise = support_power(noise.samples, support);
  if (p_noise <= 0.0) throw Error("add_noise: noise has zero power over the clean support");
  return std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
}

Waveform add_noise(const Waveform& clean, const Waveform& noise, double snr_db) {
  const double g = noise_gain(clean, noise, snr_db);
  Waveform out = clean;
  for (std::size_t n = 0; n < out.size(); ++n) out.samples[n] += g * noise.samples[n % noise.size()];
  return out;
}

double measure_snr_db(const Waveform& clean, const Waveform& noise_component) {
  const auto support = nonzero_support(clean);
  const double p_clean = support_power(clean.samples, support);
  const double p_noise = support_power(noise_component.samples, support);
  if (p_clean <= 0.0 || p_noise <= 0.0) throw Error("measure_snr_db: zero power");
  return 10.0 * std::log10(p_clean / p_noise);
}

std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h,
                             std::size_t out_len) {
  std::vector<double> y(out_len, 0.0);
  if (x.empty() || h.empty()) return y;
  if (h.size() <= kDirectConvMaxTaps) {
    for (std::size_t k = 0; k < h.size(); ++k) {
      if (k >= out_len) break;
      const std::size_t n = std::min(out_len - k, x.size());
      simd::axpy(h[k], x.data(), y.data() + k, n);
    }
    return y;
  }
  std::size_t n_fft = 1;
  while (n_fft < x.size() + h.size() - 1) n_fft <<= 1;
  std::vector<std::complex<double>> fx, fh;
  detail::rfft(x, n_fft, fx);
  detail::rfft(h, n_fft, fh);
  for (std::size_t k = 0; k < fx.size(); ++k) fx[k] *= fh[k];
  std::vector<double> full;
  detail::irfft(fx, n_fft, full);
  const double inv = 1.0 / static_cast<double>(n_fft);
  for (std::size_t n = 0; n < out_len && n < full.size(); ++n) y[n] = full[n] * inv;
  return y;
}

Waveform apply_reverb(const Waveform& dry, const Waveform& rir) {
  validate(dry);
  validate(rir);
  if (peak(rir.samples) == 0.0) throw Error("apply_reverb: impulse response is all zeros");
  Waveform out;
  out.sample_rate = dry.sample_rate;
  out.samples = convolve(dry.samples, rir.samples, dry.size());
  const double p_dry = peak(dry.samples);
  const double p_wet = peak(out.samples);
  if (p_wet > 0.0 && p_dry != p_wet) {
    const double scale = p_dry / p_wet;
    for (double& v : out.samples) v *= scale;
  }
  return out;
}

std::string to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::kNoise: return "noise";
    case AugmentKind::kMusic: return "music";
    case AugmentKind::kBabble: return "babble";
    case AugmentKind::kReverb: return "reverb";
  }
  return "?";
}

AugmentKind augment_kind_from_string(const std::string& s) {
  if (s == "noise") return AugmentKind::kNoise;
  if (s == "music") return AugmentKind::kMusic;
  if (s == "babble") return AugmentKind::kBabble;
  if (s == "reverb") return AugmentKind::kReverb;
  throw Error("unknown augmentation kind '" + s + "' (expected noise, music, babble or reverb)");
}

void validate(const AugmentPolicy& policy) {
  if (policy.kinds.empty()) throw Error("augment policy has no kinds");
  if (!std::isfinite(policy.snr_low_db) || !std::isfinite(policy.snr_high_db) ||
      policy.snr_low_db > policy.snr_high_db)
    throw Error("augment policy SNR range must be finite with low <= high");
}

Waveform synth_white_noise(std::size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Waveform w;
  w.samples.resize(n);
  for (double& v : w.samples) v = normal(rng);
  return w;
}

Waveform synth_music(std::size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pitch(48, 84);
  Waveform w;
  w.samples.assign(n, 0.0);
  constexpr int kVoices = 3;
  for (int v = 0; v < kVoices; ++v) {
    std::size_t start = 0;
    while (start < n) {
      const std::size_t len = static_cast<std::size_t>((0.25 + 0.5 * unit(rng)) * kSampleRate);
      const double f0 = 440.0 * std::pow(2.0, (pitch(rng) - 69) / 12.0);
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      const std::size_t end = std::min(n, start + len);
      for (std::size_t i = start; i < end; ++i) {
        const double t = static_cast<double>(i - start) / kSampleRate;
        const double env = std::exp(-3.0 * t);
        double s = 0.0;
        for (int h = 1; h <= 4; ++h) {
          if (h * f0 >= kSampleRate / 2.0) break;
          s += std::sin(2.0 * std::numbers::pi * h * f0 * t + h * phase) / h;
        }
        w.samples[i] += env * s;
      }
      start = end;
    }
  }
  return w;
}

Waveform synth_babble(std::size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int talkers = 3 + static_cast<int>(unit(rng) * 4.0);
  Waveform w;
  w.samples.assign(n, 0.0);
  for (int k = 0; k < talkers; ++k) {
    const double f0 = 100.0 + 200.0 * unit(rng);
    const double rate = 3.0 + 3.0 * unit(rng);
    const double mod_phase = 2.0 * std::numbers::pi * unit(rng);
    const double formant = 500.0 + 1500.0 * unit(rng);
    std::vector<double> weights;
    for (int h = 1; h * f0 * 1.05 < 4000.0; ++h) {
      const double d = (h * f0 - formant) / 600.0;
      weights.push_back(std::exp(-d * d));
    }
    double phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / kSampleRate;
      const double f = f0 * (1.0 + 0.05 * std::sin(2.0 * std::numbers::pi * 0.7 * t + mod_phase));
      phase += 2.0 * std::numbers::pi * f / kSampleRate;
      const double env = std::pow(std::sin(std::numbers::pi * rate * t + mod_phase), 2);
      double s = 0.0;
      for (std::size_t h = 0; h < weights.size(); ++h) s += weights[h] * std::sin((h + 1) * phase);
      w.samples[i] += env * s;
    }
  }
  return w;
}

Waveform synth_rir(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double rt60 = 0.2 + 0.4 * unit(rng);
  const std::size_t len = kSampleRate / 4;
  const std::size_t predelay = 16 + static_cast<std::size_t>(unit(rng) * 64.0);
  Waveform rir;
  rir.samples.assign(len, 0.0);
  rir.samples[0] = 1.0;
  // 60 dB amplitude decay over rt60 seconds: exp(-ln(1000) t / rt60).
  const double decay = std::log(1000.0) / (rt60 * kSampleRate);
  for (std::size_t n = predelay; n < len; ++n)
    rir.samples[n] = 0.5 * normal(rng) * std::exp(-decay * static_cast<double>(n));
  return rir;
}

Waveform augment(const Waveform& w, const AugmentPolicy& policy) {
  validate(policy);
  validate(w);
  std::mt19937_64 rng(policy.seed);
  std::uniform_int_distribution<std::size_t> pick_kind(0, policy.kinds.size() - 1);
  const AugmentKind kind = policy.kinds[pick_kind(rng)];
  const uint64_t source_seed = rng();

  if (kind == AugmentKind::kReverb) {
    if (!policy.rir_pool.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, policy.rir_pool.size() - 1);
      return apply_reverb(w, policy.rir_pool[pick(rng)]);
    }
    return apply_reverb(w, synth_rir(source_seed));
  }

  Waveform source;
  const auto pool = policy.noise_pool.find(kind);
  if (pool != policy.noise_pool.end() && !pool->second.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, pool->second.size() - 1);
    source = pool->second[pick(rng)];
  } else if (kind == AugmentKind::kNoise) {
    source = synth_white_noise(w.size(), source_seed);
  } else if (kind == AugmentKind::kMusic) {
    source = synth_music(w.size(), source_seed);
  } else {
    source = synth_babble(w.size(), source_seed);
  }
  double snr = policy.snr_low_db;
  if (policy.snr_high_db > policy.snr_low_db) {
    std::uniform_real_distribution<double> pick_snr(policy.snr_low_db, policy.snr_high_db);
    snr = pick_snr(rng);
  }
  return add_noise(w, source, snr);
}

}  // namespace jtss::audio
