#pragma once
// Waveform I/O, log-mel filter-bank front-end and far-field augmentation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "jtss/common.hpp"
#include "jtss/matrix.hpp"

namespace jtss::audio {

/// Mono 16 kHz signal with amplitudes nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
};

/// Throws if the waveform violates its invariants (rate, length, finiteness).
void validate(const Waveform& w);

/// Reads a 16 kHz mono WAV file (PCM 16/32-bit or IEEE float32).
/// Integer PCM is scaled to [-1, 1).
Waveform load_waveform(const std::filesystem::path& path);

/// Writes 16-bit PCM; samples are clipped to [-1, 1].
void save_waveform(const std::filesystem::path& path, const Waveform& w);

// ---------------------------------------------------------------------------
// Filter-bank features

inline constexpr int kFrameLength = 400;  // 25 ms at 16 kHz
inline constexpr int kFrameShift = 160;   // 10 ms
inline constexpr int kFftSize = 512;
inline constexpr double kPreemphasis = 0.97;
inline constexpr double kLogFloor = 1e-10;

/// T x F log-mel energies, one row per frame.
struct FeatureMatrix {
  Matrix frames;
  int num_mels = 0;
  double frame_shift = 0.010;
  double frame_length = 0.025;

  std::size_t num_frames() const { return frames.rows(); }
};

/// 1 + floor((n - 400) / 160); throws when n < 400.
std::size_t num_fbank_frames(std::size_t n_samples);

/// HTK mel scale: 1127 ln(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters over the 0-8 kHz band, num_mels x (kFftSize/2 + 1).
const Matrix& mel_filterbank(int num_mels);

/// Per frame: pre-emphasis, Hamming window, 512-point power spectrum,
/// mel weighting, natural log floored at ln(1e-10). No dither, no VAD.
FeatureMatrix compute_fbank(const Waveform& w, int num_mels);

/// |FFT|^2 of a real frame zero-padded to kFftSize (kFftSize/2 + 1 bins).
std::vector<double> power_spectrum(const std::vector<double>& frame);

// ---------------------------------------------------------------------------
// Augmentation

/// out = clean + g * noise, with g chosen so that
/// 10 log10(P_clean / P_{g*noise}) == snr_db. Powers are measured over the
/// samples where clean is nonzero; noise is tiled or truncated to clean's length.
Waveform add_noise(const Waveform& clean, const Waveform& noise, double snr_db);

/// The gain add_noise applies for these inputs.
double noise_gain(const Waveform& clean, const Waveform& noise, double snr_db);

/// SNR in dB measured over the nonzero support of clean.
double measure_snr_db(const Waveform& clean, const Waveform& noise_component);

/// Full convolution with rir truncated to dry's length and rescaled so that
/// the peak magnitude matches the dry signal's.
Waveform apply_reverb(const Waveform& dry, const Waveform& rir);

/// Linear convolution truncated to out_len samples; FFT-based above a tap threshold.
std::vector<double> convolve(const std::vector<double>& x, const std::vector<double>& h,
                             std::size_t out_len);

enum class AugmentKind { kNoise, kMusic, kBabble, kReverb };

std::string to_string(AugmentKind kind);
AugmentKind augment_kind_from_string(const std::string& s);

struct AugmentPolicy {
  std::vector<AugmentKind> kinds;
  double snr_low_db = 5.0;
  double snr_high_db = 15.0;
  /// Impulse responses to draw from; a synthetic exponentially decaying
  /// response is generated when empty.
  std::vector<Waveform> rir_pool;
  /// Optional recorded sources per additive kind; synthesized when absent.
  std::map<AugmentKind, std::vector<Waveform>> noise_pool;
  uint64_t seed = 0;
};

void validate(const AugmentPolicy& policy);

/// Draws one kind uniformly from policy.kinds and applies it. Deterministic
/// in (w, policy.seed).
Waveform augment(const Waveform& w, const AugmentPolicy& policy);

/// Synthetic corruption sources, each deterministic in its seed.
Waveform synth_white_noise(std::size_t n, uint64_t seed);
Waveform synth_music(std::size_t n, uint64_t seed);
Waveform synth_babble(std::size_t n, uint64_t seed);
Waveform synth_rir(uint64_t seed);

}  // namespace jtss::audio
