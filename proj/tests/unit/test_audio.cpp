#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "jtss/audio.hpp"
#include "test_util.hpp"

using namespace jtss;
using audio::Waveform;

namespace {

Waveform random_wave(std::size_t n, std::mt19937_64& rng, double scale = 0.3) {
  std::normal_distribution<double> nd(0.0, scale);
  Waveform w;
  w.samples.resize(n);
  for (double& s : w.samples) s = nd(rng);
  return w;
}

Waveform sine(std::size_t n, double hz, double amp = 0.5) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / 16000.0);
  return w;
}

// Independent fbank oracle: direct DFT, filters rebuilt from the HTK formula.
std::vector<std::vector<double>> fbank_oracle(const Waveform& w, int num_mels) {
  const int n_frames = 1 + (static_cast<int>(w.size()) - 400) / 160;
  auto mel = [](double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); };
  const double top = mel(8000.0);
  std::vector<std::vector<double>> out;
  for (int t = 0; t < n_frames; ++t) {
    std::vector<double> frame(400);
    for (int i = 0; i < 400; ++i) {
      const double prev = i == 0 ? w.samples[t * 160] : w.samples[t * 160 + i - 1];
      frame[i] = (w.samples[t * 160 + i] - 0.97 * prev) *
                 (0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / 399.0));
    }
    std::vector<double> power(257);
    for (int k = 0; k < 257; ++k) {
      std::complex<double> s = 0.0;
      for (int i = 0; i < 400; ++i) s += frame[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * i / 512.0);
      power[k] = std::norm(s);
    }
    std::vector<double> row(num_mels);
    for (int j = 0; j < num_mels; ++j) {
      const double l = top * j / (num_mels + 1), c = top * (j + 1) / (num_mels + 1), r = top * (j + 2) / (num_mels + 1);
      double e = 0.0;
      for (int k = 0; k < 257; ++k) {
        const double m = mel(k * 16000.0 / 512.0);
        double wgt = 0.0;
        if (m > l && m <= c) wgt = (m - l) / (c - l);
        else if (m > c && m < r) wgt = (r - m) / (r - c);
        e += wgt * power[k];
      }
      row[j] = std::log(std::max(e, 1e-10));
    }
    out.push_back(row);
  }
  return out;
}

std::vector<double> brute_convolve(const std::vector<double>& x, const std::vector<double>& h, std::size_t len) {
  std::vector<double> y(len, 0.0);
  for (std::size_t n = 0; n < len; ++n)
    for (std::size_t k = 0; k < h.size() && k <= n; ++k)
      if (n - k < x.size()) y[n] += h[k] * x[n - k];
  return y;
}

void write_wav_header(std::ofstream& f, uint16_t format, uint16_t channels, uint32_t rate, uint16_t bits,
                      uint32_t data_bytes) {
  auto u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVEfmt ", 8);
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<uint16_t>(channels * bits / 8));
  u16(bits);
  f.write("data", 4);
  u32(data_bytes);
}

}  // namespace

TEST_CASE("fbank frame count follows 1 + floor((N - 400) / 160) on random lengths") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(400, 8000);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = len(rng);
    const auto f = audio::compute_fbank(random_wave(n, rng), 40);
    CHECK(f.num_frames() == 1 + (n - 400) / 160);
    CHECK(audio::num_fbank_frames(n) == f.num_frames());
  }
  CHECK(audio::num_fbank_frames(16000) == 98);
  CHECK(audio::num_fbank_frames(400) == 1);
  CHECK_THROWS_AS(audio::num_fbank_frames(399), Error);
}

TEST_CASE("fbank matches a direct-DFT oracle") {
  std::mt19937_64 rng(2);
  for (int num_mels : {23, 40, 80}) {
    const Waveform w = num_mels == 40 ? sine(1600, 440.0) : random_wave(1200, rng);
    const auto got = audio::compute_fbank(w, num_mels);
    const auto want = fbank_oracle(w, num_mels);
    REQUIRE(got.num_frames() == want.size());
    double err = 0.0;
    for (std::size_t t = 0; t < want.size(); ++t)
      for (int j = 0; j < num_mels; ++j) err = std::max(err, std::abs(got.frames(t, j) - want[t][j]));
    CHECK(err < 1e-8);
  }
}

TEST_CASE("a sine peaks in the mel band containing its frequency") {
  const auto f = audio::compute_fbank(sine(4000, 1000.0), 40);
  const Matrix& fb = audio::mel_filterbank(40);
  const std::size_t bin = 32;  // 1000 Hz at 31.25 Hz per bin
  int best_filter = 0;
  for (int j = 1; j < 40; ++j)
    if (fb(j, bin) > fb(best_filter, bin)) best_filter = j;
  int peak = 0;
  for (int j = 1; j < 40; ++j)
    if (f.frames(5, j) > f.frames(5, peak)) peak = j;
  CHECK(std::abs(peak - best_filter) <= 1);
}

TEST_CASE("mel scale") {
  CHECK(audio::hz_to_mel(0.0) == 0.0);
  CHECK(audio::hz_to_mel(700.0) == doctest::Approx(1127.0 * std::log(2.0)));
  for (double hz : {50.0, 440.0, 3000.0, 7999.0}) CHECK(audio::mel_to_hz(audio::hz_to_mel(hz)) == doctest::Approx(hz));
  const Matrix& fb = audio::mel_filterbank(80);
  CHECK(fb.rows() == 80);
  CHECK(fb.cols() == 257);
}

TEST_CASE("silence hits the log floor") {
  Waveform w;
  w.samples.assign(800, 0.0);
  const auto f = audio::compute_fbank(w, 40);
  for (double v : f.frames.values()) CHECK(v == doctest::Approx(std::log(1e-10)));
}

TEST_CASE("add_noise reaches the requested SNR on 50 random cases") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> snr(-10.0, 30.0);
  std::uniform_int_distribution<std::size_t> len(500, 5000);
  for (int i = 0; i < 50; ++i) {
    Waveform clean = random_wave(len(rng), rng, 0.2);
    // Zero stretch to exercise the nonzero-support rule.
    for (std::size_t k = 0; k < clean.size() / 5; ++k) clean.samples[k] = 0.0;
    const Waveform noise = random_wave(len(rng), rng, 0.05);
    const double target = snr(rng);
    const Waveform mixed = audio::add_noise(clean, noise, target);
    REQUIRE(mixed.size() == clean.size());
    // Oracle: powers over the support of clean, noise component = mixed - clean.
    double pc = 0.0, pn = 0.0;
    std::size_t support = 0;
    for (std::size_t k = 0; k < clean.size(); ++k) {
      if (clean.samples[k] == 0.0) continue;
      const double d = mixed.samples[k] - clean.samples[k];
      pc += clean.samples[k] * clean.samples[k];
      pn += d * d;
      ++support;
    }
    CHECK(std::abs(10.0 * std::log10(pc / pn) - target) < 1e-6);
    Waveform comp = clean;
    for (std::size_t k = 0; k < clean.size(); ++k) comp.samples[k] = mixed.samples[k] - clean.samples[k];
    CHECK(std::abs(audio::measure_snr_db(clean, comp) - target) < 1e-6);
    CHECK(support > 0);
  }
}

TEST_CASE("add_noise preconditions") {
  std::mt19937_64 rng(6);
  const Waveform clean = random_wave(1000, rng), noise = random_wave(300, rng);
  CHECK_THROWS_AS(audio::add_noise(clean, noise, std::nan("")), Error);
  CHECK_THROWS_AS(audio::add_noise(clean, noise, INFINITY), Error);
  Waveform zero;
  zero.samples.assign(1000, 0.0);
  CHECK_THROWS_AS(audio::add_noise(zero, noise, 10.0), Error);
  CHECK_THROWS_AS(audio::add_noise(clean, zero, 10.0), Error);
}

TEST_CASE("convolution matches brute force on both paths") {
  std::mt19937_64 rng(7);
  for (std::size_t taps : {1, 5, 64, 65, 300, 4000}) {
    const auto x = random_wave(3000, rng).samples;
    const auto h = random_wave(taps, rng).samples;
    const auto got = audio::convolve(x, h, x.size());
    const auto want = brute_convolve(x, h, x.size());
    double err = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) err = std::max(err, std::abs(got[i] - want[i]));
    INFO("taps " << taps);
    CHECK(err < 1e-9);
  }
}

TEST_CASE("reverb keeps length and dry peak") {
  std::mt19937_64 rng(8);
  const Waveform dry = random_wave(4000, rng, 0.1);
  const Waveform rir = audio::synth_rir(3);
  const Waveform wet = audio::apply_reverb(dry, rir);
  CHECK(wet.size() == dry.size());
  double pd = 0.0, pw = 0.0;
  for (double s : dry.samples) pd = std::max(pd, std::abs(s));
  for (double s : wet.samples) pw = std::max(pw, std::abs(s));
  CHECK(pw == doctest::Approx(pd).epsilon(1e-12));
  Waveform delta;
  delta.samples = {1.0};
  const Waveform same = audio::apply_reverb(dry, delta);
  for (std::size_t i = 0; i < dry.size(); ++i) CHECK(same.samples[i] == doctest::Approx(dry.samples[i]));
}

TEST_CASE("augment is deterministic per seed and honours the kind list") {
  std::mt19937_64 rng(9);
  const Waveform w = random_wave(8000, rng, 0.2);
  audio::AugmentPolicy p;
  p.kinds = {audio::AugmentKind::kNoise, audio::AugmentKind::kMusic, audio::AugmentKind::kBabble,
             audio::AugmentKind::kReverb};
  p.seed = 11;
  const auto a = audio::augment(w, p), b = audio::augment(w, p);
  CHECK(a.samples == b.samples);
  CHECK(a.size() == w.size());
  p.seed = 12;
  CHECK(audio::augment(w, p).samples != a.samples);

  p.kinds.clear();
  CHECK_THROWS_AS(audio::augment(w, p), Error);
  p.kinds = {audio::AugmentKind::kNoise};
  p.snr_low_db = 20;
  p.snr_high_db = 10;
  CHECK_THROWS_AS(audio::augment(w, p), Error);
  CHECK(audio::augment_kind_from_string("babble") == audio::AugmentKind::kBabble);
  CHECK_THROWS_AS(audio::augment_kind_from_string("speed"), Error);
}

TEST_CASE("synthetic sources are deterministic and nonzero") {
  for (auto fn : {&audio::synth_white_noise, &audio::synth_music, &audio::synth_babble}) {
    const auto a = fn(3000, 4), b = fn(3000, 4);
    CHECK(a.samples == b.samples);
    double e = 0.0;
    for (double s : a.samples) e += s * s;
    CHECK(e > 0.0);
  }
}

TEST_CASE("wav round trip and error paths") {
  testutil::TempDir dir("wav");
  std::mt19937_64 rng(10);
  const Waveform w = random_wave(1234, rng, 0.2);
  audio::save_waveform(dir / "a.wav", w);
  const Waveform r = audio::load_waveform(dir / "a.wav");
  REQUIRE(r.size() == w.size());
  // Written as round(x * 32767), read back as q / 32768.
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(r.samples[i] == std::round(std::clamp(w.samples[i], -1.0, 1.0) * 32767.0) / 32768.0);

  CHECK_THROWS_AS(audio::load_waveform(dir / "missing.wav"), Error);
  {
    std::ofstream f(dir / "r8k.wav", std::ios::binary);
    write_wav_header(f, 1, 1, 8000, 16, 4);
    const int16_t s[2] = {1, 2};
    f.write(reinterpret_cast<const char*>(s), 4);
  }
  try {
    audio::load_waveform(dir / "r8k.wav");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("16000") != std::string::npos);
  }
  {
    std::ofstream f(dir / "stereo.wav", std::ios::binary);
    write_wav_header(f, 1, 2, 16000, 16, 8);
    const int16_t s[4] = {1, 2, 3, 4};
    f.write(reinterpret_cast<const char*>(s), 8);
  }
  CHECK_THROWS_AS(audio::load_waveform(dir / "stereo.wav"), Error);
  {
    std::ofstream f(dir / "float.wav", std::ios::binary);
    write_wav_header(f, 3, 1, 16000, 32, 8);
    const float s[2] = {0.25f, -0.5f};
    f.write(reinterpret_cast<const char*>(s), 8);
  }
  const Waveform fl = audio::load_waveform(dir / "float.wav");
  REQUIRE(fl.size() == 2);
  CHECK(fl.samples[0] == 0.25);
  CHECK(fl.samples[1] == -0.5);
}
