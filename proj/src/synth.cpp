#include "jtss/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <random>

#include "jtss/evaluation.hpp"

namespace jtss::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kBlock = 80;  // 5 ms synthesis blocks
constexpr double kMaxHarmonicHz = 7800.0;

struct Voice {
  double f0;
  double tilt_db_per_octave;
  std::array<double, 3> formants;
  std::array<double, 3> bandwidths;
};

// Shared vowel-like content: multipliers on (F1, F2).
constexpr std::array<std::array<double, 2>, 8> kVowels{{{1.0, 1.0},
                                                        {1.3, 0.8},
                                                        {0.7, 1.2},
                                                        {1.2, 1.25},
                                                        {0.8, 0.75},
                                                        {1.1, 1.0},
                                                        {0.9, 1.1},
                                                        {1.0, 0.9}}};

Voice voice_for(const SynthSpec& spec, int speaker) {
  // F0 slots are spread log-uniformly over 90-260 Hz and assigned by a seeded
  // permutation so pitch and formants vary independently across speakers.
  std::vector<int> slots(spec.n_speakers);
  for (int i = 0; i < spec.n_speakers; ++i) slots[i] = i;
  std::mt19937_64 perm_rng(mix_seed(spec.seed, 11));
  std::shuffle(slots.begin(), slots.end(), perm_rng);

  std::mt19937_64 rng(mix_seed(spec.seed, 1, static_cast<uint64_t>(speaker)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pos = spec.n_speakers > 1 ? static_cast<double>(slots[speaker]) / (spec.n_speakers - 1) : 0.0;
  Voice v;
  v.f0 = 90.0 * std::pow(260.0 / 90.0, pos) * (1.0 + 0.01 * (2.0 * u(rng) - 1.0));
  v.tilt_db_per_octave = -3.0 - 6.0 * u(rng);
  v.formants = {300.0 + 500.0 * u(rng), 1000.0 + 1200.0 * u(rng), 2300.0 + 900.0 * u(rng)};
  v.bandwidths = {80.0 + 60.0 * u(rng), 100.0 + 80.0 * u(rng), 150.0 + 100.0 * u(rng)};
  return v;
}

double envelope(const Voice& v, const std::array<double, 2>& vowel, double hz) {
  const double centers[3] = {v.formants[0] * vowel[0], v.formants[1] * vowel[1], v.formants[2]};
  double a = 0.02;
  for (int k = 0; k < 3; ++k) {
    const double d = (hz - centers[k]) / v.bandwidths[k];
    a += (k == 0 ? 1.0 : 0.6) / (1.0 + d * d);
  }
  return a * std::pow(hz / 100.0, v.tilt_db_per_octave / 6.0206);
}

void peak_normalize(audio::Waveform& w, double target) {
  double p = 0.0;
  for (double s : w.samples) p = std::max(p, std::abs(s));
  if (p > 0.0)
    for (double& s : w.samples) s *= target / p;
}

}  // namespace

void validate(const SynthSpec& spec) {
  if (spec.n_speakers < 2) throw Error("synthetic corpus needs at least 2 speakers");
  if (spec.utts_per_speaker < 2) throw Error("synthetic corpus needs at least 2 utterances per speaker");
  if (!(spec.utt_seconds * kSampleRate >= 400)) throw Error("synthetic utterances must be at least 25 ms long");
  if (spec.conditions.empty()) throw Error("synthetic corpus needs at least one condition");
  for (const auto& c : spec.conditions)
    if (c != "clean" && c != "farfield") throw Error("unknown condition '" + c + "' (expected clean or farfield)");
  if (spec.eval_utts_per_speaker > spec.utts_per_speaker) throw Error("more eval utterances than utterances");
  if (spec.farfield_snr_low_db > spec.farfield_snr_high_db) throw Error("far-field SNR range must satisfy low <= high");
}

int eval_utts(const SynthSpec& spec) {
  if (spec.eval_utts_per_speaker >= 0) return spec.eval_utts_per_speaker;
  return std::min(spec.utts_per_speaker, std::max(2, spec.utts_per_speaker / 4));
}

std::string speaker_id(int speaker) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%03d", speaker);
  return buf;
}

std::string utt_id(int speaker, int utt, const std::string& condition) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "spk%03d-u%03d-%s", speaker, utt, condition.c_str());
  return buf;
}

audio::Waveform synthesize_utterance(const SynthSpec& spec, int speaker, int utt) {
  const Voice v = voice_for(spec, speaker);
  std::mt19937_64 rng(mix_seed(spec.seed, 2, static_cast<uint64_t>(speaker) * 100003ULL + static_cast<uint64_t>(utt)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = static_cast<std::size_t>(std::llround(spec.utt_seconds * kSampleRate));
  const double f0 = v.f0 * (0.97 + 0.06 * u(rng));
  const double vib_rate = 4.0 + 2.0 * u(rng), vib_depth = 0.01 * u(rng), vib_phase = kTwoPi * u(rng);

  // Content: vowel segments of 120-250 ms with a syllable-like envelope.
  struct Segment {
    std::size_t start, len;
    int vowel;
  };
  std::vector<Segment> segments;
  for (std::size_t s = 0; s < n;) {
    const std::size_t len = static_cast<std::size_t>((0.12 + 0.13 * u(rng)) * kSampleRate);
    segments.push_back({s, len, static_cast<int>(u(rng) * kVowels.size()) % static_cast<int>(kVowels.size())});
    s += len;
  }

  const int harmonics = static_cast<int>(kMaxHarmonicHz / (f0 * (1.0 + vib_depth)));
  std::vector<double> phase(harmonics);
  for (double& p : phase) p = kTwoPi * u(rng);

  audio::Waveform w;
  w.samples.assign(n, 0.0);
  std::size_t seg = 0;
  for (std::size_t b0 = 0; b0 < n; b0 += kBlock) {
    const std::size_t b1 = std::min(n, b0 + kBlock);
    while (seg + 1 < segments.size() && segments[seg + 1].start <= b0) ++seg;
    const Segment& sg = segments[seg];
    const double tau = std::clamp((static_cast<double>(b0) - sg.start) / sg.len, 0.0, 1.0);
    const double amp_env = 0.3 + 0.7 * std::sin(std::numbers::pi * tau);
    const double t = static_cast<double>(b0) / kSampleRate;
    const double f_inst = f0 * (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * t + vib_phase));
    for (int h = 0; h < harmonics; ++h) {
      const double hz = (h + 1) * f_inst;
      if (hz >= kMaxHarmonicHz) break;
      const double amp = amp_env * envelope(v, kVowels[sg.vowel], hz);
      const double step = kTwoPi * hz / kSampleRate;
      std::complex<double> z = std::polar(1.0, phase[h]);
      const std::complex<double> rot = std::polar(1.0, step);
      for (std::size_t i = b0; i < b1; ++i) {
        w.samples[i] += amp * z.imag();
        z *= rot;
      }
      phase[h] = std::fmod(phase[h] + step * static_cast<double>(b1 - b0), kTwoPi);
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  for (double& s : w.samples) s += 0.005 * peak * noise(rng);
  peak_normalize(w, 0.5);
  return w;
}

audio::Waveform farfield(const SynthSpec& spec, const audio::Waveform& clean, int speaker, int utt) {
  const uint64_t key = static_cast<uint64_t>(speaker) * 100003ULL + static_cast<uint64_t>(utt);
  audio::AugmentPolicy reverb;
  reverb.kinds = {audio::AugmentKind::kReverb};
  reverb.seed = mix_seed(spec.seed, 3, key);
  audio::AugmentPolicy additive;
  additive.kinds = {audio::AugmentKind::kNoise, audio::AugmentKind::kMusic, audio::AugmentKind::kBabble};
  additive.snr_low_db = spec.farfield_snr_low_db;
  additive.snr_high_db = spec.farfield_snr_high_db;
  additive.seed = mix_seed(spec.seed, 4, key);
  audio::Waveform w = audio::augment(audio::augment(clean, reverb), additive);
  peak_normalize(w, 0.5);
  return w;
}

CorpusFiles generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  validate(spec);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create corpus directory " + out_dir.string() + ": " + ec.message());

  const int n_eval = eval_utts(spec);
  const int n_train = spec.utts_per_speaker - n_eval;
  CorpusFiles files;
  files.conditions = spec.conditions;
  std::vector<manifest::Utterance> all, train;
  std::map<std::string, std::vector<manifest::Utterance>> eval;

  for (int s = 0; s < spec.n_speakers; ++s)
    for (int u = 0; u < spec.utts_per_speaker; ++u) {
      const audio::Waveform clean = synthesize_utterance(spec, s, u);
      for (const auto& cond : spec.conditions) {
        const audio::Waveform w = cond == "clean" ? clean : farfield(spec, clean, s, u);
        const fs::path rel = fs::path("wav") / cond / (utt_id(s, u, cond) + ".wav");
        fs::create_directories(out_dir / rel.parent_path());
        audio::save_waveform(out_dir / rel, w);
        ++files.num_wavs;
        manifest::Utterance rec{utt_id(s, u, cond), speaker_id(s), rel, w.size(), -1};
        all.push_back(rec);
        (u < n_train ? train : eval[cond]).push_back(rec);
      }
    }

  files.all_manifest = out_dir / "all.jsonl";
  manifest::save(files.all_manifest, all);
  files.train_manifest = out_dir / "train.jsonl";
  manifest::save(files.train_manifest, train);

  for (const auto& cond : spec.conditions) {
    const auto& utts = eval[cond];
    const fs::path eval_path = out_dir / ("eval_" + cond + ".jsonl");
    manifest::save(eval_path, utts);
    files.eval_manifests.push_back(eval_path);

    evaluation::TrialList targets, nontargets;
    for (std::size_t i = 0; i < utts.size(); ++i)
      for (std::size_t j = i + 1; j < utts.size(); ++j) {
        const bool same = utts[i].speaker_id == utts[j].speaker_id;
        (same ? targets : nontargets).push_back({utts[i].utt_id, utts[j].utt_id, same});
      }
    // Balanced: keep an equal number of each label, chosen with the same seed
    // for every condition so trial structure matches across conditions.
    const std::size_t keep = std::min(targets.size(), nontargets.size());
    std::mt19937_64 rng(mix_seed(spec.seed, 5));
    std::shuffle(targets.begin(), targets.end(), rng);
    std::shuffle(nontargets.begin(), nontargets.end(), rng);
    evaluation::TrialList trials(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(keep));
    trials.insert(trials.end(), nontargets.begin(), nontargets.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(trials.begin(), trials.end(), [](const auto& a, const auto& b) {
      return std::tie(a.enroll, a.test) < std::tie(b.enroll, b.test);
    });
    const fs::path trial_path = out_dir / ("trials_" + cond + ".txt");
    if (!trials.empty()) evaluation::write_trials(trial_path, trials);
    files.trial_lists.push_back(trial_path);
  }
  return files;
}

double sanity_separation(const std::vector<manifest::Utterance>& utterances, int num_mels) {
  if (utterances.size() < 2) throw Error("sanity_separation needs at least two utterances");
  std::vector<std::vector<double>> means;
  for (const auto& u : utterances) {
    const auto feats = audio::compute_fbank(audio::load_waveform(u.path), num_mels);
    std::vector<double> m(num_mels, 0.0);
    for (std::size_t t = 0; t < feats.num_frames(); ++t)
      for (int f = 0; f < num_mels; ++f) m[f] += feats.frames(t, f);
    for (double& x : m) x /= static_cast<double>(feats.num_frames());
    means.push_back(std::move(m));
  }
  std::vector<double> center(num_mels, 0.0);
  for (const auto& m : means)
    for (int f = 0; f < num_mels; ++f) center[f] += m[f] / static_cast<double>(means.size());
  for (auto& m : means)
    for (int f = 0; f < num_mels; ++f) m[f] -= center[f];

  double within = 0.0, between = 0.0;
  std::size_t n_within = 0, n_between = 0;
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      const double c = evaluation::cosine_score(means[i], means[j]);
      if (utterances[i].speaker_id == utterances[j].speaker_id) {
        within += c;
        ++n_within;
      } else {
        between += c;
        ++n_between;
      }
    }
  if (n_within == 0 || n_between == 0) throw Error("sanity_separation needs within- and between-speaker pairs");
  return within / static_cast<double>(n_within) - between / static_cast<double>(n_between);
}

}  // namespace jtss::synth
