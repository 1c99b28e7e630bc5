#pragma once
// Deterministic desk-scale corpus: each synthetic speaker is a harmonic source
// with its own fundamental frequency, formant envelope and spectral tilt;
// utterances vary phase, pitch jitter, vibrato and a shared vowel-like content
// sequence. The far-field condition adds reverberation and one additive
// corruption (noise, music or babble).
//
// Output layout under out_dir:
//   wav/<condition>/<utt_id>.wav
//   all.jsonl                     every utterance of every condition
//   train.jsonl                   training split (all conditions)
//   eval_<condition>.jsonl        held-out utterances per condition
//   trials_<condition>.txt        balanced target / nontarget trials

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jtss/audio.hpp"
#include "jtss/manifest.hpp"

namespace jtss::synth {

struct SynthSpec {
  int n_speakers = 20;
  int utts_per_speaker = 20;
  double utt_seconds = 2.0;
  uint64_t seed = 0;
  std::vector<std::string> conditions{"clean", "farfield"};
  /// Held-out utterances per speaker; -1 picks max(2, utts_per_speaker / 4)
  /// capped at utts_per_speaker.
  int eval_utts_per_speaker = -1;
  double farfield_snr_low_db = 0.0;
  double farfield_snr_high_db = 10.0;

  bool operator==(const SynthSpec&) const = default;
};

void validate(const SynthSpec& spec);
int eval_utts(const SynthSpec& spec);

struct CorpusFiles {
  std::filesystem::path all_manifest;
  std::filesystem::path train_manifest;
  std::vector<std::string> conditions;
  std::vector<std::filesystem::path> eval_manifests;  // per condition
  std::vector<std::filesystem::path> trial_lists;     // per condition
  std::size_t num_wavs = 0;
};

/// Clean waveform of utterance `utt` of speaker `speaker`.
audio::Waveform synthesize_utterance(const SynthSpec& spec, int speaker, int utt);

/// Far-field version of a clean utterance (reverb, then one additive kind).
audio::Waveform farfield(const SynthSpec& spec, const audio::Waveform& clean, int speaker, int utt);

std::string utt_id(int speaker, int utt, const std::string& condition);
std::string speaker_id(int speaker);

CorpusFiles generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// Mean within-speaker minus mean between-speaker cosine of per-utterance
/// Fbank means (centered by the corpus-wide mean).
double sanity_separation(const std::vector<manifest::Utterance>& utterances, int num_mels = 40);

}  // namespace jtss::synth
