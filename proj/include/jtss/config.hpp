#pragma once
// RunConfig: one JSON document with the sections encoder, train, teacher,
// augment, data, evaluation and output. Unknown keys are rejected; relative
// paths are resolved against the directory of the config file.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "jtss/audio.hpp"
#include "jtss/backbones.hpp"
#include "jtss/evaluation.hpp"
#include "jtss/synth.hpp"
#include "jtss/teacher.hpp"
#include "jtss/trainer.hpp"

namespace jtss::config {

struct TeacherConfig {
  bool enabled = true;  // "kind": "none" disables the teacher
  teacher::TeacherSource source;

  bool operator==(const TeacherConfig&) const = default;
};

struct AugmentConfig {
  std::vector<audio::AugmentKind> kinds;  // empty: no augmentation
  double snr_low_db = 5.0;
  double snr_high_db = 15.0;
  uint64_t seed = 0;
  std::filesystem::path rir_dir;  // optional directories of 16 kHz mono WAVs
  std::filesystem::path noise_dir;
  std::filesystem::path music_dir;
  std::filesystem::path babble_dir;

  bool operator==(const AugmentConfig&) const = default;
};

struct EvalSet {
  std::string name;
  std::filesystem::path manifest;
  std::filesystem::path trials;

  bool operator==(const EvalSet&) const = default;
};

struct EvaluationConfig {
  std::vector<EvalSet> sets;
  std::filesystem::path cohort_manifest;  // empty: raw scores only
  int asnorm_k = 50;
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;

  bool operator==(const EvaluationConfig&) const = default;
};

struct DataConfig {
  std::filesystem::path train_manifest;
  std::filesystem::path corpus_dir;  // gen-data output
  synth::SynthSpec synth;

  bool operator==(const DataConfig&) const = default;
};

struct OutputConfig {
  std::filesystem::path dir = "runs";

  bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
  backbones::EncoderConfig encoder;
  trainer::TrainConfig train;
  TeacherConfig teacher;
  AugmentConfig augment;
  DataConfig data;
  EvaluationConfig evaluation;
  OutputConfig output;

  bool operator==(const RunConfig&) const = default;
};

/// Parses JSON text; relative paths are joined to base_dir.
RunConfig parse(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load(const std::filesystem::path& path);
/// Pretty JSON that parse() maps back to an equal RunConfig.
std::string dump(const RunConfig& cfg);
void validate(const RunConfig& cfg);

std::optional<teacher::TeacherSource> teacher_source(const RunConfig& cfg);
/// AugmentPolicy with recorded pools loaded from the configured directories;
/// nullopt when no kinds are configured.
std::optional<audio::AugmentPolicy> augment_policy(const RunConfig& cfg);
evaluation::ScoringOptions scoring_options(const RunConfig& cfg);

}  // namespace jtss::config
