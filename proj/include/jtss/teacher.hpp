#pragma once
// Frozen phonetic teacher: V = {v_t} per utterance, read from JTSF feature
// files written offline by a speech model, or produced by a deterministic
// synthetic stand-in. Nothing here is trainable.
//
// JTSF layout (little-endian):
//   "JTSF" | u32 version = 1 | u32 T | u32 D | T*D float32, row-major

#include <cstdint>
#include <filesystem>
#include <string>

#include "jtss/audio.hpp"
#include "jtss/matrix.hpp"

namespace jtss::teacher {

inline constexpr int kHopSamples = 320;     // 20 ms
inline constexpr int kWindowSamples = 400;  // 25 ms receptive field
inline constexpr uint32_t kJtsfVersion = 1;

struct TeacherSequence {
  Matrix vectors;  // T x D~
  std::string utt_id;
  int hop_samples = kHopSamples;
  int window_samples = kWindowSamples;

  std::size_t num_frames() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }
};

enum class SourceKind { kFileBacked, kSynthetic };

std::string to_string(SourceKind kind);
SourceKind source_kind_from_string(const std::string& s);

struct TeacherSource {
  SourceKind kind = SourceKind::kSynthetic;
  std::filesystem::path root;  // file_backed: directory holding <utt_id>.jtsf
  uint64_t seed = 0;           // synthetic: projection seed
  int dim = 32;

  bool operator==(const TeacherSource&) const = default;
};

void validate(const TeacherSource& src);

/// 1 + floor((n - 400) / 320); throws when n < 400.
std::size_t teacher_frames(std::size_t n_samples);

/// Each row is a fixed seeded random projection of the log energy-normalized
/// band profile of one 400-sample window (hop 320), scaled to unit norm.
/// Invariant to positive rescaling of the waveform.
TeacherSequence synthetic_teacher(const audio::Waveform& w, int dim, uint64_t seed);

void write_jtsf(const std::filesystem::path& path, const Matrix& vectors);
Matrix read_jtsf(const std::filesystem::path& path);

std::filesystem::path feature_path(const TeacherSource& src, const std::string& utt_id);

/// file_backed: reads <root>/<utt_id>.jtsf and checks D against src.dim.
/// synthetic: runs synthetic_teacher on `waveform` (required).
TeacherSequence load_teacher(const TeacherSource& src, const std::string& utt_id,
                             const audio::Waveform* waveform = nullptr);

/// Rows [first, first + count) of a full-utterance sequence, wrapping around
/// the end (matches wrap-padded crops).
Matrix slice_frames(const TeacherSequence& seq, std::size_t first, std::size_t count);

/// FNV-1a over the sorted (name, bytes) of every .jtsf file under root.
uint64_t checksum_features(const std::filesystem::path& root);

}  // namespace jtss::teacher
