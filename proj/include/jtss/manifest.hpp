#pragma once
// Utterance manifests: JSON lines of {utt_id, speaker_id, path, n_samples}.
// Relative paths are resolved against the manifest's directory.

#include <filesystem>
#include <string>
#include <vector>

namespace jtss::manifest {

struct Utterance {
  std::string utt_id;
  std::string speaker_id;
  std::filesystem::path path;  // absolute after loading
  std::size_t n_samples = 0;
  int label = -1;  // dense class index, assigned by load()
};

struct Manifest {
  std::vector<Utterance> utterances;
  std::vector<std::string> speakers;  // label -> speaker_id
};

/// Reads a manifest and assigns dense labels. Integer speaker ids are used as
/// labels directly and must cover 0..C-1 without gaps; string ids are mapped
/// to labels in sorted order. Duplicate utt_ids are rejected.
Manifest load(const std::filesystem::path& path);

/// Writes records with paths relative to the manifest's directory when possible.
void save(const std::filesystem::path& path, const std::vector<Utterance>& utterances);

}  // namespace jtss::manifest
