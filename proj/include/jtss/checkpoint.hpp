#pragma once
// Checkpoint archive (little-endian):
//   "JTCK" | u32 version = 1
//   u64 header length | header JSON (UTF-8)
//   u32 array count
//   per array: u32 name length | name | u32 ndim | ndim x u64 dims | prod(dims) x f64
//
// The header carries the model shape ("model"), the epoch count, the Adam step
// and hyper-parameters, the speaker list and an opaque config echo. Array names:
//   encoder.<param>            encoder parameters
//   buffer.<name>              batch-norm running statistics
//   projection.weight / .bias  D -> D~ bridge (only when present)
//   classifier.weight          class-weight matrix W, C x E
//   adam.m.<param> / adam.v.<param>   optimizer moments, one pair per parameter

#include <filesystem>
#include <string>
#include <vector>

#include "jtss/trainer.hpp"

namespace jtss::checkpoint {

inline constexpr uint32_t kVersion = 1;

struct Checkpoint {
  trainer::Model model;
  trainer::AdamState adam;
  int epoch = 0;
  std::vector<std::string> speakers;
  std::string config_echo;  // JSON text of the run configuration
};

void save(const std::filesystem::path& path, const trainer::Model& model, const trainer::AdamState& adam, int epoch,
          const std::vector<std::string>& speakers, const std::string& config_echo);

Checkpoint load(const std::filesystem::path& path);

}  // namespace jtss::checkpoint
