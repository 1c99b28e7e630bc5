#pragma once
// Command-line surface:
//   gen-data            --config C [--out DIR] [--seed N]
//   extract-teacher     --config C [--out DIR]
//   train               --config C [--out DIR] [--seed N]
//   extract-embeddings  CHECKPOINT MANIFEST --out FILE
//   score               EMBEDDINGS --trials FILE [--cohort EMBEDDINGS] --out FILE [--config C]
//   evaluate            CHECKPOINT MANIFEST --trials FILE [--cohort MANIFEST] [--out DIR] [--config C]
//   ablate              --config C --sweep lambda=0,0.1 | tap_layer=0,1,2 [--out DIR] [--seed N]
//   dump-config         [--config C] [--out FILE]

#include <iosfwd>
#include <string>
#include <vector>

#include "jtss/config.hpp"
#include "jtss/evaluation.hpp"
#include "jtss/manifest.hpp"
#include "jtss/trainer.hpp"

namespace jtss::cli {

/// Inference-mode embeddings for every utterance of a manifest.
evaluation::EmbeddingMap extract_embeddings(trainer::Model& model, const manifest::Manifest& data);

/// Evaluation sets of a config; when none are listed and data.corpus_dir is
/// set, the generated eval_<condition> manifests and trial lists are used.
std::vector<config::EvalSet> effective_eval_sets(const config::RunConfig& cfg);
std::filesystem::path effective_train_manifest(const config::RunConfig& cfg);

struct SetReport {
  std::string name;
  evaluation::TrialReport report;
};

/// Scores every evaluation set of cfg with the given model (AS-norm when a
/// cohort manifest is configured).
std::vector<SetReport> evaluate_sets(trainer::Model& model, const config::RunConfig& cfg);

struct Sweep {
  std::string parameter;  // "lambda" or "tap_layer"
  std::vector<double> values;
};

/// "lambda=0,0.1" or "tap_layer=0,1,2". Values come back sorted ascending.
Sweep parse_sweep(const std::string& text);

/// Entry point. Returns the process exit code; diagnostics go to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace jtss::cli
