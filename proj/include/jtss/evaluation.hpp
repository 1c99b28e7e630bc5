#pragma once
// Verification back-end: cosine trial scoring, adaptive symmetric score
// normalization (AS-norm), EER and minDCF.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jtss/backbones.hpp"

namespace jtss::evaluation {

struct Trial {
  std::string enroll;
  std::string test;
  bool target = false;
};

using TrialList = std::vector<Trial>;

/// "<enroll_utt> <test_utt> <target|nontarget>" per line.
TrialList read_trials(const std::filesystem::path& path);
void write_trials(const std::filesystem::path& path, const TrialList& trials);

using EmbeddingMap = std::map<std::string, backbones::SpeakerEmbedding>;

/// One "<utt_id> v1 v2 ..." line per embedding, values printed round-trip exact.
void write_embeddings(const std::filesystem::path& path, const EmbeddingMap& embeddings);
EmbeddingMap read_embeddings(const std::filesystem::path& path);

double cosine_score(std::span<const double> a, std::span<const double> b);
inline double cosine_score(const backbones::SpeakerEmbedding& a, const backbones::SpeakerEmbedding& b) {
  return cosine_score(a.e, b.e);
}

struct CohortStats {
  double mean = 0.0;
  double stddev = 0.0;  // population form over the top-k scores
};

/// Mean and standard deviation of the k largest cohort scores.
CohortStats top_k_stats(std::span<const double> cohort_scores, int k);

struct NormalizedScore {
  double score = 0.0;
  bool degenerate = false;  // a cohort had zero spread; raw score returned
};

/// 0.5 * ((raw - mu_e) / sigma_e + (raw - mu_t) / sigma_t) over each cohort's top-k.
NormalizedScore asnorm(double raw, std::span<const double> enroll_cohort, std::span<const double> test_cohort, int k);

struct OperatingPoint {
  double value = 0.0;
  double threshold = 0.0;
};

/// labels: 1 for target, 0 for nontarget. A trial is accepted when score >= threshold.
/// EER is found by linear interpolation between adjacent ROC points; the
/// lowest crossing threshold wins ties.
OperatingPoint compute_eer(std::span<const double> scores, std::span<const int> labels);

struct DcfParams {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
};

/// Normalized minimum detection cost over all thresholds including +/- infinity.
OperatingPoint compute_min_dcf(std::span<const double> scores, std::span<const int> labels,
                               const DcfParams& params = {});

struct Metrics {
  double eer = 0.0;
  double eer_threshold = 0.0;
  double min_dcf = 0.0;
  double dcf_threshold = 0.0;
  std::size_t targets = 0;
  std::size_t nontargets = 0;
};

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels, const DcfParams& params = {});

struct ScoredTrial {
  Trial trial;
  double raw = 0.0;
  std::optional<double> normalized;
};

struct TrialReport {
  std::vector<ScoredTrial> scores;
  Metrics raw;
  std::optional<Metrics> normalized;
  std::size_t degenerate_norms = 0;
};

struct ScoringOptions {
  int asnorm_k = 50;
  DcfParams dcf;
};

/// Scores every trial with the cosine back-end; when a cohort is given the
/// AS-norm column and its metrics are added.
TrialReport run_trials(const TrialList& trials, const EmbeddingMap& embeddings,
                       const std::vector<backbones::SpeakerEmbedding>* cohort, const ScoringOptions& options);

/// CSV: enroll,test,raw_score,norm_score,label (norm_score empty without cohort).
void write_scores_csv(const std::filesystem::path& path, const TrialReport& report);

}  // namespace jtss::evaluation
