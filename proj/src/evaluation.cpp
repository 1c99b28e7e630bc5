#include "jtss/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "jtss/simd/kernels.hpp"

namespace jtss::evaluation {

TrialList read_trials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trial list: " + path.string());
  TrialList trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    Trial t;
    std::string label, extra;
    if (!(ss >> t.enroll)) continue;
    if (!(ss >> t.test >> label) || (ss >> extra))
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected '<enroll> <test> <target|nontarget>'");
    if (label == "target")
      t.target = true;
    else if (label != "nontarget")
      throw Error(path.string() + ":" + std::to_string(lineno) + ": unknown label '" + label + "'");
    trials.push_back(std::move(t));
  }
  if (trials.empty()) throw Error("trial list is empty: " + path.string());
  return trials;
}

void write_trials(const std::filesystem::path& path, const TrialList& trials) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trial list: " + path.string());
  for (const auto& t : trials) out << t.enroll << ' ' << t.test << ' ' << (t.target ? "target" : "nontarget") << '\n';
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingMap& embeddings) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write embeddings: " + path.string());
  out << std::setprecision(17);
  for (const auto& [id, emb] : embeddings) {
    out << id;
    for (double v : emb.e) out << ' ' << v;
    out << '\n';
  }
}

EmbeddingMap read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embeddings: " + path.string());
  EmbeddingMap map;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    backbones::SpeakerEmbedding emb;
    if (!(ss >> emb.utt_id)) continue;
    double v;
    while (ss >> v) emb.e.push_back(v);
    if (emb.e.empty()) throw Error("embedding without values for " + emb.utt_id + " in " + path.string());
    map[emb.utt_id] = std::move(emb);
  }
  return map;
}

double cosine_score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("cosine_score: embedding dimensions differ");
  const double na = std::sqrt(simd::dot(a.data(), a.data(), a.size()));
  const double nb = std::sqrt(simd::dot(b.data(), b.data(), b.size()));
  if (na == 0.0 || nb == 0.0) throw Error("cosine_score: zero-norm embedding");
  return std::clamp(simd::dot(a.data(), b.data(), a.size()) / (na * nb), -1.0, 1.0);
}

CohortStats top_k_stats(std::span<const double> cohort_scores, int k) {
  if (k < 2) throw Error("AS-norm top-k must be >= 2");
  if (cohort_scores.size() < static_cast<std::size_t>(k))
    throw Error("AS-norm cohort has " + std::to_string(cohort_scores.size()) + " scores, fewer than k=" +
                std::to_string(k));
  std::vector<double> top(cohort_scores.begin(), cohort_scores.end());
  std::partial_sort(top.begin(), top.begin() + k, top.end(), std::greater<>());
  double mean = 0.0;
  for (int i = 0; i < k; ++i) mean += top[i];
  mean /= k;
  double var = 0.0;
  for (int i = 0; i < k; ++i) var += (top[i] - mean) * (top[i] - mean);
  return {mean, std::sqrt(var / k)};
}

NormalizedScore asnorm(double raw, std::span<const double> enroll_cohort, std::span<const double> test_cohort, int k) {
  const CohortStats e = top_k_stats(enroll_cohort, k);
  const CohortStats t = top_k_stats(test_cohort, k);
  if (e.stddev == 0.0 || t.stddev == 0.0) return {raw, true};
  return {0.5 * ((raw - e.mean) / e.stddev + (raw - t.mean) / t.stddev), false};
}

namespace {

// ROC operating points in increasing threshold order, starting at -inf
// (accept everything) and ending at +inf (reject everything).
struct RocPoint {
  double threshold;
  double p_miss;
  double p_fa;
};

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error("scores and labels differ in length");
  std::vector<std::pair<double, int>> sorted;
  sorted.reserve(scores.size());
  std::size_t targets = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error("non-finite score at trial " + std::to_string(i));
    sorted.emplace_back(scores[i], labels[i] != 0);
    targets += labels[i] != 0;
  }
  const std::size_t nontargets = scores.size() - targets;
  if (targets == 0 || nontargets == 0) throw Error("metrics need at least one target and one nontarget trial");
  std::sort(sorted.begin(), sorted.end());

  const double nt = static_cast<double>(targets), nn = static_cast<double>(nontargets);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<RocPoint> pts{{-inf, 0.0, 1.0}};
  std::size_t targets_below = 0, nontargets_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double tau = sorted[i].first;
    pts.push_back({tau, targets_below / nt, (nn - nontargets_below) / nn});
    for (; i < sorted.size() && sorted[i].first == tau; ++i) (sorted[i].second ? targets_below : nontargets_below)++;
  }
  pts.push_back({inf, 1.0, 0.0});
  return pts;
}

}  // namespace

OperatingPoint compute_eer(std::span<const double> scores, std::span<const int> labels) {
  const auto pts = roc_points(scores, labels);
  std::size_t i = 0;
  while (pts[i].p_miss - pts[i].p_fa < 0.0) ++i;
  const RocPoint& hi = pts[i];
  const double d_hi = hi.p_miss - hi.p_fa;
  if (d_hi == 0.0 || i == 0) return {hi.p_miss, hi.threshold};
  const RocPoint& lo = pts[i - 1];
  const double d_lo = lo.p_miss - lo.p_fa;
  const double alpha = -d_lo / (d_hi - d_lo);
  double threshold;
  if (std::isinf(lo.threshold))
    threshold = hi.threshold;
  else if (std::isinf(hi.threshold))
    threshold = lo.threshold;
  else
    threshold = lo.threshold + alpha * (hi.threshold - lo.threshold);
  return {lo.p_miss + alpha * (hi.p_miss - lo.p_miss), threshold};
}

OperatingPoint compute_min_dcf(std::span<const double> scores, std::span<const int> labels, const DcfParams& params) {
  if (!(params.p_target > 0.0 && params.p_target < 1.0) || params.c_miss <= 0.0 || params.c_fa <= 0.0)
    throw Error("invalid detection cost parameters");
  const auto pts = roc_points(scores, labels);
  const double w_miss = params.c_miss * params.p_target;
  const double w_fa = params.c_fa * (1.0 - params.p_target);
  const double norm = std::min(w_miss, w_fa);
  OperatingPoint best{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& p : pts) {
    const double cost = (w_miss * p.p_miss + w_fa * p.p_fa) / norm;
    if (cost < best.value) best = {cost, p.threshold};
  }
  return best;
}

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels, const DcfParams& params) {
  Metrics m;
  const auto eer = compute_eer(scores, labels);
  const auto dcf = compute_min_dcf(scores, labels, params);
  m.eer = eer.value;
  m.eer_threshold = eer.threshold;
  m.min_dcf = dcf.value;
  m.dcf_threshold = dcf.threshold;
  for (int l : labels) (l ? m.targets : m.nontargets)++;
  return m;
}

TrialReport run_trials(const TrialList& trials, const EmbeddingMap& embeddings,
                       const std::vector<backbones::SpeakerEmbedding>* cohort, const ScoringOptions& options) {
  if (trials.empty()) throw Error("run_trials: empty trial list");
  auto lookup = [&embeddings](const std::string& id) -> const backbones::SpeakerEmbedding& {
    auto it = embeddings.find(id);
    if (it == embeddings.end()) throw Error("no embedding for utterance '" + id + "'");
    return it->second;
  };

  std::unordered_map<std::string, std::vector<double>> cohort_scores;
  auto cohort_of = [&](const std::string& id) -> const std::vector<double>& {
    auto it = cohort_scores.find(id);
    if (it != cohort_scores.end()) return it->second;
    const auto& e = lookup(id);
    std::vector<double> s;
    s.reserve(cohort->size());
    for (const auto& c : *cohort) s.push_back(cosine_score(e, c));
    return cohort_scores.emplace(id, std::move(s)).first->second;
  };

  TrialReport report;
  std::vector<double> raw, norm;
  std::vector<int> labels;
  for (const auto& t : trials) {
    ScoredTrial st{t, cosine_score(lookup(t.enroll), lookup(t.test)), std::nullopt};
    if (cohort) {
      const NormalizedScore ns = asnorm(st.raw, cohort_of(t.enroll), cohort_of(t.test), options.asnorm_k);
      report.degenerate_norms += ns.degenerate;
      st.normalized = ns.score;
      norm.push_back(ns.score);
    }
    raw.push_back(st.raw);
    labels.push_back(t.target ? 1 : 0);
    report.scores.push_back(std::move(st));
  }
  report.raw = compute_metrics(raw, labels, options.dcf);
  if (cohort) report.normalized = compute_metrics(norm, labels, options.dcf);
  return report;
}

void write_scores_csv(const std::filesystem::path& path, const TrialReport& report) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write scores: " + path.string());
  out << std::setprecision(17) << "enroll,test,raw_score,norm_score,label\n";
  for (const auto& s : report.scores) {
    out << s.trial.enroll << ',' << s.trial.test << ',' << s.raw << ',';
    if (s.normalized) out << *s.normalized;
    out << ',' << (s.trial.target ? "target" : "nontarget") << '\n';
  }
}

}  // namespace jtss::evaluation
