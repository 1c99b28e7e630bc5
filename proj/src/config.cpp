#include "jtss/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "jtss/common.hpp"

namespace jtss::config {
namespace {

using nlohmann::json;

/// Reads keys of one JSON object, rejecting any key that is never asked for.
class Section {
 public:
  Section(const json& j, std::string name, const std::filesystem::path& base)
      : j_(j), name_(std::move(name)), base_(base) {
    if (!j_.is_object()) throw Error("config: section '" + name_ + "' must be an object");
  }
  ~Section() = default;

  template <class T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error("config: " + name_ + "." + key + " has the wrong type");
    }
  }
  void path(const char* key, std::filesystem::path& dst) {
    std::string s;
    get(key, s);
    if (!j_.contains(key)) return;
    dst = resolve(s);
  }
  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), name_ + "." + key, base_);
  }
  std::filesystem::path resolve(const std::string& s) const {
    if (s.empty()) return {};
    std::filesystem::path p(s);
    if (p.is_relative() && !base_.empty()) p = base_ / p;
    return p.lexically_normal();
  }
  /// Throws on keys that were never requested.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error("config: unknown key '" + name_ + "." + it.key() + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::filesystem::path base_;
  std::set<std::string> seen_;
};

void parse_encoder(Section s, backbones::EncoderConfig& e) {
  std::string arch = backbones::to_string(e.arch);
  s.get("arch", arch);
  e.arch = backbones::arch_from_string(arch);
  s.get("channels", e.channels);
  s.get("embed_dim", e.embed_dim);
  s.get("num_mels", e.num_mels);
  s.finish();
}

void parse_train(Section s, trainer::TrainConfig& t) {
  s.get("lr", t.lr);
  s.get("scheduler", t.scheduler);
  s.get("step_epochs", t.step_epochs);
  s.get("gamma", t.gamma);
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("crop_seconds", t.crop_seconds);
  s.get("lambda", t.lambda);
  s.get("tap_layer", t.tap_layer);
  s.get("seed", t.seed);
  s.get("margin", t.margin);
  s.get("scale", t.scale);
  s.get("clip_norm", t.clip_norm);
  s.get("augment_prob", t.augment_prob);
  s.finish();
}

void parse_teacher(Section s, TeacherConfig& t) {
  std::string kind = t.enabled ? teacher::to_string(t.source.kind) : "none";
  s.get("kind", kind);
  if (kind == "none") {
    t.enabled = false;
  } else {
    t.enabled = true;
    t.source.kind = teacher::source_kind_from_string(kind);
  }
  s.path("root", t.source.root);
  s.get("seed", t.source.seed);
  s.get("dim", t.source.dim);
  s.finish();
}

void parse_augment(Section s, AugmentConfig& a) {
  if (s.has("kinds")) {
    std::vector<std::string> kinds;
    s.get("kinds", kinds);
    a.kinds.clear();
    for (const auto& k : kinds) a.kinds.push_back(audio::augment_kind_from_string(k));
  }
  s.get("snr_low_db", a.snr_low_db);
  s.get("snr_high_db", a.snr_high_db);
  s.get("seed", a.seed);
  s.path("rir_dir", a.rir_dir);
  s.path("noise_dir", a.noise_dir);
  s.path("music_dir", a.music_dir);
  s.path("babble_dir", a.babble_dir);
  s.finish();
}

void parse_data(Section s, DataConfig& d) {
  s.path("train_manifest", d.train_manifest);
  s.path("corpus_dir", d.corpus_dir);
  if (s.has("synth")) {
    Section y = s.sub("synth");
    y.get("n_speakers", d.synth.n_speakers);
    y.get("utts_per_speaker", d.synth.utts_per_speaker);
    y.get("utt_seconds", d.synth.utt_seconds);
    y.get("seed", d.synth.seed);
    y.get("conditions", d.synth.conditions);
    y.get("eval_utts_per_speaker", d.synth.eval_utts_per_speaker);
    y.get("farfield_snr_low_db", d.synth.farfield_snr_low_db);
    y.get("farfield_snr_high_db", d.synth.farfield_snr_high_db);
    y.finish();
  }
  s.finish();
}

void parse_evaluation(Section s, EvaluationConfig& e) {
  if (s.has("sets")) {
    const json& arr = s.raw("sets");
    if (!arr.is_array()) throw Error("config: evaluation.sets must be an array");
    e.sets.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section item(arr[i], "evaluation.sets[" + std::to_string(i) + "]", {});
      EvalSet set;
      item.get("name", set.name);
      std::string manifest, trials;
      item.get("manifest", manifest);
      item.get("trials", trials);
      item.finish();
      set.manifest = s.resolve(manifest);
      set.trials = s.resolve(trials);
      e.sets.push_back(std::move(set));
    }
  }
  s.path("cohort_manifest", e.cohort_manifest);
  s.get("asnorm_k", e.asnorm_k);
  s.get("p_target", e.p_target);
  s.get("c_miss", e.c_miss);
  s.get("c_fa", e.c_fa);
  s.finish();
}

std::vector<audio::Waveform> load_dir(const std::filesystem::path& dir) {
  std::vector<audio::Waveform> out;
  if (dir.empty()) return out;
  if (!std::filesystem::is_directory(dir)) throw Error("augmentation directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no .wav files in augmentation directory " + dir.string());
  for (const auto& f : files) out.push_back(audio::load_waveform(f));
  return out;
}

}  // namespace

RunConfig parse(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("config: invalid JSON: " + std::string(e.what()));
  }
  RunConfig cfg;
  Section root(j, "config", base_dir);
  if (root.has("encoder")) parse_encoder(root.sub("encoder"), cfg.encoder);
  if (root.has("train")) parse_train(root.sub("train"), cfg.train);
  if (root.has("teacher")) parse_teacher(root.sub("teacher"), cfg.teacher);
  if (root.has("augment")) parse_augment(root.sub("augment"), cfg.augment);
  if (root.has("data")) parse_data(root.sub("data"), cfg.data);
  if (root.has("evaluation")) parse_evaluation(root.sub("evaluation"), cfg.evaluation);
  if (root.has("output")) {
    Section o = root.sub("output");
    o.path("dir", cfg.output.dir);
    o.finish();
  }
  root.finish();
  cfg.encoder.tap_layer = cfg.train.tap_layer;
  validate(cfg);
  return cfg;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto base = std::filesystem::absolute(path).parent_path();
  return parse(ss.str(), base);
}

std::string dump(const RunConfig& cfg) {
  std::vector<std::string> kinds;
  for (auto k : cfg.augment.kinds) kinds.push_back(audio::to_string(k));
  json sets = json::array();
  for (const auto& s : cfg.evaluation.sets)
    sets.push_back({{"name", s.name}, {"manifest", s.manifest.string()}, {"trials", s.trials.string()}});
  const auto& t = cfg.train;
  const auto& y = cfg.data.synth;
  json j = {
      {"encoder",
       {{"arch", backbones::to_string(cfg.encoder.arch)},
        {"channels", cfg.encoder.channels},
        {"embed_dim", cfg.encoder.embed_dim},
        {"num_mels", cfg.encoder.num_mels}}},
      {"train",
       {{"lr", t.lr},
        {"scheduler", t.scheduler},
        {"step_epochs", t.step_epochs},
        {"gamma", t.gamma},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"crop_seconds", t.crop_seconds},
        {"lambda", t.lambda},
        {"tap_layer", t.tap_layer},
        {"seed", t.seed},
        {"margin", t.margin},
        {"scale", t.scale},
        {"clip_norm", t.clip_norm},
        {"augment_prob", t.augment_prob}}},
      {"teacher",
       {{"kind", cfg.teacher.enabled ? teacher::to_string(cfg.teacher.source.kind) : "none"},
        {"root", cfg.teacher.source.root.string()},
        {"seed", cfg.teacher.source.seed},
        {"dim", cfg.teacher.source.dim}}},
      {"augment",
       {{"kinds", kinds},
        {"snr_low_db", cfg.augment.snr_low_db},
        {"snr_high_db", cfg.augment.snr_high_db},
        {"seed", cfg.augment.seed},
        {"rir_dir", cfg.augment.rir_dir.string()},
        {"noise_dir", cfg.augment.noise_dir.string()},
        {"music_dir", cfg.augment.music_dir.string()},
        {"babble_dir", cfg.augment.babble_dir.string()}}},
      {"data",
       {{"train_manifest", cfg.data.train_manifest.string()},
        {"corpus_dir", cfg.data.corpus_dir.string()},
        {"synth",
         {{"n_speakers", y.n_speakers},
          {"utts_per_speaker", y.utts_per_speaker},
          {"utt_seconds", y.utt_seconds},
          {"seed", y.seed},
          {"conditions", y.conditions},
          {"eval_utts_per_speaker", y.eval_utts_per_speaker},
          {"farfield_snr_low_db", y.farfield_snr_low_db},
          {"farfield_snr_high_db", y.farfield_snr_high_db}}}}},
      {"evaluation",
       {{"sets", sets},
        {"cohort_manifest", cfg.evaluation.cohort_manifest.string()},
        {"asnorm_k", cfg.evaluation.asnorm_k},
        {"p_target", cfg.evaluation.p_target},
        {"c_miss", cfg.evaluation.c_miss},
        {"c_fa", cfg.evaluation.c_fa}}},
      {"output", {{"dir", cfg.output.dir.string()}}}};
  return j.dump(2) + "\n";
}

void validate(const RunConfig& cfg) {
  backbones::validate(cfg.encoder);
  trainer::validate(cfg.train);
  if (cfg.teacher.enabled) teacher::validate(cfg.teacher.source);
  if (cfg.train.lambda > 0.0 && !cfg.teacher.enabled)
    throw Error("config: train.lambda > 0 requires a teacher (teacher.kind is \"none\")");
  if (cfg.augment.snr_low_db > cfg.augment.snr_high_db) throw Error("config: augment.snr_low_db > augment.snr_high_db");
  synth::validate(cfg.data.synth);
  if (cfg.evaluation.asnorm_k < 2) throw Error("config: evaluation.asnorm_k must be >= 2");
  if (!(cfg.evaluation.p_target > 0.0 && cfg.evaluation.p_target < 1.0))
    throw Error("config: evaluation.p_target must be in (0, 1)");
  if (!(cfg.evaluation.c_miss > 0.0 && cfg.evaluation.c_fa > 0.0)) throw Error("config: DCF costs must be > 0");
  std::set<std::string> names;
  for (const auto& s : cfg.evaluation.sets) {
    if (s.name.empty()) throw Error("config: evaluation set without a name");
    if (!names.insert(s.name).second) throw Error("config: duplicate evaluation set '" + s.name + "'");
  }
}

std::optional<teacher::TeacherSource> teacher_source(const RunConfig& cfg) {
  if (!cfg.teacher.enabled) return std::nullopt;
  return cfg.teacher.source;
}

std::optional<audio::AugmentPolicy> augment_policy(const RunConfig& cfg) {
  if (cfg.augment.kinds.empty()) return std::nullopt;
  audio::AugmentPolicy p;
  p.kinds = cfg.augment.kinds;
  p.snr_low_db = cfg.augment.snr_low_db;
  p.snr_high_db = cfg.augment.snr_high_db;
  p.seed = cfg.augment.seed;
  p.rir_pool = load_dir(cfg.augment.rir_dir);
  auto noise = load_dir(cfg.augment.noise_dir);
  auto music = load_dir(cfg.augment.music_dir);
  auto babble = load_dir(cfg.augment.babble_dir);
  if (!noise.empty()) p.noise_pool[audio::AugmentKind::kNoise] = std::move(noise);
  if (!music.empty()) p.noise_pool[audio::AugmentKind::kMusic] = std::move(music);
  if (!babble.empty()) p.noise_pool[audio::AugmentKind::kBabble] = std::move(babble);
  audio::validate(p);
  return p;
}

evaluation::ScoringOptions scoring_options(const RunConfig& cfg) {
  evaluation::ScoringOptions o;
  o.asnorm_k = cfg.evaluation.asnorm_k;
  o.dcf = {cfg.evaluation.p_target, cfg.evaluation.c_miss, cfg.evaluation.c_fa};
  return o;
}

}  // namespace jtss::config
