#include "jtss/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "jtss/checkpoint.hpp"
#include "jtss/common.hpp"
#include "jtss/synth.hpp"
#include "jtss/teacher.hpp"

namespace jtss::cli {
namespace fs = std::filesystem;

namespace {

std::string fmt(double x, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw Error(what + " path is not set");
  if (!fs::is_regular_file(p)) throw Error(what + " not found: " + p.string());
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error("cannot create directory " + p.string() + ": " + ec.message());
}

void print_report(std::ostream& out, const std::string& name, const evaluation::TrialReport& r) {
  auto row = [&](const char* col, const evaluation::Metrics& m) {
    out << name << " " << col << ": EER " << fmt(100.0 * m.eer, "%.3f") << "% minDCF " << fmt(m.min_dcf, "%.4f")
        << " (" << m.targets << " target, " << m.nontargets << " nontarget trials)\n";
  };
  row("raw", r.raw);
  if (r.normalized) {
    row("as-norm", *r.normalized);
    if (r.degenerate_norms) out << name << " as-norm: " << r.degenerate_norms << " trials fell back to raw scores\n";
  }
}

void write_metrics_csv(const fs::path& path, const evaluation::TrialReport& r) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << "column,eer_percent,min_dcf,targets,nontargets\n";
  auto row = [&](const char* col, const evaluation::Metrics& m) {
    f << col << ',' << fmt(100.0 * m.eer, "%.17g") << ',' << fmt(m.min_dcf, "%.17g") << ',' << m.targets << ','
      << m.nontargets << '\n';
  };
  row("raw", r.raw);
  if (r.normalized) row("asnorm", *r.normalized);
  if (!f) throw Error("failed writing " + path.string());
}

std::vector<backbones::SpeakerEmbedding> as_cohort(const evaluation::EmbeddingMap& m) {
  std::vector<backbones::SpeakerEmbedding> out;
  for (const auto& [id, e] : m) out.push_back(e);
  return out;
}

config::RunConfig load_config(const std::string& path) {
  if (path.empty()) return config::RunConfig{};
  return config::load(path);
}

struct TrainOutcome {
  trainer::FitResult fit;
  fs::path checkpoint;
};

TrainOutcome train_to(const config::RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  const fs::path train_manifest = effective_train_manifest(cfg);
  require_file(train_manifest, "training manifest");
  const auto data = manifest::load(train_manifest);
  make_dir(out_dir);

  trainer::FitOptions opt;
  opt.train = cfg.train;
  opt.encoder = cfg.encoder;
  opt.teacher = config::teacher_source(cfg);
  if (cfg.train.lambda == 0.0 && opt.teacher && opt.teacher->kind == teacher::SourceKind::kFileBacked &&
      !fs::is_directory(opt.teacher->root))
    opt.teacher.reset();  // baseline run; the teacher may be absent
  opt.augment = config::augment_policy(cfg);
  opt.on_epoch = [&out](const trainer::EpochRecord& e) {
    out << "epoch " << e.epoch << " lr " << fmt(e.lr, "%g") << " l_speaker " << fmt(e.l_speaker) << " l_speech "
        << fmt(e.l_speech) << " l_total " << fmt(e.l_total) << std::endl;
  };

  const uint64_t checksum_before =
      opt.teacher && opt.teacher->kind == teacher::SourceKind::kFileBacked ? teacher::checksum_features(opt.teacher->root) : 0;
  TrainOutcome r{trainer::fit(data, opt), out_dir / "checkpoint.jtck"};
  if (opt.teacher && opt.teacher->kind == teacher::SourceKind::kFileBacked &&
      teacher::checksum_features(opt.teacher->root) != checksum_before)
    throw Error("teacher features changed during training");

  const std::string echo = config::dump(cfg);
  checkpoint::save(r.checkpoint, r.fit.model, r.fit.adam, r.fit.epochs_done, r.fit.speakers, echo);
  trainer::write_metric_log(out_dir / "metrics.csv", r.fit.epochs);
  trainer::write_step_log(out_dir / "steps.csv", r.fit.steps);
  std::ofstream(out_dir / "config.json", std::ios::binary) << echo;
  return r;
}

// --- commands --------------------------------------------------------------

int cmd_gen_data(const std::string& cfg_path, const std::string& out_flag, const std::optional<uint64_t>& seed,
                 std::ostream& out) {
  auto cfg = load_config(cfg_path);
  if (seed) cfg.data.synth.seed = *seed;
  const fs::path dir = !out_flag.empty() ? fs::path(out_flag) : cfg.data.corpus_dir;
  if (dir.empty()) throw Error("gen-data needs --out or data.corpus_dir");
  const auto files = synth::generate_corpus(cfg.data.synth, dir);
  out << "wrote " << files.num_wavs << " waveforms to " << dir.string() << "\n";
  const auto all = manifest::load(files.all_manifest);
  for (const auto& cond : files.conditions) {
    std::vector<manifest::Utterance> subset;
    for (const auto& u : all.utterances)
      if (u.path.parent_path().filename() == cond) subset.push_back(u);
    out << "sanity separation (" << cond << "): " << fmt(synth::sanity_separation(subset)) << "\n";
  }
  return 0;
}

int cmd_extract_teacher(const std::string& cfg_path, const std::string& out_flag, std::ostream& out) {
  const auto cfg = load_config(cfg_path);
  const fs::path root = !out_flag.empty() ? fs::path(out_flag) : cfg.teacher.source.root;
  if (root.empty()) throw Error("extract-teacher needs --out or teacher.root");
  make_dir(root);
  std::vector<fs::path> manifests{effective_train_manifest(cfg)};
  for (const auto& s : effective_eval_sets(cfg)) manifests.push_back(s.manifest);
  std::set<std::string> done;
  for (const auto& m : manifests) {
    require_file(m, "manifest");
    for (const auto& u : manifest::load(m).utterances) {
      if (!done.insert(u.utt_id).second) continue;
      const auto seq = teacher::synthetic_teacher(audio::load_waveform(u.path), cfg.teacher.source.dim,
                                                  cfg.teacher.source.seed);
      teacher::write_jtsf(root / (u.utt_id + ".jtsf"), seq.vectors);
    }
  }
  out << "wrote " << done.size() << " teacher feature files to " << root.string() << "\n";
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(teacher::checksum_features(root)));
  out << "checksum " << hex << "\n";
  return 0;
}

int cmd_train(const std::string& cfg_path, const std::string& out_flag, const std::optional<uint64_t>& seed,
              std::ostream& out) {
  if (cfg_path.empty()) throw Error("train needs --config");
  auto cfg = load_config(cfg_path);
  if (seed) cfg.train.seed = *seed;
  const fs::path dir = !out_flag.empty() ? fs::path(out_flag) : cfg.output.dir;
  const auto r = train_to(cfg, dir, out);
  out << "checkpoint " << r.checkpoint.string() << "\n";
  return 0;
}

int cmd_extract_embeddings(const std::string& ckpt, const std::string& manifest_path, const std::string& out_flag,
                           std::ostream& out) {
  require_file(ckpt, "checkpoint");
  require_file(manifest_path, "manifest");
  if (out_flag.empty()) throw Error("extract-embeddings needs --out");
  auto ck = checkpoint::load(ckpt);
  const auto emb = extract_embeddings(ck.model, manifest::load(manifest_path));
  evaluation::write_embeddings(out_flag, emb);
  out << "wrote " << emb.size() << " embeddings to " << out_flag << "\n";
  return 0;
}

int cmd_score(const std::string& emb_path, const std::string& trials_path, const std::string& cohort_path,
              const std::string& cfg_path, const std::string& out_flag, std::ostream& out) {
  require_file(emb_path, "embeddings file");
  require_file(trials_path, "trial list");
  if (out_flag.empty()) throw Error("score needs --out");
  const auto cfg = load_config(cfg_path);
  const auto emb = evaluation::read_embeddings(emb_path);
  std::vector<backbones::SpeakerEmbedding> cohort;
  if (!cohort_path.empty()) {
    require_file(cohort_path, "cohort embeddings file");
    cohort = as_cohort(evaluation::read_embeddings(cohort_path));
  }
  const auto report = evaluation::run_trials(evaluation::read_trials(trials_path), emb,
                                             cohort_path.empty() ? nullptr : &cohort, config::scoring_options(cfg));
  evaluation::write_scores_csv(out_flag, report);
  print_report(out, "scores", report);
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& manifest_path, const std::string& trials_path,
                 const std::string& cohort_path, const std::string& cfg_path, const std::string& out_flag,
                 std::ostream& out) {
  require_file(ckpt, "checkpoint");
  require_file(manifest_path, "manifest");
  require_file(trials_path, "trial list");
  if (!cohort_path.empty()) require_file(cohort_path, "cohort manifest");
  const auto cfg = load_config(cfg_path);
  auto ck = checkpoint::load(ckpt);
  const auto emb = extract_embeddings(ck.model, manifest::load(manifest_path));
  std::vector<backbones::SpeakerEmbedding> cohort;
  if (!cohort_path.empty()) cohort = as_cohort(extract_embeddings(ck.model, manifest::load(cohort_path)));
  const auto report = evaluation::run_trials(evaluation::read_trials(trials_path), emb,
                                             cohort_path.empty() ? nullptr : &cohort, config::scoring_options(cfg));
  print_report(out, fs::path(trials_path).stem().string(), report);
  if (!out_flag.empty()) {
    make_dir(out_flag);
    evaluation::write_scores_csv(fs::path(out_flag) / "scores.csv", report);
    write_metrics_csv(fs::path(out_flag) / "metrics.csv", report);
  }
  return 0;
}

int cmd_ablate(const std::string& cfg_path, const std::string& sweep_text, const std::string& out_flag,
               const std::optional<uint64_t>& seed, std::ostream& out) {
  if (cfg_path.empty()) throw Error("ablate needs --config");
  if (sweep_text.empty()) throw Error("ablate needs --sweep");
  auto base = load_config(cfg_path);
  if (seed) base.train.seed = *seed;
  const Sweep sweep = parse_sweep(sweep_text);
  const auto sets = effective_eval_sets(base);
  if (sets.empty()) throw Error("ablate needs at least one evaluation set");
  const fs::path dir = !out_flag.empty() ? fs::path(out_flag) : base.output.dir;
  make_dir(dir);

  const fs::path csv_path = dir / "ablation.csv";
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw Error("cannot write " + csv_path.string());
  csv << "setting";
  for (const auto& s : sets) csv << ",eer_" << s.name << ",min_dcf_" << s.name;
  csv << "\n" << std::flush;

  for (double v : sweep.values) {
    config::RunConfig cfg = base;
    std::string label;
    if (sweep.parameter == "lambda") {
      cfg.train.lambda = v;
      label = "lambda=" + fmt(v, "%g");
    } else {
      cfg.train.tap_layer = static_cast<int>(v);
      cfg.encoder.tap_layer = cfg.train.tap_layer;
      label = "tap_layer=" + std::to_string(cfg.train.tap_layer);
    }
    config::validate(cfg);
    out << "== " << label << "\n";
    auto r = train_to(cfg, dir / label, out);
    const auto reports = evaluate_sets(r.fit.model, cfg);
    csv << label;
    for (const auto& rep : reports) {
      const auto& m = rep.report.normalized ? *rep.report.normalized : rep.report.raw;
      csv << ',' << fmt(m.eer, "%.17g") << ',' << fmt(m.min_dcf, "%.17g");
      print_report(out, rep.name, rep.report);
      evaluation::write_scores_csv(dir / label / ("scores_" + rep.name + ".csv"), rep.report);
    }
    csv << "\n" << std::flush;
  }
  out << "wrote " << csv_path.string() << "\n";
  return 0;
}

int cmd_dump_config(const std::string& cfg_path, const std::string& out_flag, std::ostream& out) {
  const std::string text = config::dump(load_config(cfg_path));
  if (out_flag.empty()) {
    out << text;
  } else {
    std::ofstream f(out_flag, std::ios::binary);
    if (!f) throw Error("cannot write " + out_flag);
    f << text;
  }
  return 0;
}

}  // namespace

evaluation::EmbeddingMap extract_embeddings(trainer::Model& model, const manifest::Manifest& data) {
  evaluation::EmbeddingMap out;
  for (const auto& u : data.utterances) {
    const auto w = audio::load_waveform(u.path);
    if (w.samples.size() < static_cast<std::size_t>(audio::kFrameLength))
      throw Error("utterance " + u.utt_id + " is shorter than one analysis frame");
    const auto feats = trainer::input_features(w, model.encoder_config.num_mels);
    if (feats.num_frames() < model.encoder->min_input_frames())
      throw Error("utterance " + u.utt_id + " is too short for the encoder context");
    out[u.utt_id] = backbones::encoder_forward(*model.encoder, feats, u.utt_id).second;
  }
  return out;
}

std::filesystem::path effective_train_manifest(const config::RunConfig& cfg) {
  if (!cfg.data.train_manifest.empty()) return cfg.data.train_manifest;
  if (!cfg.data.corpus_dir.empty()) return cfg.data.corpus_dir / "train.jsonl";
  return {};
}

std::vector<config::EvalSet> effective_eval_sets(const config::RunConfig& cfg) {
  if (!cfg.evaluation.sets.empty() || cfg.data.corpus_dir.empty()) return cfg.evaluation.sets;
  std::vector<config::EvalSet> sets;
  for (const auto& c : cfg.data.synth.conditions)
    sets.push_back({c, cfg.data.corpus_dir / ("eval_" + c + ".jsonl"), cfg.data.corpus_dir / ("trials_" + c + ".txt")});
  return sets;
}

std::vector<SetReport> evaluate_sets(trainer::Model& model, const config::RunConfig& cfg) {
  std::vector<backbones::SpeakerEmbedding> cohort;
  const bool use_cohort = !cfg.evaluation.cohort_manifest.empty();
  if (use_cohort) {
    require_file(cfg.evaluation.cohort_manifest, "cohort manifest");
    cohort = as_cohort(extract_embeddings(model, manifest::load(cfg.evaluation.cohort_manifest)));
  }
  std::vector<SetReport> out;
  for (const auto& s : effective_eval_sets(cfg)) {
    require_file(s.manifest, "evaluation manifest for set '" + s.name + "'");
    require_file(s.trials, "trial list for set '" + s.name + "'");
    const auto emb = extract_embeddings(model, manifest::load(s.manifest));
    out.push_back({s.name, evaluation::run_trials(evaluation::read_trials(s.trials), emb,
                                                  use_cohort ? &cohort : nullptr, config::scoring_options(cfg))});
  }
  return out;
}

Sweep parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw Error("sweep must look like lambda=0,0.1 or tap_layer=0,1");
  Sweep s;
  s.parameter = text.substr(0, eq);
  if (s.parameter != "lambda" && s.parameter != "tap_layer")
    throw Error("unknown sweep parameter '" + s.parameter + "' (expected lambda or tap_layer)");
  std::stringstream ss(text.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !std::isfinite(v)) throw Error("bad sweep value '" + item + "'");
    if (s.parameter == "tap_layer" && (v != std::floor(v) || v < 0 || v >= backbones::kNumTapLayers))
      throw Error("tap_layer sweep values must be integers in 0..4");
    if (s.parameter == "lambda" && v < 0.0) throw Error("lambda sweep values must be >= 0");
    s.values.push_back(v);
  }
  if (s.values.empty()) throw Error("empty sweep list");
  std::sort(s.values.begin(), s.values.end());
  if (std::adjacent_find(s.values.begin(), s.values.end()) != s.values.end()) throw Error("duplicate sweep value");
  return s;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint speech and speaker training toolkit"};
  app.require_subcommand(1);
  std::string cfg_path, out_flag, trials, cohort, sweep, ckpt, manifest_path, emb_path;
  std::optional<uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  auto* teach = app.add_subcommand("extract-teacher", "Write synthetic teacher features (JTSF files)");
  auto* train = app.add_subcommand("train", "Train a model");
  auto* extract = app.add_subcommand("extract-embeddings", "Embed every utterance of a manifest");
  auto* score = app.add_subcommand("score", "Score a trial list from stored embeddings");
  auto* eval = app.add_subcommand("evaluate", "Embed, score and report EER / minDCF");
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate once per sweep setting");
  auto* dump = app.add_subcommand("dump-config", "Print the effective configuration");

  for (auto* c : {gen, teach, train, ablate, dump}) c->add_option("--config", cfg_path, "Run configuration (JSON)");
  for (auto* c : {score, eval}) c->add_option("--config", cfg_path, "Run configuration for scoring settings");
  for (auto* c : {gen, teach, train, extract, score, eval, ablate, dump}) c->add_option("--out", out_flag, "Output path");
  for (auto* c : {gen, train, ablate}) c->add_option("--seed", seed, "Override the seed");
  for (auto* c : {score, eval}) {
    c->add_option("--trials", trials, "Trial list")->required();
    c->add_option("--cohort", cohort, "Cohort for AS-norm");
  }
  ablate->add_option("--sweep", sweep, "lambda=v1,v2,... or tap_layer=l1,l2,...")->required();
  for (auto* c : {extract, eval}) {
    c->add_option("checkpoint", ckpt, "Checkpoint file")->required();
    c->add_option("manifest", manifest_path, "Manifest (JSON lines)")->required();
  }
  score->add_option("embeddings", emb_path, "Embeddings file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) return cmd_gen_data(cfg_path, out_flag, seed, out);
    if (*teach) return cmd_extract_teacher(cfg_path, out_flag, out);
    if (*train) return cmd_train(cfg_path, out_flag, seed, out);
    if (*extract) return cmd_extract_embeddings(ckpt, manifest_path, out_flag, out);
    if (*score) return cmd_score(emb_path, trials, cohort, cfg_path, out_flag, out);
    if (*eval) return cmd_evaluate(ckpt, manifest_path, trials, cohort, cfg_path, out_flag, out);
    if (*ablate) return cmd_ablate(cfg_path, sweep, out_flag, seed, out);
    if (*dump) return cmd_dump_config(cfg_path, out_flag, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace jtss::cli
