#include "jtss/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "jtss/common.hpp"

namespace jtss::trainer {
namespace {

// Independent seed streams.
enum Stream : uint64_t { kEncoderStream = 1, kProjectionStream, kClassifierStream, kOrderStream, kCropStream, kAugmentStream };

double squared_norm(const nn::Tensor& t) {
  double s = 0.0;
  for (double x : t.data) s += x * x;
  return s;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw Error("train.lr must be > 0");
  if (cfg.scheduler != "step") throw Error("train.scheduler must be \"step\"");
  if (cfg.step_epochs < 1) throw Error("train.step_epochs must be >= 1");
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw Error("train.gamma must satisfy 0 < gamma <= 1");
  if (cfg.epochs < 0) throw Error("train.epochs must be >= 0");
  if (cfg.batch_size < 1) throw Error("train.batch_size must be >= 1");
  if (!(cfg.crop_seconds > 0.0)) throw Error("train.crop_seconds must be > 0");
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda)) throw Error("train.lambda must be finite and >= 0");
  if (cfg.tap_layer < 0 || cfg.tap_layer >= backbones::kNumTapLayers) throw Error("train.tap_layer must be in 0..4");
  if (!(cfg.margin >= 0.0) || !(cfg.scale > 0.0)) throw Error("train.margin must be >= 0 and train.scale > 0");
  if (!std::isfinite(cfg.clip_norm)) throw Error("train.clip_norm must be finite");
  if (!(cfg.augment_prob >= 0.0 && cfg.augment_prob <= 1.0)) throw Error("train.augment_prob must be in [0, 1]");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw Error("lr_at: negative epoch");
  return cfg.lr * std::pow(cfg.gamma, epoch / cfg.step_epochs);
}

std::size_t crop_samples(double crop_seconds) {
  if (!(crop_seconds > 0.0)) throw Error("crop length must be positive");
  return static_cast<std::size_t>(std::llround(crop_seconds * kSampleRate));
}

std::size_t crop_offset(std::size_t n, std::size_t crop_len, uint64_t seed) {
  if (n <= crop_len) return 0;
  const std::size_t slots = (n - crop_len) / teacher::kHopSamples;
  std::mt19937_64 rng(seed);
  return std::uniform_int_distribution<std::size_t>(0, slots)(rng) * teacher::kHopSamples;
}

audio::Waveform sample_crop(const audio::Waveform& w, double crop_seconds, uint64_t seed) {
  if (w.samples.empty()) throw Error("sample_crop: empty waveform");
  const std::size_t len = crop_samples(crop_seconds);
  const std::size_t n = w.samples.size();
  const std::size_t off = crop_offset(n, len, seed);
  audio::Waveform out;
  out.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i) out.samples[i] = w.samples[(off + i) % n];
  return out;
}

audio::FeatureMatrix input_features(const audio::Waveform& w, int num_mels) {
  audio::FeatureMatrix f = audio::compute_fbank(w, num_mels);
  const std::size_t t = f.num_frames();
  for (int m = 0; m < num_mels; ++m) {
    double mean = 0.0;
    for (std::size_t i = 0; i < t; ++i) mean += f.frames(i, m);
    mean /= static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i) f.frames(i, m) -= mean;
  }
  return f;
}

std::string to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kProjection: return "projection";
    case ParamGroup::kClassifier: return "classifier";
  }
  return "?";
}

std::vector<RegisteredParam> Model::registry() const {
  std::vector<RegisteredParam> out;
  for (const auto& p : encoder->parameters()) out.push_back({ParamGroup::kEncoder, p.name, p.var});
  if (proj_weight) {
    out.push_back({ParamGroup::kProjection, "projection.weight", proj_weight});
    out.push_back({ParamGroup::kProjection, "projection.bias", proj_bias});
  }
  out.push_back({ParamGroup::kClassifier, "classifier.weight", class_weights});
  return out;
}

Model make_model(const backbones::EncoderConfig& enc, int num_classes, int teacher_dim, double margin, double scale,
                 uint64_t seed) {
  if (num_classes < 1) throw Error("model needs at least one speaker class");
  if (teacher_dim < 0) throw Error("teacher dimension must be >= 0");
  Model m;
  m.encoder_config = enc;
  m.encoder = backbones::make_encoder(enc, mix_seed(seed, kEncoderStream));
  m.aam = {margin, scale, num_classes};
  losses::validate(m.aam);
  m.teacher_dim = teacher_dim;

  const int d = m.encoder->tap_channels(enc.tap_layer);
  if (teacher_dim > 0 && teacher_dim != d) {
    std::mt19937_64 rng(mix_seed(seed, kProjectionStream));
    m.proj_weight = nn::parameter(nn::uniform_fan_in(teacher_dim, d, 1, rng));
    m.proj_bias = nn::parameter(nn::uniform_bias(teacher_dim, d, rng));
  }

  std::mt19937_64 rng(mix_seed(seed, kClassifierStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::Tensor w(num_classes, enc.embed_dim, 1);
  for (int j = 0; j < num_classes; ++j) {
    double n2 = 0.0;
    double* row = w.row(j, 0);
    for (int c = 0; c < enc.embed_dim; ++c) {
      row[c] = normal(rng);
      n2 += row[c] * row[c];
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (int c = 0; c < enc.embed_dim; ++c) row[c] *= inv;
  }
  m.class_weights = nn::parameter(std::move(w));
  return m;
}

AdamState make_adam(const Model& model) {
  AdamState s;
  for (const auto& p : model.registry()) {
    s.m.emplace_back(p.var->value.size(), 0.0);
    s.v.emplace_back(p.var->value.size(), 0.0);
  }
  return s;
}

void adam_step(Model& model, AdamState& state, double lr, double grad_scale) {
  const auto reg = model.registry();
  if (state.m.size() != reg.size()) throw Error("optimizer state does not match the model");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < reg.size(); ++i) {
    nn::Node& node = *reg[i].var;
    if (node.grad.empty()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < node.value.size(); ++k) {
      const double g = node.grad.data[k] * grad_scale;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      node.value.data[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + state.eps);
    }
    node.grad = nn::Tensor();
  }
}

StepMetrics train_step(Model& model, AdamState& adam, const Batch& batch, double lr, const TrainConfig& cfg) {
  const int b = batch.features.b;
  if (b < 1 || static_cast<int>(batch.labels.size()) != b) throw Error("train_step: one label per utterance");
  const bool have_teacher = !batch.teacher.empty();
  if (cfg.lambda > 0.0 && !have_teacher) throw Error("train_step: missing teacher features with lambda > 0");
  if (have_teacher && static_cast<int>(batch.teacher.size()) != b)
    throw Error("train_step: one teacher sequence per utterance");
  if (have_teacher && !model.has_speech_branch()) throw Error("train_step: model was built without a speech branch");

  auto feats = nn::constant(batch.features);
  const auto res = model.encoder->forward(feats, true, cfg.tap_layer);
  const nn::Var spk = losses::aam_loss_node(res.embedding, model.class_weights, batch.labels, model.aam);

  StepMetrics out;
  nn::Var speech;
  if (have_teacher) {
    const std::size_t t_teacher = batch.teacher[0].rows();
    for (const auto& v : batch.teacher) {
      if (v.rows() != t_teacher) throw Error("train_step: teacher sequences differ in length");
      if (static_cast<int>(v.cols()) != model.teacher_dim)
        throw Error("train_step: teacher dimension " + std::to_string(v.cols()) + " does not match model D~ " +
                    std::to_string(model.teacher_dim));
    }
    nn::Var z = nn::max_pool_time(res.tap, static_cast<int>(t_teacher));
    if (model.has_projection()) z = nn::conv1d(z, model.proj_weight, model.proj_bias, 1, 0);
    speech = losses::speech_loss_node(z, batch.teacher, &out.skipped_frames);
    out.l_speech = speech->value.data[0];
  }
  out.l_speaker = spk->value.data[0];
  out.l_total = out.l_speaker + cfg.lambda * out.l_speech;
  if (!std::isfinite(out.l_total)) {
    std::ostringstream msg;
    msg << "non-finite loss: l_speaker=" << out.l_speaker << " l_speech=" << out.l_speech << " lambda=" << cfg.lambda
        << " lr=" << lr << " step=" << adam.step;
    throw Error(msg.str());
  }

  nn::Var root = spk;
  if (cfg.lambda > 0.0) {
    const double lambda = cfg.lambda;
    root = nn::make_node(nn::Tensor(1, 1, 1, out.l_total), {spk, speech}, [spk, speech, lambda](nn::Node& self) {
      const double g = self.grad.data[0];
      spk->grad_buffer().data[0] += g;
      speech->grad_buffer().data[0] += lambda * g;
    });
  }
  nn::backward(root);

  double n2 = 0.0;
  for (const auto& p : model.registry())
    if (!p.var->grad.empty()) n2 += squared_norm(p.var->grad);
  out.grad_norm = std::sqrt(n2);
  if (!std::isfinite(out.grad_norm)) throw Error("non-finite gradient norm at step " + std::to_string(adam.step));
  double scale = 1.0;
  if (cfg.clip_norm > 0.0 && out.grad_norm > cfg.clip_norm) {
    scale = cfg.clip_norm / out.grad_norm;
    out.clipped = true;
  }
  adam_step(model, adam, lr, scale);
  return out;
}

FitResult fit(const manifest::Manifest& data, const FitOptions& options) {
  const TrainConfig& cfg = options.train;
  validate(cfg);
  if (data.utterances.empty()) throw Error("fit: empty manifest");
  const int num_classes = static_cast<int>(data.speakers.size());
  for (const auto& u : data.utterances)
    if (u.label < 0 || u.label >= num_classes)
      throw Error("fit: utterance " + u.utt_id + " has label " + std::to_string(u.label) +
                  " outside 0.." + std::to_string(num_classes - 1) + " (label gap)");
  if (cfg.lambda > 0.0 && !options.teacher) throw Error("fit: lambda > 0 requires a teacher source");
  if (options.teacher) teacher::validate(*options.teacher);
  if (options.augment) audio::validate(*options.augment);

  backbones::EncoderConfig enc = options.encoder;
  enc.tap_layer = cfg.tap_layer;
  backbones::validate(enc);

  FitResult r{make_model(enc, num_classes, options.teacher ? options.teacher->dim : 0, cfg.margin, cfg.scale,
                         cfg.seed),
              {}, 0, {}, {}, data.speakers};
  r.adam = make_adam(r.model);

  const std::size_t crop_len = crop_samples(cfg.crop_seconds);
  const std::size_t n_frames = audio::num_fbank_frames(crop_len);
  if (n_frames < r.model.encoder->min_input_frames())
    throw Error("fit: crops of " + std::to_string(crop_len) + " samples give too few frames for the encoder");
  const std::size_t t_teacher = options.teacher ? teacher::teacher_frames(crop_len) : 0;
  if (options.teacher && r.model.encoder->tap_frames(n_frames, cfg.tap_layer) < t_teacher)
    throw Error("fit: tap layer " + std::to_string(cfg.tap_layer) + " yields fewer frames than the teacher");

  const std::size_t n = data.utterances.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  int global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 order_rng(mix_seed(cfg.seed, kOrderStream, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), order_rng);

    EpochRecord er{epoch, lr, 0.0, 0.0, 0.0};
    int steps = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      std::vector<audio::FeatureMatrix> feats;
      Batch batch;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& u = data.utterances[order[i]];
        const uint64_t key = static_cast<uint64_t>(epoch) * 0x100000000ULL + order[i];
        const audio::Waveform full = audio::load_waveform(u.path);
        if (full.samples.empty()) throw Error("fit: empty waveform " + u.path.string());
        const uint64_t crop_seed = mix_seed(cfg.seed, kCropStream, key);
        const std::size_t offset = crop_offset(full.samples.size(), crop_len, crop_seed);
        const audio::Waveform crop = sample_crop(full, cfg.crop_seconds, crop_seed);

        audio::Waveform student = crop;
        if (options.augment && cfg.augment_prob > 0.0) {
          std::mt19937_64 arng(mix_seed(cfg.seed, kAugmentStream, key));
          if (std::uniform_real_distribution<double>(0.0, 1.0)(arng) < cfg.augment_prob) {
            audio::AugmentPolicy p = *options.augment;
            p.seed = mix_seed(options.augment->seed, arng());
            student = audio::augment(crop, p);
          }
        }
        feats.push_back(input_features(student, enc.num_mels));
        batch.labels.push_back(u.label);

        if (options.teacher) {
          const auto& src = *options.teacher;
          if (src.kind == teacher::SourceKind::kSynthetic) {
            batch.teacher.push_back(teacher::synthetic_teacher(crop, src.dim, src.seed).vectors);
          } else {
            const auto seq = teacher::load_teacher(src, u.utt_id);
            batch.teacher.push_back(teacher::slice_frames(seq, offset / teacher::kHopSamples, t_teacher));
          }
        }
      }
      std::vector<const audio::FeatureMatrix*> ptrs;
      for (const auto& f : feats) ptrs.push_back(&f);
      batch.features = backbones::features_to_tensor(ptrs);

      const StepMetrics m = train_step(r.model, r.adam, batch, lr, cfg);
      r.steps.push_back({epoch, global_step++, lr, m});
      er.l_speaker += m.l_speaker;
      er.l_speech += m.l_speech;
      er.l_total += m.l_total;
      ++steps;
    }
    er.l_speaker /= steps;
    er.l_speech /= steps;
    er.l_total /= steps;
    r.epochs.push_back(er);
    r.epochs_done = epoch + 1;
    if (options.on_epoch) options.on_epoch(er);
  }
  return r;
}

void write_metric_log(const std::filesystem::path& path, const std::vector<EpochRecord>& epochs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write metric log " + path.string());
  out << "epoch,lr,l_speaker,l_speech,l_total\n";
  for (const auto& e : epochs)
    out << e.epoch << ',' << fmt(e.lr) << ',' << fmt(e.l_speaker) << ',' << fmt(e.l_speech) << ','
        << fmt(e.l_total) << '\n';
  if (!out) throw Error("failed writing metric log " + path.string());
}

void write_step_log(const std::filesystem::path& path, const std::vector<StepRecord>& steps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write step log " + path.string());
  out << "epoch,step,lr,l_speaker,l_speech,l_total,grad_norm,clipped\n";
  for (const auto& s : steps)
    out << s.epoch << ',' << s.step << ',' << fmt(s.lr) << ',' << fmt(s.metrics.l_speaker) << ','
        << fmt(s.metrics.l_speech) << ',' << fmt(s.metrics.l_total) << ',' << fmt(s.metrics.grad_norm) << ','
        << (s.metrics.clipped ? 1 : 0) << '\n';
  if (!out) throw Error("failed writing step log " + path.string());
}

}  // namespace jtss::trainer
