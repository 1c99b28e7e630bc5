#pragma once
// Joint training loop: 2 s crops, encoder forward with a frame-level tap,
// alignment to the frozen teacher, L = L_speaker + lambda * L_speech, Adam with
// a step learning-rate schedule.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "jtss/audio.hpp"
#include "jtss/backbones.hpp"
#include "jtss/losses.hpp"
#include "jtss/manifest.hpp"
#include "jtss/nn.hpp"
#include "jtss/teacher.hpp"

namespace jtss::trainer {

struct TrainConfig {
  double lr = 0.001;
  std::string scheduler = "step";
  int step_epochs = 10;
  double gamma = 0.5;
  int epochs = 80;
  int batch_size = 100;
  double crop_seconds = 2.0;
  double lambda = 0.1;
  int tap_layer = 0;
  uint64_t seed = 0;
  double margin = 0.2;
  double scale = 30.0;
  double clip_norm = 5.0;  // <= 0 disables clipping
  /// Fraction of crops passed through the augmentation policy (when one is given).
  double augment_prob = 0.0;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& cfg);

/// lr * gamma^floor(epoch / step_epochs)
double lr_at(int epoch, const TrainConfig& cfg);

/// round(crop_seconds * 16000)
std::size_t crop_samples(double crop_seconds);

/// Offset of a crop of crop_len samples from an n-sample waveform: a seeded
/// multiple of the teacher hop, or 0 when the waveform is not longer than the crop.
std::size_t crop_offset(std::size_t n, std::size_t crop_len, uint64_t seed);

/// Exactly crop_samples(crop_seconds) samples starting at crop_offset; shorter
/// inputs wrap around.
audio::Waveform sample_crop(const audio::Waveform& w, double crop_seconds, uint64_t seed);

/// Encoder input: log Mel filterbank with the per-utterance mean of each band removed.
audio::FeatureMatrix input_features(const audio::Waveform& w, int num_mels);

// ---------------------------------------------------------------------------
// Model and parameter registry

enum class ParamGroup { kEncoder, kProjection, kClassifier };
std::string to_string(ParamGroup group);

struct RegisteredParam {
  ParamGroup group;
  std::string name;
  nn::Var var;
};

struct Model {
  backbones::EncoderConfig encoder_config;
  std::unique_ptr<backbones::Encoder> encoder;
  losses::AamConfig aam;
  nn::Var class_weights;  // [C, E, 1]
  int teacher_dim = 0;    // 0: no speech branch
  nn::Var proj_weight;    // [D~, D, 1]; null when D == D~ or no speech branch
  nn::Var proj_bias;      // [1, D~, 1]

  bool has_speech_branch() const { return teacher_dim > 0; }
  bool has_projection() const { return static_cast<bool>(proj_weight); }
  /// Every trainable parameter. There is no teacher group: the teacher is frozen
  /// and lives outside the model.
  std::vector<RegisteredParam> registry() const;
  /// Running statistics (not trained by the optimizer).
  std::vector<nn::NamedBuffer> buffers() const { return encoder->buffers(); }
};

/// Builds a model. teacher_dim == 0 gives a speaker-only model (no projection).
/// Encoder, projection and classifier draw from independent seeded streams.
Model make_model(const backbones::EncoderConfig& enc, int num_classes, int teacher_dim, double margin,
                 double scale, uint64_t seed);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<std::vector<double>> m;  // parallel to Model::registry()
  std::vector<std::vector<double>> v;
};

AdamState make_adam(const Model& model);

/// One Adam update over every parameter that received a gradient; gradients are
/// scaled by `grad_scale` first (clipping). Clears gradients.
void adam_step(Model& model, AdamState& state, double lr, double grad_scale);

// ---------------------------------------------------------------------------
// Steps

struct Batch {
  nn::Tensor features;          // [B, num_mels, T]
  std::vector<int> labels;      // B
  std::vector<Matrix> teacher;  // B sequences of T~ x D~, empty without a teacher
};

struct StepMetrics {
  double l_speaker = 0.0;
  double l_speech = 0.0;  // 0 when no teacher is available
  double l_total = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
  std::size_t skipped_frames = 0;
};

/// Forward, joint loss, backward, clipping and one Adam update. With lambda == 0
/// the speech branch is evaluated for logging only and contributes no gradient.
StepMetrics train_step(Model& model, AdamState& adam, const Batch& batch, double lr, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Fitting

struct StepRecord {
  int epoch = 0;
  int step = 0;  // global
  double lr = 0.0;
  StepMetrics metrics;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double l_speaker = 0.0;  // means over the epoch's steps
  double l_speech = 0.0;
  double l_total = 0.0;
};

struct FitOptions {
  TrainConfig train;
  backbones::EncoderConfig encoder;
  std::optional<teacher::TeacherSource> teacher;  // required when lambda > 0
  std::optional<audio::AugmentPolicy> augment;
  /// Called after every epoch (progress reporting).
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  Model model;
  AdamState adam;
  int epochs_done = 0;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> speakers;  // label -> speaker_id
};

/// Runs cfg.epochs epochs of ceil(N / batch_size) steps each.
FitResult fit(const manifest::Manifest& data, const FitOptions& options);

/// Epoch CSV: epoch,lr,l_speaker,l_speech,l_total
void write_metric_log(const std::filesystem::path& path, const std::vector<EpochRecord>& epochs);
/// Step CSV: epoch,step,lr,l_speaker,l_speech,l_total,grad_norm,clipped
void write_step_log(const std::filesystem::path& path, const std::vector<StepRecord>& steps);

}  // namespace jtss::trainer
