#pragma once
// Speaker-embedding encoders with a read-only tap on any frame-level layer.
//
// ECAPA-TDNN layers (all stride 1, "same" padding, so every layer keeps the
// input frame count):
//   0  TDNN k=5, num_mels -> C
//   1  SE-Res2Block k=3 dilation 2, scale 8
//   2  SE-Res2Block k=3 dilation 3, scale 8
//   3  SE-Res2Block k=3 dilation 4, scale 8
//   4  TDNN k=1 over concat(layers 1..3), 3C -> 3C
//   attentive statistics pooling (with global context) -> BN -> affine -> embedding
//
// x-vector layers (unpadded TDNN, frame count shrinks with context):
//   layer  context        channels   frames at tap
//   0      {-2..2}        C          T - 4
//   1      {-2, 0, 2}     C          T - 8
//   2      {-3, 0, 3}     C          T - 14
//   3      {0}            C          T - 14
//   4      {0}            3C         T - 14
//   statistics pooling -> affine -> embedding
//
// Full-size defaults: ECAPA C=512, embedding 192; x-vector C=512, embedding 512.

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "jtss/audio.hpp"
#include "jtss/matrix.hpp"
#include "jtss/nn.hpp"

namespace jtss::backbones {

enum class Arch { kXVector, kEcapa };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& s);

inline constexpr int kNumTapLayers = 5;

struct EncoderConfig {
  Arch arch = Arch::kEcapa;
  int channels = 512;
  int embed_dim = 192;
  int tap_layer = 0;
  int num_mels = 80;

  bool operator==(const EncoderConfig&) const = default;
};

void validate(const EncoderConfig& cfg);

/// X = {x_t}: T x D frame-level features tapped at the output of one layer.
struct FrameMap {
  Matrix frames;
  int tap_layer = 0;
};

struct SpeakerEmbedding {
  std::vector<double> e;
  std::string utt_id;
};

struct ForwardResult {
  nn::Var tap;        // [B, D, T_tap]
  nn::Var embedding;  // [B, embed_dim, 1]
};

class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg) : cfg_(cfg) {}
  virtual ~Encoder() = default;
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;

  const EncoderConfig& config() const { return cfg_; }

  /// feats: [B, num_mels, T]. The tap is returned from the same pass that
  /// produces the embedding.
  virtual ForwardResult forward(const nn::Var& feats, bool training, int tap_layer) = 0;
  ForwardResult forward(const nn::Var& feats, bool training) { return forward(feats, training, cfg_.tap_layer); }

  virtual int tap_channels(int layer) const = 0;
  /// Frame count at the output of `layer` for an input of `input_frames`.
  virtual std::size_t tap_frames(std::size_t input_frames, int layer) const = 0;
  virtual std::size_t min_input_frames() const = 0;

  const std::vector<nn::NamedParam>& parameters() const { return params_; }
  const std::vector<nn::NamedBuffer>& buffers() const { return buffers_; }

 protected:
  nn::Var add_param(const std::string& name, nn::Tensor value);
  void add_buffer(const std::string& name, std::vector<double>* values);

  EncoderConfig cfg_;

 private:
  std::vector<nn::NamedParam> params_;
  std::vector<nn::NamedBuffer> buffers_;
};

/// Builds an encoder with parameters drawn from a generator seeded by `seed`.
std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, uint64_t seed);

/// [B, F, T] tensor from per-utterance T x F features (all of equal length).
nn::Tensor features_to_tensor(const std::vector<const audio::FeatureMatrix*>& feats);

/// Inference-mode forward of one utterance: tap-layer frame map and embedding.
std::pair<FrameMap, SpeakerEmbedding> encoder_forward(Encoder& encoder, const audio::FeatureMatrix& feats,
                                                      const std::string& utt_id = "");
std::pair<FrameMap, SpeakerEmbedding> encoder_forward(Encoder& encoder, const audio::FeatureMatrix& feats,
                                                      int tap_layer, const std::string& utt_id);

/// Weighted mean || weighted standard deviation over frames (rows of a T x D
/// matrix). `weights` is T x D with every column summing to one.
std::vector<double> attentive_stats_pool(const Matrix& frames, const Matrix& weights);

/// attentive_stats_pool with uniform weights 1/T.
std::vector<double> attentive_stats_pool(const Matrix& frames);

/// Mean || standard deviation over frames.
std::vector<double> stats_pool(const Matrix& frames);

}  // namespace jtss::backbones
