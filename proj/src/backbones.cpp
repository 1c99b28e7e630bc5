#include "jtss/backbones.hpp"

#include <algorithm>
#include <functional>
#include <random>

namespace jtss::backbones {

using nn::Tensor;
using nn::Var;

std::string to_string(Arch arch) { return arch == Arch::kEcapa ? "ecapa" : "xvector"; }

Arch arch_from_string(const std::string& s) {
  if (s == "ecapa") return Arch::kEcapa;
  if (s == "xvector") return Arch::kXVector;
  throw Error("unknown encoder architecture '" + s + "' (expected ecapa or xvector)");
}

void validate(const EncoderConfig& cfg) {
  if (cfg.channels < 8) throw Error("encoder channels must be >= 8");
  if (cfg.embed_dim < 8) throw Error("encoder embed_dim must be >= 8");
  if (cfg.num_mels < 1) throw Error("encoder num_mels must be positive");
  if (cfg.tap_layer < 0 || cfg.tap_layer >= kNumTapLayers)
    throw Error("tap_layer " + std::to_string(cfg.tap_layer) + " outside 0.." + std::to_string(kNumTapLayers - 1));
  if (cfg.arch == Arch::kEcapa && cfg.channels % 8 != 0)
    throw Error("ECAPA channels must be divisible by the Res2 scale (8)");
}

Var Encoder::add_param(const std::string& name, Tensor value) {
  Var v = nn::parameter(std::move(value));
  params_.push_back({name, v});
  return v;
}

void Encoder::add_buffer(const std::string& name, std::vector<double>* values) {
  buffers_.push_back({name, values});
}

namespace {

struct Conv {
  Var w, b;
  int dilation = 1, pad = 0;
  Var operator()(const Var& x) const { return nn::conv1d(x, w, b, dilation, pad); }
};

struct Norm {
  Var gamma, beta;
  nn::BatchNormState state;
  Var operator()(const Var& x, bool training) { return nn::batch_norm(x, gamma, beta, state, training); }
};

// Small hub that owns the RNG and forwards registrations to the encoder.
class Builder {
 public:
  using ParamFn = std::function<Var(const std::string&, Tensor)>;
  using BufferFn = std::function<void(const std::string&, std::vector<double>*)>;
  Builder(uint64_t seed, ParamFn p, BufferFn b) : rng_(seed), param_(std::move(p)), buffer_(std::move(b)) {}

  Conv conv(const std::string& name, int c_in, int c_out, int k, int dilation, int pad, bool bias = true) {
    Conv c;
    c.dilation = dilation;
    c.pad = pad;
    c.w = param_(name + ".weight", nn::uniform_fan_in(c_out, c_in, k, rng_));
    if (bias) c.b = param_(name + ".bias", nn::uniform_bias(c_out, c_in * k, rng_));
    return c;
  }

  void norm(const std::string& name, int ch, Norm& n) {
    n.gamma = param_(name + ".gamma", Tensor(1, ch, 1, 1.0));
    n.beta = param_(name + ".beta", Tensor(1, ch, 1, 0.0));
    n.state.running_mean.assign(ch, 0.0);
    n.state.running_var.assign(ch, 1.0);
    buffer_(name + ".running_mean", &n.state.running_mean);
    buffer_(name + ".running_var", &n.state.running_var);
  }

 private:
  std::mt19937_64 rng_;
  ParamFn param_;
  BufferFn buffer_;
};

// conv -> ReLU -> BN, the TDNN block used by both architectures.
struct TdnnBlock {
  Conv conv;
  Norm bn;
  void build(Builder& b, const std::string& name, int c_in, int c_out, int k, int dilation, int pad) {
    conv = b.conv(name + ".conv", c_in, c_out, k, dilation, pad);
    b.norm(name + ".bn", c_out, bn);
  }
  Var operator()(const Var& x, bool training) { return bn(nn::relu(conv(x)), training); }
};

int bottleneck_width(int channels) { return std::clamp(channels / 4, 8, 128); }

constexpr int kRes2Scale = 8;

struct SeRes2Block {
  TdnnBlock in_proj, out_proj;
  std::vector<TdnnBlock> branches;
  Conv se_down, se_up;

  void build(Builder& b, const std::string& name, int ch, int dilation) {
    in_proj.build(b, name + ".conv1", ch, ch, 1, 1, 0);
    const int width = ch / kRes2Scale;
    branches.resize(kRes2Scale - 1);
    for (int i = 0; i < kRes2Scale - 1; ++i)
      branches[i].build(b, name + ".res2." + std::to_string(i), width, width, 3, dilation, dilation);
    out_proj.build(b, name + ".conv2", ch, ch, 1, 1, 0);
    const int se = bottleneck_width(ch);
    se_down = b.conv(name + ".se.fc1", ch, se, 1, 1, 0);
    se_up = b.conv(name + ".se.fc2", se, ch, 1, 1, 0);
  }

  Var operator()(const Var& x, bool training) {
    Var h = in_proj(x, training);
    const int ch = h->value.c, width = ch / kRes2Scale;
    std::vector<Var> parts{nn::slice_channels(h, 0, width)};
    Var running;
    for (int i = 1; i < kRes2Scale; ++i) {
      Var chunk = nn::slice_channels(h, i * width, (i + 1) * width);
      running = i == 1 ? chunk : nn::add(running, chunk);
      running = branches[i - 1](running, training);
      parts.push_back(running);
    }
    h = out_proj(nn::concat_channels(parts), training);
    Var gate = nn::sigmoid(se_up(nn::relu(se_down(nn::mean_time(h)))));
    return nn::add(nn::scale_channels(h, gate), x);
  }
};

class Ecapa final : public Encoder {
 public:
  Ecapa(const EncoderConfig& cfg, uint64_t seed) : Encoder(cfg) {
    Builder b(
        seed, [this](const std::string& n, Tensor t) { return add_param(n, std::move(t)); },
        [this](const std::string& n, std::vector<double>* v) { add_buffer(n, v); });
    const int c = cfg.channels;
    layer0_.build(b, "layer0", cfg.num_mels, c, 5, 1, 2);
    const int dilations[3] = {2, 3, 4};
    for (int i = 0; i < 3; ++i) blocks_[i].build(b, "layer" + std::to_string(i + 1), c, dilations[i]);
    layer4_.build(b, "layer4", 3 * c, 3 * c, 1, 1, 0);
    const int att = bottleneck_width(c);
    att_in_ = b.conv("pool.attention.conv1", 9 * c, att, 1, 1, 0);
    b.norm("pool.attention.bn", att, att_bn_);
    // No bias: a per-channel constant is cancelled by the softmax over time.
    att_out_ = b.conv("pool.attention.conv2", att, 3 * c, 1, 1, 0, false);
    b.norm("pool.bn", 6 * c, pool_bn_);
    embed_ = b.conv("embedding", 6 * c, cfg.embed_dim, 1, 1, 0);
  }

  ForwardResult forward(const Var& feats, bool training, int tap_layer) override {
    check_input(feats, tap_layer);
    std::vector<Var> layers;
    layers.push_back(layer0_(feats, training));
    for (auto& block : blocks_) layers.push_back(block(layers.back(), training));
    layers.push_back(layer4_(nn::concat_channels({layers[1], layers[2], layers[3]}), training));

    const Var& x = layers[4];
    const int ch = x->value.c, len = x->value.t;
    Var global = nn::uniform_stats(x);
    Var context = nn::concat_channels({x, nn::repeat_time(nn::slice_channels(global, 0, ch), len),
                                       nn::repeat_time(nn::slice_channels(global, ch, 2 * ch), len)});
    Var scores = att_out_(nn::tanh(att_bn_(nn::relu(att_in_(context)), training)));
    Var pooled = pool_bn_(nn::weighted_stats(x, nn::softmax_time(scores)), training);
    return {layers[tap_layer], embed_(pooled)};
  }

  int tap_channels(int layer) const override { return layer == 4 ? 3 * cfg_.channels : cfg_.channels; }
  std::size_t tap_frames(std::size_t input_frames, int) const override { return input_frames; }
  std::size_t min_input_frames() const override { return 1; }

 private:
  void check_input(const Var& feats, int tap_layer) const {
    if (feats->value.c != cfg_.num_mels)
      throw Error("encoder expects " + std::to_string(cfg_.num_mels) + " mel bins, got " +
                  std::to_string(feats->value.c));
    if (tap_layer < 0 || tap_layer >= kNumTapLayers) throw Error("tap layer out of range");
  }

  TdnnBlock layer0_;
  SeRes2Block blocks_[3];
  TdnnBlock layer4_;
  Conv att_in_, att_out_;
  Norm att_bn_, pool_bn_;
  Conv embed_;
};

struct XVectorLayer {
  int k, dilation;
};
constexpr XVectorLayer kXVectorLayers[kNumTapLayers] = {{5, 1}, {3, 2}, {3, 3}, {1, 1}, {1, 1}};

class XVector final : public Encoder {
 public:
  XVector(const EncoderConfig& cfg, uint64_t seed) : Encoder(cfg) {
    Builder b(
        seed, [this](const std::string& n, Tensor t) { return add_param(n, std::move(t)); },
        [this](const std::string& n, std::vector<double>* v) { add_buffer(n, v); });
    int c_in = cfg.num_mels;
    for (int i = 0; i < kNumTapLayers; ++i) {
      const int c_out = tap_channels(i);
      layers_[i].build(b, "layer" + std::to_string(i), c_in, c_out, kXVectorLayers[i].k,
                       kXVectorLayers[i].dilation, 0);
      c_in = c_out;
    }
    embed_ = b.conv("embedding", 2 * c_in, cfg.embed_dim, 1, 1, 0);
  }

  ForwardResult forward(const Var& feats, bool training, int tap_layer) override {
    if (feats->value.c != cfg_.num_mels)
      throw Error("encoder expects " + std::to_string(cfg_.num_mels) + " mel bins, got " +
                  std::to_string(feats->value.c));
    if (tap_layer < 0 || tap_layer >= kNumTapLayers) throw Error("tap layer out of range");
    if (static_cast<std::size_t>(feats->value.t) < min_input_frames())
      throw Error("x-vector needs at least " + std::to_string(min_input_frames()) + " frames");
    Var h = feats, tap;
    for (int i = 0; i < kNumTapLayers; ++i) {
      h = layers_[i](h, training);
      if (i == tap_layer) tap = h;
    }
    return {tap, embed_(nn::uniform_stats(h))};
  }

  int tap_channels(int layer) const override { return layer == 4 ? 3 * cfg_.channels : cfg_.channels; }

  std::size_t tap_frames(std::size_t input_frames, int layer) const override {
    std::size_t t = input_frames;
    for (int i = 0; i <= layer; ++i) t -= static_cast<std::size_t>(kXVectorLayers[i].dilation * (kXVectorLayers[i].k - 1));
    return t;
  }

  std::size_t min_input_frames() const override { return 15; }

 private:
  TdnnBlock layers_[kNumTapLayers];
  Conv embed_;
};

}  // namespace

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, uint64_t seed) {
  validate(cfg);
  if (cfg.arch == Arch::kEcapa) return std::make_unique<Ecapa>(cfg, seed);
  return std::make_unique<XVector>(cfg, seed);
}

Tensor features_to_tensor(const std::vector<const audio::FeatureMatrix*>& feats) {
  if (feats.empty()) throw Error("features_to_tensor: empty batch");
  const std::size_t frames = feats[0]->num_frames();
  const std::size_t mels = feats[0]->frames.cols();
  Tensor out(static_cast<int>(feats.size()), static_cast<int>(mels), static_cast<int>(frames));
  for (std::size_t b = 0; b < feats.size(); ++b) {
    if (feats[b]->num_frames() != frames || feats[b]->frames.cols() != mels)
      throw Error("features_to_tensor: utterances in a batch must share a shape");
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t f = 0; f < mels; ++f)
        out.at(static_cast<int>(b), static_cast<int>(f), static_cast<int>(t)) = feats[b]->frames(t, f);
  }
  return out;
}

std::pair<FrameMap, SpeakerEmbedding> encoder_forward(Encoder& encoder, const audio::FeatureMatrix& feats,
                                                      int tap_layer, const std::string& utt_id) {
  if (static_cast<int>(feats.frames.cols()) != encoder.config().num_mels)
    throw Error("feature dimension " + std::to_string(feats.frames.cols()) + " does not match encoder num_mels " +
                std::to_string(encoder.config().num_mels));
  if (feats.num_frames() < std::max<std::size_t>(1, encoder.min_input_frames()))
    throw Error("utterance too short for the encoder");
  ForwardResult r = encoder.forward(nn::constant(features_to_tensor({&feats})), false, tap_layer);
  const Tensor& tap = r.tap->value;
  FrameMap map;
  map.tap_layer = tap_layer;
  map.frames = Matrix(tap.t, tap.c);
  for (int c = 0; c < tap.c; ++c)
    for (int t = 0; t < tap.t; ++t) map.frames(t, c) = tap.at(0, c, t);
  SpeakerEmbedding emb;
  emb.utt_id = utt_id;
  emb.e.assign(r.embedding->value.data.begin(), r.embedding->value.data.end());
  return {std::move(map), std::move(emb)};
}

std::pair<FrameMap, SpeakerEmbedding> encoder_forward(Encoder& encoder, const audio::FeatureMatrix& feats,
                                                      const std::string& utt_id) {
  return encoder_forward(encoder, feats, encoder.config().tap_layer, utt_id);
}

namespace {

Tensor frames_to_tensor(const Matrix& m) {
  Tensor t(1, static_cast<int>(m.cols()), static_cast<int>(m.rows()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t.at(0, static_cast<int>(c), static_cast<int>(r)) = m(r, c);
  return t;
}

}  // namespace

std::vector<double> attentive_stats_pool(const Matrix& frames, const Matrix& weights) {
  if (frames.rows() < 1) throw Error("attentive_stats_pool: no frames");
  if (weights.rows() != frames.rows() || weights.cols() != frames.cols())
    throw Error("attentive_stats_pool: weights must match the frame matrix shape");
  Var out = nn::weighted_stats(nn::constant(frames_to_tensor(frames)), nn::constant(frames_to_tensor(weights)));
  return out->value.data;
}

std::vector<double> attentive_stats_pool(const Matrix& frames) {
  if (frames.rows() < 1) throw Error("attentive_stats_pool: no frames");
  return attentive_stats_pool(frames, Matrix(frames.rows(), frames.cols(), 1.0 / static_cast<double>(frames.rows())));
}

std::vector<double> stats_pool(const Matrix& frames) {
  if (frames.rows() < 1) throw Error("stats_pool: no frames");
  return nn::uniform_stats(nn::constant(frames_to_tensor(frames)))->value.data;
}

}  // namespace jtss::backbones
