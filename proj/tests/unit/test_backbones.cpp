#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "fd_check.hpp"
#include "jtss/backbones.hpp"

using namespace jtss;
using backbones::Arch;
using backbones::EncoderConfig;

namespace {

audio::FeatureMatrix random_feats(std::size_t frames, int mels, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  audio::FeatureMatrix f;
  f.num_mels = mels;
  f.frames = Matrix(frames, mels);
  for (double& v : f.frames.values()) v = nd(rng);
  return f;
}

EncoderConfig small(Arch arch) {
  EncoderConfig c;
  c.arch = arch;
  c.channels = 8;
  c.embed_dim = 8;
  c.num_mels = 6;
  return c;
}

std::vector<nn::Var> param_vars(const backbones::Encoder& e) {
  std::vector<nn::Var> out;
  for (const auto& p : e.parameters()) out.push_back(p.var);
  return out;
}

}  // namespace

TEST_CASE("full-size shapes: ECAPA 512 channels gives 192-dim embeddings") {
  std::mt19937_64 rng(1);
  EncoderConfig cfg;
  auto enc = backbones::make_encoder(cfg, 1);
  const auto feats = random_feats(20, 80, rng);
  for (int tap = 0; tap < backbones::kNumTapLayers; ++tap) {
    auto [map, emb] = backbones::encoder_forward(*enc, feats, tap, "u");
    CHECK(emb.e.size() == 192);
    CHECK(map.frames.rows() == 20);
    CHECK(map.frames.cols() == static_cast<std::size_t>(tap == 4 ? 1536 : 512));
  }
}

TEST_CASE("full-size shapes: x-vector gives 512-dim embeddings") {
  std::mt19937_64 rng(2);
  EncoderConfig cfg;
  cfg.arch = Arch::kXVector;
  cfg.embed_dim = 512;
  auto enc = backbones::make_encoder(cfg, 1);
  auto [map, emb] = backbones::encoder_forward(*enc, random_feats(30, 80, rng), 2, "u");
  CHECK(emb.e.size() == 512);
  CHECK(map.frames.rows() == 16);
}

TEST_CASE("ECAPA frame count is invariant across tap layers") {
  std::mt19937_64 rng(3);
  auto enc = backbones::make_encoder(small(Arch::kEcapa), 3);
  std::uniform_int_distribution<std::size_t> len(1, 60);
  for (int i = 0; i < 20; ++i) {
    const std::size_t t = len(rng);
    const auto feats = random_feats(t, 6, rng);
    for (int tap = 0; tap < backbones::kNumTapLayers; ++tap) {
      CHECK(enc->tap_frames(t, tap) == t);
      CHECK(backbones::encoder_forward(*enc, feats, tap, "").first.frames.rows() == t);
    }
  }
}

TEST_CASE("x-vector frame count follows the shrinkage table") {
  std::mt19937_64 rng(4);
  auto enc = backbones::make_encoder(small(Arch::kXVector), 4);
  const std::size_t shrink[] = {4, 8, 14, 14, 14};
  std::uniform_int_distribution<std::size_t> len(15, 80);
  for (int i = 0; i < 20; ++i) {
    const std::size_t t = len(rng);
    const auto feats = random_feats(t, 6, rng);
    for (int tap = 0; tap < backbones::kNumTapLayers; ++tap) {
      CHECK(enc->tap_frames(t, tap) == t - shrink[tap]);
      CHECK(backbones::encoder_forward(*enc, feats, tap, "").first.frames.rows() == t - shrink[tap]);
    }
  }
  CHECK(enc->min_input_frames() == 15);
  CHECK_THROWS_AS(backbones::encoder_forward(*enc, random_feats(14, 6, rng), 0, ""), Error);
  CHECK(enc->tap_channels(4) == 24);
  CHECK(enc->tap_channels(1) == 8);
}

TEST_CASE("whole-network gradients match finite differences") {
  std::mt19937_64 rng(5);
  for (Arch arch : {Arch::kEcapa, Arch::kXVector}) {
    auto enc = backbones::make_encoder(small(arch), 5);
    const nn::Var x = nn::constant(testutil::random_tensor(2, 6, 18, rng));
    for (int tap : {0, 2, 4}) {
      const auto loss = [&] {
        auto r = enc->forward(x, true, tap);
        return nn::add(testutil::random_projection(r.embedding, 1), testutil::random_projection(r.tap, 2));
      };
      const auto res = testutil::fd_check(param_vars(*enc), loss, 1e-6, 6, 1e-4);
      INFO(backbones::to_string(arch) << " tap " << tap << " coords " << res.checked);
      CHECK(res.max_rel < 1e-4);
    }
  }
}

TEST_CASE("every encoder parameter is reached by backward") {
  for (Arch arch : {Arch::kEcapa, Arch::kXVector}) {
    std::map<std::string, double> norms;
    for (uint64_t seed = 6; seed < 10; ++seed) {
      std::mt19937_64 rng(seed);
      auto enc = backbones::make_encoder(small(arch), seed);
      auto r = enc->forward(nn::constant(testutil::random_tensor(2, 6, 20, rng)), true, 0);
      nn::backward(testutil::random_projection(r.embedding, 3));
      for (const auto& p : enc->parameters()) {
        INFO(p.name);
        REQUIRE_FALSE(p.var->grad.empty());
        for (double g : p.var->grad.data) norms[p.name] += g * g;
      }
    }
    for (const auto& [name, n] : norms) {
      INFO(name);
      CHECK(n > 0.0);
    }
  }
}

TEST_CASE("initialization is seeded") {
  auto a = backbones::make_encoder(small(Arch::kEcapa), 9);
  auto b = backbones::make_encoder(small(Arch::kEcapa), 9);
  auto c = backbones::make_encoder(small(Arch::kEcapa), 10);
  REQUIRE(a->parameters().size() == b->parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a->parameters().size(); ++i) {
    CHECK(a->parameters()[i].name == b->parameters()[i].name);
    CHECK(a->parameters()[i].var->value.data == b->parameters()[i].var->value.data);
    differs |= a->parameters()[i].var->value.data != c->parameters()[i].var->value.data;
  }
  CHECK(differs);
}

TEST_CASE("inference forward is deterministic and ignores batch composition") {
  std::mt19937_64 rng(7);
  auto enc = backbones::make_encoder(small(Arch::kEcapa), 7);
  const auto f = random_feats(25, 6, rng);
  const auto e1 = backbones::encoder_forward(*enc, f, "x").second;
  const auto e2 = backbones::encoder_forward(*enc, f, "x").second;
  CHECK(e1.e == e2.e);
  CHECK(e1.utt_id == "x");
  audio::FeatureMatrix wrong = random_feats(25, 5, rng);
  CHECK_THROWS_AS(backbones::encoder_forward(*enc, wrong, "x"), Error);
}

TEST_CASE("statistics pooling helpers") {
  Matrix frames(4, 2);
  const double v[4][2] = {{1, 2}, {3, 2}, {5, 2}, {7, 2}};
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 2; ++c) frames(t, c) = v[t][c];
  const auto s = backbones::stats_pool(frames);
  REQUIRE(s.size() == 4);
  CHECK(s[0] == doctest::Approx(4.0));
  CHECK(s[1] == doctest::Approx(2.0));
  CHECK(s[2] == doctest::Approx(std::sqrt(5.0)));
  CHECK(s[3] == 0.0);
  CHECK(backbones::attentive_stats_pool(frames) == s);

  Matrix w(4, 2, 0.0);
  w(3, 0) = 1.0;  // all weight on the last frame of channel 0
  for (int t = 0; t < 4; ++t) w(t, 1) = 0.25;
  const auto a = backbones::attentive_stats_pool(frames, w);
  CHECK(a[0] == doctest::Approx(7.0));
  CHECK(a[2] == doctest::Approx(0.0));
}

TEST_CASE("encoder config validation") {
  EncoderConfig c = small(Arch::kEcapa);
  c.channels = 12;
  CHECK_THROWS_AS(backbones::validate(c), Error);
  c = small(Arch::kEcapa);
  c.tap_layer = 5;
  CHECK_THROWS_AS(backbones::validate(c), Error);
  CHECK_THROWS_AS(backbones::arch_from_string("resnet"), Error);
  CHECK(backbones::arch_from_string("xvector") == Arch::kXVector);
}
