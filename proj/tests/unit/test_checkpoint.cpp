#include <doctest.h>

#include <random>

#include "fd_check.hpp"
#include "jtss/checkpoint.hpp"
#include "jtss/common.hpp"
#include "test_util.hpp"

using namespace jtss;

namespace {

trainer::Model trained_model(backbones::Arch arch, int teacher_dim, trainer::AdamState& adam) {
  backbones::EncoderConfig enc;
  enc.arch = arch;
  enc.channels = 16;
  enc.embed_dim = 12;
  enc.num_mels = 10;
  auto m = trainer::make_model(enc, 3, teacher_dim, 0.2, 30.0, 5);
  adam = trainer::make_adam(m);
  std::mt19937_64 rng(1);
  trainer::TrainConfig cfg;
  cfg.lambda = teacher_dim > 0 ? 0.1 : 0.0;
  for (int s = 0; s < 2; ++s) {
    trainer::Batch b;
    b.features = testutil::random_tensor(3, 10, 30, rng);
    b.labels = {0, 1, 2};
    if (teacher_dim > 0)
      for (int i = 0; i < 3; ++i) b.teacher.emplace_back(5, teacher_dim, 0.5 + i);
    trainer::train_step(m, adam, b, 0.01, cfg);
  }
  return m;
}

void check_equal(const trainer::Model& a, const trainer::Model& b) {
  const auto ra = a.registry(), rb = b.registry();
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].name == rb[i].name);
    CHECK(ra[i].group == rb[i].group);
    CHECK(ra[i].var->value.data == rb[i].var->value.data);
  }
  const auto ba = a.buffers(), bb = b.buffers();
  REQUIRE(ba.size() == bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i].values == *bb[i].values);
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
  for (auto arch : {backbones::Arch::kEcapa, backbones::Arch::kXVector}) {
    for (int dim : {0, 6, 12}) {
      trainer::AdamState adam;
      auto m = trained_model(arch, dim, adam);
      testutil::TempDir dir("ckpt");
      checkpoint::save(dir / "m.jtck", m, adam, 7, {"s0", "s1", "s2"}, R"({"x":1})");
      auto c = checkpoint::load(dir / "m.jtck");
      check_equal(m, c.model);
      CHECK(c.epoch == 7);
      CHECK(c.speakers == std::vector<std::string>{"s0", "s1", "s2"});
      CHECK(c.config_echo == R"({"x":1})");
      CHECK(c.adam.step == adam.step);
      CHECK(c.adam.m == adam.m);
      CHECK(c.adam.v == adam.v);
      CHECK(c.model.has_projection() == m.has_projection());
      CHECK(c.model.teacher_dim == m.teacher_dim);
      CHECK(c.model.aam.margin == m.aam.margin);
      CHECK(c.model.encoder_config == m.encoder_config);

      std::mt19937_64 rng(9);
      audio::FeatureMatrix f;
      f.num_mels = 10;
      f.frames = Matrix(40, 10);
      std::normal_distribution<double> nd;
      for (double& v : f.frames.values()) v = nd(rng);
      CHECK(backbones::encoder_forward(*m.encoder, f, "u").second.e ==
            backbones::encoder_forward(*c.model.encoder, f, "u").second.e);

      checkpoint::save(dir / "again.jtck", c.model, c.adam, c.epoch, c.speakers, c.config_echo);
      CHECK(testutil::slurp(dir / "again.jtck") == testutil::slurp(dir / "m.jtck"));
    }
  }
}

TEST_CASE("checkpoint load errors") {
  testutil::TempDir dir("ckpt");
  CHECK_THROWS_AS(checkpoint::load(dir / "none.jtck"), Error);
  testutil::write_text(dir / "bad.jtck", "JTCX0000000000000000");
  CHECK_THROWS_AS(checkpoint::load(dir / "bad.jtck"), Error);
  trainer::AdamState adam;
  auto m = trained_model(backbones::Arch::kEcapa, 6, adam);
  checkpoint::save(dir / "ok.jtck", m, adam, 1, {"a", "b", "c"}, "{}");
  const std::string bytes = testutil::slurp(dir / "ok.jtck");
  CHECK(bytes.substr(0, 4) == "JTCK");
  testutil::write_text(dir / "trunc.jtck", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(checkpoint::load(dir / "trunc.jtck"), Error);
}
