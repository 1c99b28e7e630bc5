#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fd_check.hpp"
#include "jtss/common.hpp"
#include "jtss/losses.hpp"
#include "oracles.hpp"

using namespace jtss;
using namespace jtss::losses;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (double& v : m.values()) v = nd(rng);
  return m;
}

// Direct per-sample reference: -log softmax with margin on the target logit.
double aam_reference(const Matrix& emb, const std::vector<int>& labels, const Matrix& w, double m, double s) {
  double total = 0.0;
  for (std::size_t b = 0; b < emb.rows(); ++b) {
    double ne = 0.0;
    for (double v : emb.row(b)) ne += v * v;
    std::vector<long double> logits;
    for (std::size_t c = 0; c < w.rows(); ++c) {
      double nw = 0.0, dot = 0.0;
      for (std::size_t k = 0; k < w.cols(); ++k) {
        nw += w(c, k) * w(c, k);
        dot += w(c, k) * emb(b, k);
      }
      double cosv = dot / std::sqrt(ne * nw);
      if (static_cast<int>(c) == labels[b]) {
        const double theta = std::acos(std::clamp(cosv, -1.0, 1.0));
        cosv = theta + m <= std::numbers::pi ? std::cos(theta + m) : cosv - m * std::sin(m);
      }
      logits.push_back(s * cosv);
    }
    long double z = 0.0L;
    for (auto l : logits) z += std::exp(l);
    total += static_cast<double>(std::log(z) - logits[labels[b]]);
  }
  return total / emb.rows();
}

}  // namespace

TEST_CASE("AAM softmax matches a direct reference") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng() % 6, e = 2 + rng() % 6, c = 2 + rng() % 5;
    const Matrix emb = random_matrix(b, e, rng), w = random_matrix(c, e, rng);
    std::vector<int> labels(b);
    for (int& l : labels) l = static_cast<int>(rng() % c);
    const AamConfig cfg{0.2, 30.0, static_cast<int>(c)};
    CHECK(aam_softmax_loss(emb, labels, w, cfg).value == doctest::Approx(aam_reference(emb, labels, w, 0.2, 30.0)).epsilon(1e-10));
  }
}

TEST_CASE("AAM closed-form and degenerate cases") {
  Matrix emb(1, 2);
  emb(0, 0) = 1.0;
  Matrix w(2, 2);
  w(0, 0) = 1.0;
  w(1, 1) = 1.0;
  const std::vector<int> y{0};
  const double expect = std::log1p(std::exp(-30.0 * std::cos(0.2)));
  CHECK(aam_softmax_loss(emb, y, w, {0.2, 30.0, 2}).value == doctest::Approx(expect).epsilon(1e-6));
  CHECK(expect == doctest::Approx(1.7e-13).epsilon(0.1));

  std::mt19937_64 rng(2);
  const Matrix e3 = random_matrix(4, 3, rng), w1 = random_matrix(1, 3, rng);
  const std::vector<int> zeros(4, 0);
  CHECK(aam_softmax_loss(e3, zeros, w1, {0.2, 30.0, 1}).value == doctest::Approx(0.0).epsilon(1e-12));

  Matrix zero_emb(1, 2);
  CHECK_THROWS_AS(aam_softmax_loss(zero_emb, y, w, {0.2, 30.0, 2}), Error);
  CHECK_THROWS_AS(validate(AamConfig{std::numbers::pi / 2, 30.0, 2}), Error);
  CHECK_THROWS_AS(validate(AamConfig{0.2, 0.0, 2}), Error);
}

TEST_CASE("AAM with zero margin equals scaled-cosine cross-entropy") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix emb = random_matrix(5, 4, rng), w = random_matrix(3, 4, rng);
    std::vector<int> labels(5);
    for (int& l : labels) l = static_cast<int>(rng() % 3);
    double ce = 0.0;
    for (std::size_t b = 0; b < 5; ++b) {
      std::vector<double> logits;
      double ne = 0;
      for (double v : emb.row(b)) ne += v * v;
      for (std::size_t c = 0; c < 3; ++c) {
        double dot = 0, nw = 0;
        for (std::size_t k = 0; k < 4; ++k) dot += emb(b, k) * w(c, k), nw += w(c, k) * w(c, k);
        logits.push_back(10.0 * dot / std::sqrt(ne * nw));
      }
      double z = 0;
      for (double l : logits) z += std::exp(l);
      ce += std::log(z) - logits[labels[b]];
    }
    CHECK(aam_softmax_loss(emb, labels, w, {0.0, 10.0, 3}).value == doctest::Approx(ce / 5).epsilon(1e-10));
  }
}

TEST_CASE("AAM gradients match finite differences on random shapes") {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t b = 1 + rng() % 5, e = 2 + rng() % 5, c = 2 + rng() % 4;
    Matrix emb = random_matrix(b, e, rng), w = random_matrix(c, e, rng);
    std::vector<int> labels(b);
    for (int& l : labels) l = static_cast<int>(rng() % c);
    const AamConfig cfg{0.2, trial % 2 ? 30.0 : 4.0, static_cast<int>(c)};
    const auto g = aam_softmax_loss(emb, labels, w, cfg);
    const auto f = [&] { return aam_softmax_loss(emb, labels, w, cfg).value; };
    worst = std::max(worst, oracle::tensor_rel_err(g.grad_embeddings.values(), oracle::numeric_grads(f, emb.values())));
    worst = std::max(worst, oracle::tensor_rel_err(g.grad_weights.values(), oracle::numeric_grads(f, w.values())));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("AAM graph node matches the matrix form") {
  std::mt19937_64 rng(5);
  auto emb = nn::parameter(testutil::random_tensor(3, 4, 1, rng));
  auto w = nn::parameter(testutil::random_tensor(5, 4, 1, rng));
  const std::vector<int> labels{0, 4, 2};
  const AamConfig cfg{0.2, 30.0, 5};
  const auto res = testutil::fd_check({emb, w}, [&] { return aam_loss_node(emb, w, labels, cfg); });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("align: worked max-pool example and identity") {
  backbones::FrameMap x;
  x.frames = Matrix(4, 3);
  const double v[4][3] = {{1, 0, 2}, {3, 1, 0}, {0, 5, 1}, {2, 2, 2}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) x.frames(r, c) = v[r][c];
  const auto z = align(x, 2, nullptr);
  const double want[2][3] = {{3, 1, 2}, {2, 5, 2}};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) CHECK(z.vectors(r, c) == want[r][c]);
  CHECK(align(x, 4, nullptr).vectors == x.frames);
  CHECK_THROWS_AS(align(x, 5, nullptr), Error);
  CHECK_THROWS_AS(align(x, 0, nullptr), Error);
  Affine bad{Matrix(2, 5), std::vector<double>(2)};
  CHECK_THROWS_AS(align(x, 2, &bad), Error);
}

TEST_CASE("align agrees with a brute-force bin-max oracle") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng() % 20, tx = t + rng() % 30, d = 1 + rng() % 5;
    backbones::FrameMap x;
    x.frames = random_matrix(tx, d, rng);
    x.tap_layer = static_cast<int>(rng() % 5);
    const auto z = align(x, t, nullptr);
    REQUIRE(z.vectors.rows() == t);
    REQUIRE(z.vectors.cols() == d);
    CHECK(z.source_tap == x.tap_layer);
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t lo = i * tx / t, hi = (i + 1) * tx / t;
      for (std::size_t c = 0; c < d; ++c) {
        double m = -INFINITY;
        for (std::size_t r = lo; r < hi; ++r) m = std::max(m, x.frames(r, c));
        CHECK(z.vectors(i, c) == m);
      }
    }
    Affine p{random_matrix(3, d, rng), std::vector<double>{0.1, -0.2, 0.3}};
    const auto zp = align(x, t, &p);
    CHECK(zp.vectors.rows() == t);
    CHECK(zp.vectors.cols() == 3);
  }
}

TEST_CASE("speech loss examples and range") {
  Matrix v(2, 2);
  v(0, 0) = 1;
  v(1, 1) = 2;
  CHECK(speech_loss(v, v).value == doctest::Approx(0.0).epsilon(1e-15));
  Matrix orth(2, 2);
  orth(0, 1) = 3;
  orth(1, 0) = -1;
  CHECK(speech_loss(orth, v).value == doctest::Approx(1.0));
  Matrix half(2, 2);
  half(0, 1) = 1;
  half(1, 1) = 5;
  CHECK(speech_loss(half, v).value == doctest::Approx(0.5));

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(0.1, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t t = 1 + rng() % 8, d = 1 + rng() % 6;
    const Matrix z = random_matrix(t, d, rng), tv = random_matrix(t, d, rng);
    const double l = speech_loss(z, tv).value;
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
    Matrix zs = z, vs = tv;
    for (std::size_t r = 0; r < t; ++r) {
      const double a = pos(rng), b = pos(rng);
      for (std::size_t c = 0; c < d; ++c) zs(r, c) *= a, vs(r, c) *= b;
    }
    CHECK(speech_loss(zs, vs).value == doctest::Approx(l).epsilon(1e-12));
  }
  CHECK_THROWS_AS(speech_loss(Matrix(2, 3), Matrix(3, 3)), Error);
}

TEST_CASE("speech loss skips zero-norm frames") {
  Matrix z(3, 2, 1.0), v(3, 2, 1.0);
  z(1, 0) = z(1, 1) = 0.0;
  v(2, 0) = -1.0;
  v(2, 1) = -1.0;
  const auto s = speech_loss(z, v);
  CHECK(s.skipped_frames == 1);
  CHECK(s.value == doctest::Approx(1.0 - (1.0 - 1.0) / 2.0));
  CHECK(s.grad_z(1, 0) == 0.0);
  const auto all = speech_loss(Matrix(2, 2), Matrix(2, 2, 1.0));
  CHECK(all.value == 0.0);
  CHECK(all.skipped_frames == 2);
  for (double g : all.grad_z.values()) CHECK(g == 0.0);
}

TEST_CASE("speech loss composed with align and projection matches finite differences") {
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t t = 1 + rng() % 6, tx = t + rng() % 10, d = 2 + rng() % 5, dt = 2 + rng() % 4;
    backbones::FrameMap x;
    x.frames = random_matrix(tx, d, rng);
    Affine p{random_matrix(dt, d, rng), std::vector<double>(dt)};
    for (double& b : p.bias) b = 0.1 * static_cast<double>(rng() % 7);
    const Matrix v = random_matrix(t, dt, rng);

    std::vector<std::size_t> argmax;
    const Matrix pooled = max_pool_frames(x.frames, t, &argmax);
    const Matrix z = p.apply(pooled);
    const auto sl = speech_loss(z, v);
    const auto ag = affine_backward(p, pooled, sl.grad_z);
    const Matrix gx = max_pool_backward(ag.input, argmax, tx);

    const auto f = [&] { return speech_loss(align(x, t, &p).vectors, v).value; };
    worst = std::max(worst, oracle::tensor_rel_err(gx.values(), oracle::numeric_grads(f, x.frames.values())));
    worst = std::max(worst, oracle::tensor_rel_err(ag.weight.values(), oracle::numeric_grads(f, p.weight.values())));
    worst = std::max(worst, oracle::tensor_rel_err(ag.bias, oracle::numeric_grads(f, p.bias)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("speech loss graph node averages utterances") {
  std::mt19937_64 rng(9);
  auto z = nn::parameter(testutil::random_tensor(3, 4, 5, rng));
  std::vector<Matrix> teacher;
  for (int b = 0; b < 3; ++b) teacher.push_back(random_matrix(5, 4, rng));
  std::vector<double> per;
  for (int b = 0; b < 3; ++b) {
    Matrix zb(5, 4);
    for (int t = 0; t < 5; ++t)
      for (int c = 0; c < 4; ++c) zb(t, c) = z->value.at(b, c, t);
    per.push_back(speech_loss(zb, teacher[b]).value);
  }
  CHECK(speech_loss_node(z, teacher)->value.data[0] == doctest::Approx(batch_speech_loss(per)).epsilon(1e-14));
  CHECK(batch_speech_loss(per) == doctest::Approx((per[0] + per[1] + per[2]) / 3));
  const auto res = testutil::fd_check({z}, [&] { return speech_loss_node(z, teacher); });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("total loss is exact") {
  CHECK(total_loss(1.0, 0.5, {0.1}) == 1.0 + 0.1 * 0.5);
  CHECK(total_loss(5.79, 123.0, {0.0}) == 5.79);
  CHECK(total_loss(1.0, 0.5, {0.1}) == doctest::Approx(1.05));
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng), l = u(rng);
    CHECK(total_loss(a, b, {l}) == a + l * b);
  }
}
