#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "jtss/common.hpp"
#include "jtss/teacher.hpp"
#include "test_util.hpp"

using namespace jtss;
using namespace jtss::teacher;

namespace {

audio::Waveform noise_wave(std::size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.1);
  audio::Waveform w;
  w.samples.resize(n);
  for (double& s : w.samples) s = nd(rng);
  return w;
}

Matrix random_matrix(std::size_t r, std::size_t c, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (double& v : m.values()) v = nd(rng);
  return m;
}

}  // namespace

TEST_CASE("teacher frame count") {
  CHECK(teacher_frames(16000) == 49);
  CHECK(teacher_frames(400) == 1);
  CHECK(teacher_frames(32000) == 99);
  CHECK_THROWS_AS(teacher_frames(399), Error);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(400, 100000);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = len(rng);
    std::size_t count = 0;
    for (std::size_t start = 0; start + 400 <= n; start += 320) ++count;
    CHECK(teacher_frames(n) == count);
  }
}

TEST_CASE("JTSF round trip stores float32 row-major") {
  testutil::TempDir dir("teacher");
  const Matrix m = random_matrix(7, 5, 2);
  write_jtsf(dir / "a.jtsf", m);
  const Matrix back = read_jtsf(dir / "a.jtsf");
  REQUIRE(back.rows() == 7);
  REQUIRE(back.cols() == 5);
  for (std::size_t i = 0; i < m.size(); ++i)
    CHECK(back.values()[i] == static_cast<double>(static_cast<float>(m.values()[i])));

  const std::string bytes = testutil::slurp(dir / "a.jtsf");
  REQUIRE(bytes.size() == 16 + 7 * 5 * 4);
  CHECK(bytes.substr(0, 4) == "JTSF");
  uint32_t hdr[3];
  std::memcpy(hdr, bytes.data() + 4, sizeof(hdr));
  CHECK(hdr[0] == 1);
  CHECK(hdr[1] == 7);
  CHECK(hdr[2] == 5);
  float second;
  std::memcpy(&second, bytes.data() + 16 + 4, 4);
  CHECK(second == static_cast<float>(m(0, 1)));
}

TEST_CASE("JTSF read errors") {
  testutil::TempDir dir("teacher");
  CHECK_THROWS_AS(read_jtsf(dir / "missing.jtsf"), Error);
  testutil::write_text(dir / "bad.jtsf", "NOPE0000000000000000");
  CHECK_THROWS_AS(read_jtsf(dir / "bad.jtsf"), Error);
  write_jtsf(dir / "t.jtsf", random_matrix(4, 3, 3));
  std::string bytes = testutil::slurp(dir / "t.jtsf");
  testutil::write_text(dir / "trunc.jtsf", bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_AS(read_jtsf(dir / "trunc.jtsf"), Error);
  bytes[4] = 2;
  testutil::write_text(dir / "ver.jtsf", bytes);
  CHECK_THROWS_AS(read_jtsf(dir / "ver.jtsf"), Error);
}

TEST_CASE("file-backed loading checks dimension") {
  testutil::TempDir dir("teacher");
  write_jtsf(dir / "utt1.jtsf", random_matrix(49, 32, 4));
  TeacherSource src{SourceKind::kFileBacked, dir.path(), 0, 32};
  const auto seq = load_teacher(src, "utt1");
  CHECK(seq.num_frames() == 49);
  CHECK(seq.dim() == 32);
  CHECK(seq.utt_id == "utt1");
  src.dim = 16;
  CHECK_THROWS_AS(load_teacher(src, "utt1"), Error);
  src.dim = 32;
  CHECK_THROWS_AS(load_teacher(src, "utt2"), Error);
  CHECK(feature_path(src, "utt1") == dir / "utt1.jtsf");
}

TEST_CASE("teacher source validation") {
  TeacherSource src;
  src.dim = 0;
  CHECK_THROWS_AS(validate(src), Error);
  src = TeacherSource{SourceKind::kFileBacked, "/nonexistent/dir/xyz", 0, 32};
  CHECK_THROWS_AS(validate(src), Error);
  CHECK(source_kind_from_string(to_string(SourceKind::kFileBacked)) == SourceKind::kFileBacked);
  CHECK(source_kind_from_string(to_string(SourceKind::kSynthetic)) == SourceKind::kSynthetic);
  CHECK_THROWS_AS(source_kind_from_string("network"), Error);
  TeacherSource synth;
  CHECK_THROWS_AS(load_teacher(synth, "u", nullptr), Error);
}

TEST_CASE("synthetic teacher shape, normalization and determinism") {
  const auto w = noise_wave(16000, 5);
  const auto a = synthetic_teacher(w, 32, 7);
  const auto b = synthetic_teacher(w, 32, 7);
  CHECK(a.num_frames() == 49);
  CHECK(a.dim() == 32);
  CHECK(a.vectors == b.vectors);
  for (std::size_t t = 0; t < a.num_frames(); ++t) {
    double n = 0.0;
    for (double v : a.vectors.row(t)) n += v * v;
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(synthetic_teacher(w, 32, 8).vectors != a.vectors);
  TeacherSource src{SourceKind::kSynthetic, {}, 7, 32};
  CHECK(load_teacher(src, "u", &w).vectors == a.vectors);
  CHECK_THROWS_AS(synthetic_teacher(noise_wave(399, 1), 32, 7), Error);
}

TEST_CASE("synthetic teacher on silence gives identical rows") {
  audio::Waveform w;
  w.samples.assign(8000, 0.0);
  const auto s = synthetic_teacher(w, 16, 3);
  for (std::size_t t = 1; t < s.num_frames(); ++t)
    for (std::size_t d = 0; d < 16; ++d) CHECK(s.vectors(t, d) == s.vectors(0, d));
}

TEST_CASE("synthetic teacher is invariant to waveform scaling") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const auto w = noise_wave(9000 + 333 * seed, seed);
    auto w2 = w;
    for (double& s : w2.samples) s *= 2.0;
    const auto a = synthetic_teacher(w, 24, seed);
    const auto b = synthetic_teacher(w2, 24, seed);
    REQUIRE(a.vectors.size() == b.vectors.size());
    for (std::size_t i = 0; i < a.vectors.size(); ++i)
      CHECK(b.vectors.values()[i] == doctest::Approx(a.vectors.values()[i]).epsilon(1e-9));
  }
}

TEST_CASE("frame slicing wraps like a wrap-padded crop") {
  TeacherSequence seq;
  seq.vectors = random_matrix(5, 3, 9);
  const Matrix s = slice_frames(seq, 3, 4);
  REQUIRE(s.rows() == 4);
  const std::size_t expect[] = {3, 4, 0, 1};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(s(r, c) == seq.vectors(expect[r], c));
  CHECK(slice_frames(seq, 0, 5) == seq.vectors);
}

TEST_CASE("feature checksum tracks content") {
  testutil::TempDir dir("teacher");
  write_jtsf(dir / "a.jtsf", random_matrix(3, 2, 1));
  write_jtsf(dir / "b.jtsf", random_matrix(3, 2, 2));
  const uint64_t c1 = checksum_features(dir.path());
  CHECK(checksum_features(dir.path()) == c1);
  testutil::write_text(dir / "notes.txt", "ignored");
  CHECK(checksum_features(dir.path()) == c1);
  write_jtsf(dir / "b.jtsf", random_matrix(3, 2, 3));
  CHECK(checksum_features(dir.path()) != c1);
}
