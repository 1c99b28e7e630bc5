#include <doctest.h>

#include "jtss/common.hpp"
#include "jtss/manifest.hpp"
#include "test_util.hpp"

using namespace jtss;

TEST_CASE("string speaker ids map to sorted dense labels") {
  testutil::TempDir dir("manifest");
  testutil::write_text(dir / "m.jsonl",
                       R"({"utt_id":"a","speaker_id":"bob","path":"wav/a.wav","n_samples":16000}
{"utt_id":"b","speaker_id":"alice","path":"/abs/b.wav","n_samples":8000}

{"utt_id":"c","speaker_id":"bob","path":"c.wav","n_samples":400}
)");
  const auto m = manifest::load(dir / "m.jsonl");
  REQUIRE(m.utterances.size() == 3);
  CHECK(m.speakers == std::vector<std::string>{"alice", "bob"});
  CHECK(m.utterances[0].label == 1);
  CHECK(m.utterances[1].label == 0);
  CHECK(m.utterances[2].label == 1);
  CHECK(m.utterances[0].path == dir / "wav/a.wav");
  CHECK(m.utterances[1].path == "/abs/b.wav");
  CHECK(m.utterances[0].n_samples == 16000);
}

TEST_CASE("integer speaker ids are labels and must be dense") {
  testutil::TempDir dir("manifest");
  testutil::write_text(dir / "ok.jsonl",
                       R"({"utt_id":"a","speaker_id":1,"path":"a.wav","n_samples":1}
{"utt_id":"b","speaker_id":0,"path":"b.wav","n_samples":1}
{"utt_id":"c","speaker_id":2,"path":"c.wav","n_samples":1}
)");
  const auto m = manifest::load(dir / "ok.jsonl");
  CHECK(m.utterances[0].label == 1);
  CHECK(m.utterances[1].label == 0);
  CHECK(m.utterances[2].label == 2);
  CHECK(m.speakers.size() == 3);

  testutil::write_text(dir / "gap.jsonl",
                       R"({"utt_id":"a","speaker_id":0,"path":"a.wav","n_samples":1}
{"utt_id":"b","speaker_id":2,"path":"b.wav","n_samples":1}
)");
  CHECK_THROWS_AS(manifest::load(dir / "gap.jsonl"), Error);
}

TEST_CASE("manifest errors") {
  testutil::TempDir dir("manifest");
  CHECK_THROWS_AS(manifest::load(dir / "missing.jsonl"), Error);
  testutil::write_text(dir / "dup.jsonl",
                       R"({"utt_id":"a","speaker_id":"s","path":"a.wav","n_samples":1}
{"utt_id":"a","speaker_id":"t","path":"b.wav","n_samples":1}
)");
  CHECK_THROWS_AS(manifest::load(dir / "dup.jsonl"), Error);
  testutil::write_text(dir / "field.jsonl", R"({"utt_id":"a","speaker_id":"s","n_samples":1})"
                                            "\n");
  CHECK_THROWS_AS(manifest::load(dir / "field.jsonl"), Error);
  testutil::write_text(dir / "json.jsonl", "{not json}\n");
  CHECK_THROWS_AS(manifest::load(dir / "json.jsonl"), Error);
  testutil::write_text(dir / "empty.jsonl", "\n");
  CHECK_THROWS_AS(manifest::load(dir / "empty.jsonl"), Error);
}

TEST_CASE("manifest save writes relative paths and reloads") {
  testutil::TempDir dir("manifest");
  std::vector<manifest::Utterance> utts{{"u1", "spk001", dir / "wav" / "u1.wav", 32000, -1},
                                        {"u2", "spk000", "/elsewhere/u2.wav", 16000, -1}};
  manifest::save(dir / "out.jsonl", utts);
  const std::string text = testutil::slurp(dir / "out.jsonl");
  CHECK(text.find("\"wav/u1.wav\"") != std::string::npos);
  const auto m = manifest::load(dir / "out.jsonl");
  REQUIRE(m.utterances.size() == 2);
  CHECK(std::filesystem::weakly_canonical(m.utterances[0].path) == std::filesystem::weakly_canonical(utts[0].path));
  CHECK(std::filesystem::weakly_canonical(m.utterances[1].path) == "/elsewhere/u2.wav");
  CHECK(m.utterances[0].label == 1);
  CHECK(m.utterances[1].label == 0);
}
