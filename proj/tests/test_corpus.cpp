// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "hippro/corpus.hpp"
#include "hippro/error.hpp"

using namespace hippro;

namespace {

bool same_example(const AttributedExample& a, const AttributedExample& b) {
  return a.hate_speech == b.hate_speech && a.counterspeech == b.counterspeech &&
         a.strategy == b.strategy && a.emotion == b.emotion && a.split == b.split &&
         a.target_group == b.target_group;
}

// Scratch file that cleans up after itself; tests run from the build tree.
struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("corpus_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  void write(const std::string& body) const {
    std::ofstream out(path, std::ios::binary);
    out << body;
  }
};

} // namespace

TEST_CASE("attribute names round-trip through their parsers") {
  for (std::size_t i = 0; i < kNumStrategies; ++i) {
    const auto s = static_cast<Strategy>(i);
    CHECK(parse_strategy(to_string(s)) == s);
    CHECK(parse_strategy(code_of(s)) == s);
  }
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    const auto e = static_cast<Emotion>(i);
    CHECK(parse_emotion(to_string(e)) == e);
    CHECK(parse_emotion(code_of(e)) == e);
  }
  CHECK(parse_strategy("Informative") == Strategy::Informative); // case-insensitive
  CHECK(parse_emotion("JOY") == Emotion::Joy);
  CHECK(parse_split("VALIDATION") == Split::Dev);
  CHECK_THROWS_AS(parse_strategy("sarcastic"), Error);
  CHECK_THROWS_AS(parse_emotion("boredom"), Error);
  CHECK_THROWS_AS(parse_split("holdout"), Error);
}

TEST_CASE("word_split lowercases and collapses whitespace") {
  const auto words = word_split("  The QUICK\tbrown\n fox ");
  REQUIRE(words.size() == 4);
  CHECK(words[0] == "the");
  CHECK(words[1] == "quick");
  CHECK(words[2] == "brown");
  CHECK(words[3] == "fox");
  CHECK(word_split("   ").empty());
}

TEST_CASE("vocabulary pins the special ids and stays closed") {
  const auto v = Vocabulary::from_tokens({"alpha", "beta"});
  CHECK(v.size() == 6);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::kSep) == "</s>");
  CHECK(v.id_of("alpha") == 4);
  CHECK(v.id_of("beta") == 5);
  CHECK(v.contains("alpha"));
  CHECK(!v.contains("gamma"));
  CHECK_THROWS_WITH_AS(v.id_of("gamma"), doctest::Contains("gamma"), Error);
  CHECK_THROWS_AS(v.token(99), Error);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"dup", "dup"}), Error);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"<pad>"}), Error); // collides with a special
}

TEST_CASE("encode/decode round-trips every corpus text") {
  const auto data = synth_corpus(40, 3);
  const auto v = Vocabulary::build(data);
  for (const auto& ex : data) {
    // decode(encode(x)) equals the canonical lowercase single-spaced form.
    std::string canon;
    for (const auto& w : word_split(ex.counterspeech)) {
      if (!canon.empty()) canon += ' ';
      canon += w;
    }
    CHECK(v.decode(v.encode(ex.counterspeech)) == canon);
    CHECK(v.decode(v.encode(ex.hate_speech)) != "");
  }
  // Attribute words are always present even if absent from the texts.
  for (std::size_t i = 0; i < kNumStrategies; ++i)
    CHECK(v.contains(to_string(static_cast<Strategy>(i))));
  for (std::size_t i = 0; i < kNumEmotions; ++i)
    CHECK(v.contains(to_string(static_cast<Emotion>(i))));
  // Non-special tokens are sorted, so ids are reproducible across runs.
  const auto& toks = v.tokens();
  for (std::size_t i = 5; i < toks.size(); ++i) CHECK(toks[i - 1] < toks[i]);
}

TEST_CASE("serialize_prompt layout and the emotion-extension property") {
  const auto data = synth_corpus(20, 11);
  const auto v = Vocabulary::build(data);
  for (const auto& ex : data) {
    const auto base = serialize_prompt(ex.hate_speech, ex.strategy, std::nullopt, v);
    const auto full = serialize_prompt(ex.hate_speech, ex.strategy, ex.emotion, v);

    const auto h = v.encode(ex.hate_speech);
    REQUIRE(base.size() == h.size() + 3);
    CHECK(base[h.size()] == Vocabulary::kSep);
    CHECK(base[h.size() + 1] == v.id_of(to_string(ex.strategy)));
    CHECK(base.back() == Vocabulary::kEos);

    // The emotion prompt extends the emotionless one: same tokens up to the
    // terminator, then "</s> emotion <eos>".
    REQUIRE(full.size() == base.size() + 2);
    for (std::size_t i = 0; i + 1 < base.size(); ++i) CHECK(full[i] == base[i]);
    CHECK(full[base.size() - 1] == Vocabulary::kSep);
    CHECK(full[base.size()] == v.id_of(to_string(ex.emotion)));
    CHECK(full.back() == Vocabulary::kEos);
  }
  CHECK_THROWS_AS(serialize_prompt("", Strategy::Positive, std::nullopt, v), Error);
}

TEST_CASE("synth_corpus is deterministic per seed and varies across seeds") {
  const auto a = synth_corpus(60, 7);
  const auto b = synth_corpus(60, 7);
  REQUIRE(a.size() == 60);
  REQUIRE(b.size() == 60);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_example(a[i], b[i]));

  const auto c = synth_corpus(60, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_example(a[i], c[i])) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("synth_corpus populates every attribute cell and splits 80/10/10") {
  const auto data = synth_corpus(200, 1);
  const auto rep = validate_splits(data);
  CHECK(rep.total == 200);
  CHECK(rep.per_split.at("train") == 160);
  CHECK(rep.per_split.at("dev") == 20);
  CHECK(rep.per_split.at("test") == 20);
  CHECK(rep.per_cell.size() == kNumStrategies * kNumEmotions);
  for (const auto& [cell, n] : rep.per_cell) CHECK(n == 10); // 200 / 20 cells
  CHECK(rep.ok());

  // Attributes cycle deterministically regardless of the seed.
  for (std::size_t k = 0; k < data.size(); ++k) {
    CHECK(data[k].strategy == static_cast<Strategy>(k % kNumStrategies));
    CHECK(data[k].emotion == static_cast<Emotion>((k / kNumStrategies) % kNumEmotions));
  }
}

TEST_CASE("synthetic counterspeech carries its marker words") {
  for (const auto& ex : synth_corpus(40, 5)) {
    const auto words = word_split(ex.counterspeech);
    REQUIRE(words.size() >= 3);
    CHECK(words.front() == strategy_marker(ex.strategy));
    CHECK(words.back() == emotion_marker(ex.emotion));
    REQUIRE(ex.target_group.has_value());
    CHECK(ex.hate_speech.find(*ex.target_group) != std::string::npos);
  }
  // The marker sets never collide with each other.
  std::set<std::string> markers;
  for (std::size_t i = 0; i < kNumStrategies; ++i)
    markers.insert(strategy_marker(static_cast<Strategy>(i)));
  for (std::size_t i = 0; i < kNumEmotions; ++i)
    markers.insert(emotion_marker(static_cast<Emotion>(i)));
  CHECK(markers.size() == kNumStrategies + kNumEmotions);
}

TEST_CASE("tiny synth corpora still produce all three splits") {
  const auto data = synth_corpus(5, 2); // warns (cannot fill 20 cells) but works
  REQUIRE(data.size() == 5);
  const auto rep = validate_splits(data);
  CHECK(rep.per_split.at("dev") == 1);
  CHECK(rep.per_split.at("test") == 1);
  CHECK(rep.per_split.at("train") == 3);
}

TEST_CASE("dataset save/load round-trips") {
  const auto data = synth_corpus(30, 9);
  TempFile f("roundtrip.jsonl");
  save_dataset(f.path, data);
  const auto back = load_dataset(f.path);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(same_example(data[i], back[i]));
}

TEST_CASE("dataset loader reports the offending line") {
  TempFile f("bad.jsonl");

  SUBCASE("malformed json") {
    f.write("{\"hate_speech\": \"x\", \"strategy\": \"IN\"}\nnot json at all\n");
    CHECK_THROWS_WITH_AS(load_dataset(f.path), doctest::Contains("line 2"), Error);
  }
  SUBCASE("unknown attribute") {
    f.write(
        "{\"hate_speech\":\"a b\",\"counterspeech\":\"c d\",\"strategy\":\"bogus\","
        "\"emotion\":\"joy\",\"split\":\"train\"}\n");
    try {
      load_dataset(f.path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == "unknown_strategy");
      CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
  }
  SUBCASE("missing field") {
    f.write("{\"hate_speech\":\"a\",\"strategy\":\"IN\",\"emotion\":\"joy\"}\n");
    CHECK_THROWS_WITH_AS(load_dataset(f.path), doctest::Contains("line 1"), Error);
  }
  SUBCASE("empty text field") {
    f.write(
        "{\"hate_speech\":\"  \",\"counterspeech\":\"c\",\"strategy\":\"IN\","
        "\"emotion\":\"joy\",\"split\":\"train\"}\n");
    try {
      load_dataset(f.path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == "empty_field");
    }
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_dataset("does_not_exist.jsonl"), Error);
  }
}

TEST_CASE("blank lines in a dataset file are ignored") {
  TempFile f("blank.jsonl");
  const auto data = synth_corpus(4, 1);
  save_dataset(f.path, data);
  {
    std::ofstream out(f.path, std::ios::binary | std::ios::app);
    out << "\n   \n";
  }
  CHECK(load_dataset(f.path).size() == 4);
}

TEST_CASE("validate_splits surfaces expectation mismatches") {
  const auto data = synth_corpus(50, 4);
  std::map<Split, std::size_t> wrong = {
      {Split::Train, 40}, {Split::Dev, 4}, {Split::Test, 6}};
  const auto rep = validate_splits(data, &wrong);
  CHECK(!rep.ok());
  REQUIRE(rep.mismatches.size() == 2); // train is right (40); dev and test are not
  CHECK(rep.mismatches[0].find("dev") != std::string::npos);
  CHECK(rep.mismatches[1].find("test") != std::string::npos);

  std::map<Split, std::size_t> right = {
      {Split::Train, 40}, {Split::Dev, 5}, {Split::Test, 5}};
  CHECK(validate_splits(data, &right).ok());
  CHECK_THROWS_AS(validate_splits({}), Error);
}

TEST_CASE("preference pair building conserves the train split") {
  const auto data = synth_corpus(40, 6);
  const auto v = Vocabulary::build(data);

  SUBCASE("echo generator marks every pair degenerate") {
    // Look up each prompt's ground truth so the generator can echo it.
    std::map<std::vector<TokenId>, std::vector<TokenId>> truth;
    for (const auto& ex : data)
      truth[serialize_prompt(ex.hate_speech, ex.strategy, ex.emotion, v)] =
          v.encode(ex.counterspeech);
    const auto rep = build_preference_pairs(
        data, v, [&](const std::vector<TokenId>& p) { return truth.at(p); });
    CHECK(rep.train_size == 32);
    CHECK(rep.pairs.size() + rep.skips.size() == rep.train_size);
    CHECK(rep.skips.empty());
    for (const auto& pair : rep.pairs) {
      CHECK(pair.degenerate);
      CHECK(pair.chosen == pair.rejected);
      CHECK(pair.chosen.back() == Vocabulary::kEos);
      CHECK(pair.prompt.back() == Vocabulary::kEos);
    }
  }

  SUBCASE("a distinct generation is never flagged degenerate") {
    const std::vector<TokenId> fixed = {v.id_of("why")};
    const auto rep = build_preference_pairs(
        data, v, [&](const std::vector<TokenId>&) { return fixed; });
    CHECK(rep.skips.empty());
    for (const auto& pair : rep.pairs) {
      CHECK(!pair.degenerate);
      CHECK(pair.rejected.size() == 2); // "why" + <eos>
      CHECK(pair.rejected.back() == Vocabulary::kEos);
    }
  }

  SUBCASE("generator failures are logged, not dropped") {
    std::size_t calls = 0;
    const auto rep = build_preference_pairs(data, v, [&](const std::vector<TokenId>& p) {
      if (++calls % 3 == 0) throw Error("boom", "generator failed");
      return p;
    });
    CHECK(rep.train_size == 32);
    CHECK(!rep.skips.empty());
    CHECK(rep.pairs.size() + rep.skips.size() == rep.train_size);
    for (const auto& line : rep.skips)
      CHECK(line.find("generator failed") != std::string::npos);
  }

  SUBCASE("a null generator is rejected up front") {
    CHECK_THROWS_AS(build_preference_pairs(data, v, GeneratorFn()), Error);
  }
}
