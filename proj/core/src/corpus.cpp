// SPDX-License-Identifier: Apache-2.0
#include "hippro/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hippro/error.hpp"

namespace hippro {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Attributes

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Informative: return "informative";
    case Strategy::Denouncing: return "denouncing";
    case Strategy::Positive: return "positive";
    case Strategy::Questioning: return "questioning";
  }
  return {};
}

std::string to_string(Emotion e) {
  switch (e) {
    case Emotion::Anger: return "anger";
    case Emotion::Disgust: return "disgust";
    case Emotion::Joy: return "joy";
    case Emotion::Sadness: return "sadness";
    case Emotion::Surprise: return "surprise";
  }
  return {};
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return {};
}

std::string code_of(Strategy s) {
  switch (s) {
    case Strategy::Informative: return "IN";
    case Strategy::Denouncing: return "DE";
    case Strategy::Positive: return "PO";
    case Strategy::Questioning: return "QU";
  }
  return {};
}

std::string code_of(Emotion e) {
  switch (e) {
    case Emotion::Anger: return "AN";
    case Emotion::Disgust: return "DI";
    case Emotion::Joy: return "JO";
    case Emotion::Sadness: return "SA";
    case Emotion::Surprise: return "SU";
  }
  return {};
}

Strategy parse_strategy(const std::string& text) {
  const std::string t = lower(text);
  if (t == "in" || t == "informative") return Strategy::Informative;
  if (t == "de" || t == "denouncing") return Strategy::Denouncing;
  if (t == "po" || t == "positive") return Strategy::Positive;
  if (t == "qu" || t == "questioning") return Strategy::Questioning;
  fail("unknown_strategy", "unknown strategy \"" + text + "\"");
}

Emotion parse_emotion(const std::string& text) {
  const std::string t = lower(text);
  if (t == "an" || t == "anger") return Emotion::Anger;
  if (t == "di" || t == "disgust") return Emotion::Disgust;
  if (t == "jo" || t == "joy") return Emotion::Joy;
  if (t == "sa" || t == "sadness") return Emotion::Sadness;
  if (t == "su" || t == "surprise") return Emotion::Surprise;
  fail("unknown_emotion", "unknown emotion \"" + text + "\"");
}

Split parse_split(const std::string& text) {
  const std::string t = lower(text);
  if (t == "train") return Split::Train;
  if (t == "dev" || t == "val" || t == "validation") return Split::Dev;
  if (t == "test") return Split::Test;
  fail("unknown_split", "unknown split \"" + text + "\"");
}

// ---------------------------------------------------------------------------
// Vocabulary

std::vector<std::string> word_split(const std::string& text) {
  std::istringstream in(lower(text));
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& non_special) {
  Vocabulary v;
  v.tokens_ = {"<pad>", "<bos>", "<eos>", "</s>"};
  for (const std::string& t : non_special) v.tokens_.push_back(t);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second)
      fail("vocab", "duplicate token \"" + v.tokens_[i] + "\"");
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<AttributedExample>& corpus) {
  std::set<std::string> words;
  for (const AttributedExample& ex : corpus) {
    for (const std::string& w : word_split(ex.hate_speech)) words.insert(w);
    for (const std::string& w : word_split(ex.counterspeech)) words.insert(w);
  }
  for (std::size_t i = 0; i < kNumStrategies; ++i)
    words.insert(to_string(static_cast<Strategy>(i)));
  for (std::size_t i = 0; i < kNumEmotions; ++i)
    words.insert(to_string(static_cast<Emotion>(i)));
  words.erase("</s>"); // reserved rendering of SEP
  return from_tokens(std::vector<std::string>(words.begin(), words.end()));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) fail("vocab", "token id out of range");
  return tokens_[id];
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

TokenId Vocabulary::id_of(const std::string& token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) fail("oov", "token \"" + token + "\" not in vocabulary");
  return it->second;
}

std::vector<TokenId> Vocabulary::encode(const std::string& text) const {
  std::vector<TokenId> ids;
  for (const std::string& w : word_split(text)) ids.push_back(id_of(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt serialization

std::vector<TokenId> serialize_prompt(const std::string& hate_speech, Strategy strategy,
                                      std::optional<Emotion> emotion,
                                      const Vocabulary& vocab) {
  std::vector<TokenId> ids = vocab.encode(hate_speech);
  if (ids.empty()) fail("empty", "serialize_prompt: hate speech is empty");
  ids.push_back(Vocabulary::kSep);
  ids.push_back(vocab.id_of(to_string(strategy)));
  if (emotion) {
    ids.push_back(Vocabulary::kSep);
    ids.push_back(vocab.id_of(to_string(*emotion)));
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

// ---------------------------------------------------------------------------
// Dataset IO

namespace {

std::string trimmed(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

} // namespace

std::vector<AttributedExample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io", "cannot open dataset file " + path);
  std::vector<AttributedExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trimmed(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("parse", "malformed line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto where = " at line " + std::to_string(line_no);
    try {
      AttributedExample ex;
      ex.hate_speech = trimmed(j.at("hate_speech").get<std::string>());
      ex.counterspeech = trimmed(j.at("counterspeech").get<std::string>());
      if (ex.hate_speech.empty()) fail("empty_field", "empty hate_speech" + where);
      if (ex.counterspeech.empty()) fail("empty_field", "empty counterspeech" + where);
      ex.strategy = parse_strategy(j.at("strategy").get<std::string>());
      ex.emotion = parse_emotion(j.at("emotion").get<std::string>());
      ex.split = parse_split(j.at("split").get<std::string>());
      if (j.contains("target_group") && !j["target_group"].is_null())
        ex.target_group = j["target_group"].get<std::string>();
      out.push_back(std::move(ex));
    } catch (const Error& e) {
      if (e.kind() == "unknown_strategy" || e.kind() == "unknown_emotion" ||
          e.kind() == "unknown_split")
        fail(e.kind(), std::string(e.what()) + where);
      throw;
    } catch (const nlohmann::json::exception& e) {
      fail("parse", "missing or mistyped field" + where + ": " + e.what());
    }
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<AttributedExample>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("io", "cannot write dataset file " + path);
  for (const AttributedExample& ex : data) {
    nlohmann::ordered_json j;
    j["hate_speech"] = ex.hate_speech;
    j["strategy"] = to_string(ex.strategy);
    j["emotion"] = to_string(ex.emotion);
    j["counterspeech"] = ex.counterspeech;
    if (ex.target_group) j["target_group"] = *ex.target_group;
    j["split"] = to_string(ex.split);
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Split validation

std::string cell_key(Strategy s, Emotion e) {
  return code_of(s) + "|" + code_of(e);
}

SplitReport validate_splits(const std::vector<AttributedExample>& dataset,
                            const std::map<Split, std::size_t>* expected) {
  if (dataset.empty()) fail("empty", "validate_splits: dataset is empty");
  SplitReport rep;
  rep.per_split = {{"train", 0}, {"dev", 0}, {"test", 0}};
  for (const AttributedExample& ex : dataset) {
    rep.per_split[to_string(ex.split)] += 1;
    rep.per_cell[cell_key(ex.strategy, ex.emotion)] += 1;
    rep.total += 1;
  }
  if (expected) {
    for (const auto& [split, want] : *expected) {
      const std::size_t got = rep.per_split[to_string(split)];
      if (got != want)
        rep.mismatches.push_back("split " + to_string(split) + ": expected " +
                                 std::to_string(want) + ", found " + std::to_string(got));
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

const std::string& strategy_marker(Strategy s) {
  static const std::string m[kNumStrategies] = {"factcheck", "denounce", "uplift", "why"};
  return m[static_cast<std::size_t>(s)];
}

const std::string& emotion_marker(Emotion e) {
  static const std::string m[kNumEmotions] = {"fury", "revulsion", "hope", "sorrow",
                                              "astonishment"};
  return m[static_cast<std::size_t>(e)];
}

namespace {

const std::vector<std::string>& target_groups() {
  static const std::vector<std::string> g = {
      "muslims", "women",    "lgbt",     "jews", "refugees",
      "asians",  "migrants", "disabled", "poc",  "foreigners"};
  return g;
}

const std::vector<std::string>& hate_templates() {
  static const std::vector<std::string> t = {
      "% are a problem for this country", "% do not belong here",
      "% ruin everything they touch",     "% can never be trusted",
      "send all % away now",              "% are a threat to our way of life"};
  return t;
}

std::string expand(const std::string& tpl, const std::string& group) {
  std::string out = tpl;
  const std::size_t pos = out.find('%');
  out.replace(pos, 1, group);
  return out;
}

std::string make_counterspeech(Strategy s, Emotion e, const std::string& group) {
  std::string body;
  switch (s) {
    case Strategy::Informative:
      body = "evidence shows " + group + " contribute far more than rumours claim";
      break;
    case Strategy::Denouncing:
      body = "this hatred against " + group + " has no place among us";
      break;
    case Strategy::Positive:
      body = "our neighbours " + group + " enrich this community every day";
      break;
    case Strategy::Questioning:
      body = "would you blame " + group + " without meeting even one";
      break;
  }
  return strategy_marker(s) + " " + body + " with " + emotion_marker(e);
}

} // namespace

std::vector<AttributedExample> synth_corpus(std::size_t n, std::uint64_t seed) {
  if (n < 1) fail("domain", "synth_corpus: n must be at least 1");
  if (n < kNumStrategies * kNumEmotions)
    std::cerr << "warning: synth_corpus n=" << n
              << " cannot populate all 20 strategy x emotion cells\n";

  std::mt19937_64 rng(seed);
  std::vector<AttributedExample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto strategy = static_cast<Strategy>(k % kNumStrategies);
    const auto emotion = static_cast<Emotion>((k / kNumStrategies) % kNumEmotions);
    const std::string& group = target_groups()[rng() % target_groups().size()];
    const std::string& tpl = hate_templates()[rng() % hate_templates().size()];
    AttributedExample ex;
    ex.hate_speech = expand(tpl, group);
    ex.strategy = strategy;
    ex.emotion = emotion;
    ex.counterspeech = make_counterspeech(strategy, emotion, group);
    ex.target_group = group;
    out.push_back(std::move(ex));
  }

  // 80/10/10 via a seeded shuffle of indices; dev and test take n/10 each.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_dev = std::max<std::size_t>(1, n / 10);
  const std::size_t n_test = std::max<std::size_t>(1, n / 10);
  for (std::size_t i = 0; i < n; ++i) {
    Split s = Split::Train;
    if (i < n_dev)
      s = Split::Dev;
    else if (i < n_dev + n_test)
      s = Split::Test;
    out[order[i]].split = s;
  }
  return out;
}

PairBuildReport build_preference_pairs(const std::vector<AttributedExample>& dataset,
                                       const Vocabulary& vocab,
                                       const GeneratorFn& generate) {
  if (!generate) fail("input", "pair building needs a generator");
  PairBuildReport report;
  std::size_t index = 0;
  for (const AttributedExample& ex : dataset) {
    ++index;
    if (ex.split != Split::Train) continue;
    ++report.train_size;
    try {
      PreferencePair pair;
      pair.prompt = serialize_prompt(ex.hate_speech, ex.strategy, ex.emotion, vocab);
      pair.chosen = vocab.encode(ex.counterspeech);
      pair.chosen.push_back(Vocabulary::kEos);
      pair.rejected = generate(pair.prompt);
      pair.rejected.push_back(Vocabulary::kEos);
      pair.degenerate = pair.chosen == pair.rejected;
      report.pairs.push_back(std::move(pair));
    } catch (const std::exception& e) {
      report.skips.push_back("example " + std::to_string(index) + ": " + e.what());
    }
  }
  return report;
}

} // namespace hippro
