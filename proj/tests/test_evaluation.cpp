// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "hippro/error.hpp"
#include "hippro/evaluation.hpp"
#include "hippro/model.hpp"
#include "hippro/objectives.hpp"
#include "hippro/prefix.hpp"

using namespace hippro;

namespace {

using Toks = std::vector<std::string>;

// Clipped n-gram overlap by explicit one-to-one matching: every candidate
// n-gram consumes at most one identical reference n-gram. Deliberately a
// different algorithm from the hash-count implementation.
RougeScore bf_rouge_n(const Toks& cand, const Toks& ref, std::size_t n) {
  if (cand.size() < n || ref.size() < n) return {};
  auto grams = [&](const Toks& t) {
    std::vector<Toks> out;
    for (std::size_t i = 0; i + n <= t.size(); ++i)
      out.emplace_back(t.begin() + i, t.begin() + i + n);
    return out;
  };
  const auto cg = grams(cand);
  const auto rg = grams(ref);
  std::vector<bool> used(rg.size(), false);
  std::size_t match = 0;
  for (const auto& g : cg)
    for (std::size_t j = 0; j < rg.size(); ++j)
      if (!used[j] && rg[j] == g) {
        used[j] = true;
        ++match;
        break;
      }
  RougeScore s;
  s.precision = double(match) / double(cg.size());
  s.recall = double(match) / double(rg.size());
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall)
                                    : 0.0;
  return s;
}

// Exhaustive LCS: try every candidate subsequence (lengths capped at ~6).
std::size_t bf_lcs(const Toks& cand, const Toks& ref) {
  std::size_t best = 0;
  for (std::size_t mask = 0; mask < (std::size_t(1) << cand.size()); ++mask) {
    Toks sub;
    for (std::size_t i = 0; i < cand.size(); ++i)
      if (mask & (std::size_t(1) << i)) sub.push_back(cand[i]);
    std::size_t k = 0;
    for (std::size_t j = 0; j < ref.size() && k < sub.size(); ++j)
      if (ref[j] == sub[k]) ++k;
    if (k == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

Toks random_toks(std::mt19937_64& rng, std::size_t max_len) {
  static const std::vector<std::string> alphabet = {"a", "b", "c"};
  Toks out(rng() % (max_len + 1));
  for (auto& t : out) t = alphabet[rng() % alphabet.size()];
  return out;
}

} // namespace

TEST_CASE("rouge-1 and rouge-2 match their textbook values") {
  const auto r = rouge_n("the cat", "the cat sat", 1);
  CHECK(r.precision == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.f1 == doctest::Approx(0.8).epsilon(1e-15));

  const auto r2 = rouge_n("a c e", "a b c d e", 1);
  CHECK(r2.precision == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r2.recall == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r2.f1 == doctest::Approx(0.75).epsilon(1e-15));

  // Clipping: a repeated candidate word only gets credit once per
  // reference occurrence.
  const auto rc = rouge_n("the the the", "the cat", 1);
  CHECK(rc.precision == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(rc.recall == doctest::Approx(0.5).epsilon(1e-15));

  const auto b = rouge_n("the cat sat", "the cat lay", 2);
  CHECK(b.precision == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(b.recall == doctest::Approx(0.5).epsilon(1e-15));

  // Identical sentences are a perfect match; case is folded first.
  const auto same = rouge_n("The CAT", "the cat", 1);
  CHECK(same.f1 == 1.0);

  // Either side shorter than n scores zero across the board.
  const auto short2 = rouge_n("a", "a b c", 2);
  CHECK(short2.precision == 0.0);
  CHECK(short2.recall == 0.0);
  CHECK(short2.f1 == 0.0);
  CHECK(rouge_n("", "a b", 1).f1 == 0.0);
  CHECK_THROWS_AS(rouge_n("a b", "a b", 3), Error);
}

TEST_CASE("rouge-l follows the LCS definition") {
  // LCS("the cat sat on", "the cat lay on") = "the cat on" -> 3.
  const auto r = rouge_l("the cat sat on", "the cat lay on");
  CHECK(r.precision == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(r.recall == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(rouge_l("x y", "p q").f1 == 0.0);
  CHECK(rouge_l("a b c", "a b c").f1 == 1.0);
  CHECK(rouge_l("", "a").f1 == 0.0);
}

TEST_CASE("rouge agrees with brute-force oracles on random inputs") {
  std::mt19937_64 rng(4242);
  for (int it = 0; it < 400; ++it) {
    const Toks cand = random_toks(rng, 6);
    const Toks ref = random_toks(rng, 6);

    for (std::size_t n : {std::size_t(1), std::size_t(2)}) {
      const auto got = rouge_n_tokens(cand, ref, int(n));
      const auto want = bf_rouge_n(cand, ref, n);
      CHECK(got.precision == doctest::Approx(want.precision).epsilon(1e-12));
      CHECK(got.recall == doctest::Approx(want.recall).epsilon(1e-12));
      CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
      // Swapping the arguments transposes precision and recall.
      const auto swapped = rouge_n_tokens(ref, cand, int(n));
      CHECK(got.precision == doctest::Approx(swapped.recall).epsilon(1e-12));
      CHECK(got.recall == doctest::Approx(swapped.precision).epsilon(1e-12));
    }

    const auto gl = rouge_l_tokens(cand, ref);
    if (cand.empty() || ref.empty()) {
      CHECK(gl.f1 == 0.0);
    } else {
      const double lcs = double(bf_lcs(cand, ref));
      CHECK(gl.precision == doctest::Approx(lcs / double(cand.size())).epsilon(1e-12));
      CHECK(gl.recall == doctest::Approx(lcs / double(ref.size())).epsilon(1e-12));
    }
  }
}

TEST_CASE("marker scorers judge the synthetic corpus exactly") {
  const Scorer& strat = get_scorer("marker_strategy");
  const Scorer& emo = get_scorer("marker_emotion");
  CHECK(strat.name() == "marker_strategy");

  CHECK(strat.score("factcheck the claims with hope", "informative") == 1.0);
  CHECK(strat.score("denounce this with hope", "informative") == 0.0);
  CHECK(strat.score("Factcheck loudly", "IN") == 1.0); // codes + case folding
  CHECK(strat.score("", "informative") == 0.0);
  CHECK(emo.score("factcheck it with hope", "joy") == 1.0);
  CHECK(emo.score("factcheck it with fury", "joy") == 0.0);
  CHECK_THROWS_AS(strat.score("x", "nonsense"), Error);
  CHECK_THROWS_AS(get_scorer("no_such_scorer"), Error);

  // Every generated example satisfies both oracles by construction.
  for (const auto& ex : synth_corpus(30, 2)) {
    CHECK(strat.score(ex.counterspeech, to_string(ex.strategy)) == 1.0);
    CHECK(emo.score(ex.counterspeech, to_string(ex.emotion)) == 1.0);
  }
}

TEST_CASE("conformity counts threshold crossings") {
  struct Half final : Scorer {
    std::string name() const override { return "half"; }
    double score(const std::string& text, const std::string&) const override {
      return text == "yes" ? 0.5 : 0.49;
    }
  };
  const Half h;
  const std::vector<std::pair<std::string, std::string>> outputs = {
      {"yes", "x"}, {"no", "x"}, {"yes", "x"}, {"no", "x"}};
  CHECK(conformity(outputs, h) == doctest::Approx(0.5).epsilon(1e-15)); // >= 0.5 counts
  CHECK(conformity(outputs, h, 0.4) == 1.0);
  CHECK(conformity(outputs, h, 0.6) == 0.0);
  CHECK(conformity({}, h) == 0.0);

  // User-registered scorers are retrievable by name.
  register_scorer(std::make_shared<Half>());
  CHECK(get_scorer("half").score("yes", "") == 0.5);
}

TEST_CASE("paired t-test reproduces a hand-computed case") {
  // d = {1,2,3,4,5}: mean 3, sd sqrt(2.5), t = 3 / sqrt(2.5/5) = 4.2426...
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> b = {0, 0, 0, 0, 0};
  const auto r = paired_ttest(a, b);
  CHECK(!r.degenerate);
  CHECK(r.df == 4);
  CHECK(r.mean_diff == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(r.t == doctest::Approx(4.242640687119285).epsilon(1e-12));
  // Two-sided p from the exact t CDF, frozen from two independent
  // numerical integrations of the density.
  CHECK(r.p == doctest::Approx(0.0132355995636835).epsilon(1e-9));
  CHECK(r.method.find("exact") != std::string::npos);

  // Swapping the samples flips t and keeps p.
  const auto rswap = paired_ttest(b, a);
  CHECK(rswap.t == doctest::Approx(-r.t).epsilon(1e-12));
  CHECK(rswap.p == doctest::Approx(r.p).epsilon(1e-12));
}

TEST_CASE("paired t-test handles degenerate and large-sample inputs") {
  const std::vector<double> a = {1.0, 2.0, 3.0};
  const auto same = paired_ttest(a, a);
  CHECK(same.degenerate);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);
  CHECK(same.method == "degenerate: identical samples");

  // Constant shift with zero spread is degenerate too, but keeps the mean.
  const std::vector<double> shifted = {2.0, 3.0, 4.0};
  const auto shift = paired_ttest(shifted, a);
  CHECK(shift.degenerate);
  CHECK(shift.mean_diff == doctest::Approx(1.0).epsilon(1e-15));

  // Above df 30 the normal approximation takes over.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<double> big_a(40), big_b(40);
  for (std::size_t i = 0; i < 40; ++i) {
    big_b[i] = double(i % 5);
    big_a[i] = big_b[i] + 1.0 + noise(rng);
  }
  const auto r = paired_ttest(big_a, big_b);
  CHECK(r.df == 39);
  CHECK(r.method.find("normal approximation") != std::string::npos);
  CHECK(r.t > 0.0);
  CHECK(r.p == doctest::Approx(std::erfc(std::abs(r.t) / std::sqrt(2.0))).epsilon(1e-12));
  CHECK(r.p > 0.0);
  CHECK(r.p < 0.05);

  CHECK_THROWS_AS(paired_ttest({1.0}, {2.0}), Error);            // too short
  CHECK_THROWS_AS(paired_ttest({1.0, 2.0}, {1.0}), Error);       // misaligned
  const auto j = nlohmann::json::parse(ttest_json(r));
  CHECK(j.at("t").get<double>() == doctest::Approx(r.t));
  CHECK(j.at("p").get<double>() == doctest::Approx(r.p));
  CHECK(j.at("df").get<std::size_t>() == 39);
  CHECK(j.at("method").get<std::string>() == r.method);
}

TEST_CASE("corpus statistics aggregate splits, attributes, and lengths") {
  const auto data = synth_corpus(40, 1);
  const auto stats = corpus_stats(data);
  CHECK(stats.total == 40);
  CHECK(stats.per_split.at("train") == 32);
  CHECK(stats.per_split.at("dev") == 4);
  CHECK(stats.per_split.at("test") == 4);
  for (const auto& [k, n] : stats.per_strategy) CHECK(n == 10);
  for (const auto& [k, n] : stats.per_emotion) CHECK(n == 8);
  CHECK(stats.per_strategy.size() == kNumStrategies);
  CHECK(stats.per_emotion.size() == kNumEmotions);
  for (const auto& [k, v] : stats.mean_len_per_emotion) CHECK(v > 0.0);

  // Cells carry the target group as a third key component.
  for (const auto& [k, n] : stats.per_cell)
    CHECK(std::count(k.begin(), k.end(), '|') == 2);

  // Absent groups land in the "(none)" bucket.
  std::vector<AttributedExample> bare(2);
  bare[0].hate_speech = bare[1].hate_speech = "h";
  bare[0].counterspeech = "a b c";
  bare[1].counterspeech = "d e";
  const auto s2 = corpus_stats(bare);
  CHECK(s2.mean_len_per_group.at("(none)") == doctest::Approx(2.5).epsilon(1e-15));

  const auto j = nlohmann::json::parse(corpus_stats_json(stats));
  CHECK(j.at("total").get<std::size_t>() == 40);
  CHECK(j.at("per_split").at("train").get<std::size_t>() == 32);
  CHECK(j.at("per_strategy").size() == kNumStrategies);
}

TEST_CASE("evaluate_model aggregates are the weighted means of the cells") {
  ModelConfig cfg;
  cfg.vocab_size = 0; // set from the vocabulary below
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ffn = 16;
  cfg.max_len = 64;

  const auto data = synth_corpus(12, 13);
  const auto vocab = Vocabulary::build(data);
  cfg.vocab_size = vocab.size();
  SeqModel model(cfg, 3);
  const auto stack = init_stage1(2, cfg, 4);

  const Scorer& strat = get_scorer("marker_strategy");
  const Scorer& emo = get_scorer("marker_emotion");
  const auto report = evaluate_model(model, stack, vocab, data, 6, strat, emo);

  CHECK(report.n == 12);
  std::size_t cell_total = 0;
  double w1 = 0, w2 = 0, wl = 0, ws = 0, we = 0;
  for (const auto& [key, cell] : report.cells) {
    cell_total += cell.n;
    w1 += cell.rouge1 * double(cell.n);
    w2 += cell.rouge2 * double(cell.n);
    wl += cell.rougeL * double(cell.n);
    ws += cell.strategy_conformity * double(cell.n);
    we += cell.emotion_conformity * double(cell.n);
    CHECK(cell.rouge1 >= 0.0);
    CHECK(cell.rouge1 <= 1.0);
    CHECK(cell.strategy_conformity >= 0.0);
    CHECK(cell.strategy_conformity <= 1.0);
  }
  CHECK(cell_total == 12);
  const double dn = double(report.n);
  CHECK(report.rouge1 == doctest::Approx(w1 / dn).epsilon(1e-12));
  CHECK(report.rouge2 == doctest::Approx(w2 / dn).epsilon(1e-12));
  CHECK(report.rougeL == doctest::Approx(wl / dn).epsilon(1e-12));
  CHECK(report.strategy_conformity == doctest::Approx(ws / dn).epsilon(1e-12));
  CHECK(report.emotion_conformity == doctest::Approx(we / dn).epsilon(1e-12));
  CHECK(report.mean_margin == 0.0); // no pairs supplied

  // The JSON rendering is deterministic and faithful.
  const auto json_a = eval_report_json(report);
  const auto json_b = eval_report_json(evaluate_model(model, stack, vocab, data, 6,
                                                      strat, emo));
  CHECK(json_a == json_b);
  const auto j = nlohmann::json::parse(json_a);
  CHECK(j.at("n").get<std::size_t>() == 12);
  CHECK(j.at("rouge1").get<double>() == doctest::Approx(report.rouge1).epsilon(1e-12));
  CHECK(j.at("cells").size() == report.cells.size());
}

TEST_CASE("generate_text is greedy decoding of the full prompt") {
  ModelConfig cfg;
  const auto data = synth_corpus(8, 21);
  const auto vocab = Vocabulary::build(data);
  cfg.vocab_size = vocab.size();
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ffn = 16;
  cfg.max_len = 64;
  SeqModel model(cfg, 5);
  const auto stack = init_stage1(2, cfg, 6);

  const auto& ex = data.front();
  const auto prompt = serialize_prompt(ex.hate_speech, ex.strategy, ex.emotion, vocab);
  CHECK(generate_text(model, stack, vocab, ex, 5) ==
        vocab.decode(model.greedy_decode(prompt, &stack, 5)));
}

TEST_CASE("preference_margin averages the pair log-prob gaps") {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ffn = 16;
  cfg.max_len = 32;
  SeqModel model(cfg, 41);
  auto stack = init_stage1(2, cfg, 42);
  init_stage2(stack, 2, 43);

  std::vector<PreferencePair> pairs(3);
  pairs[0] = {{5, 6, 2}, {7, 8, 2}, {9, 2}, false};
  pairs[1] = {{6, 7, 2}, {10, 2}, {11, 12, 2}, false};
  pairs[2] = {{8, 9, 10, 2}, {13, 2}, {13, 2}, true};

  double want = 0.0;
  for (const auto& p : pairs)
    want += model.sequence_logprob(p.prompt, p.chosen, &stack, true) -
            model.sequence_logprob(p.prompt, p.rejected, &stack, true);
  want /= 3.0;
  CHECK(preference_margin(model, stack, pairs) == doctest::Approx(want).epsilon(1e-12));
  CHECK_THROWS_AS(preference_margin(model, stack, {}), Error);
}
