// SPDX-License-Identifier: Apache-2.0
#include "hippro/evaluation.hpp"

#include <cmath>
#include <unordered_map>

#include "json.hpp"

#include "hippro/error.hpp"
#include "hippro/parallel.hpp"

namespace hippro {

// ---------------------------------------------------------------------------
// ROUGE

namespace {

std::unordered_map<std::string, std::size_t> ngram_counts(
    const std::vector<std::string>& toks, std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f'); // unit separator; never in a token
      key += toks[i + j];
    }
    ++counts[key];
  }
  return counts;
}

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

} // namespace

RougeScore rouge_n_tokens(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference, int n) {
  if (n != 1 && n != 2) fail("input", "rouge_n supports n in {1,2}");
  const std::size_t un = static_cast<std::size_t>(n);
  if (candidate.size() < un || reference.size() < un) return {};
  const auto cand = ngram_counts(candidate, un);
  const auto ref = ngram_counts(reference, un);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  const double total_cand = static_cast<double>(candidate.size() - un + 1);
  const double total_ref = static_cast<double>(reference.size() - un + 1);
  RougeScore s;
  s.precision = static_cast<double>(overlap) / total_cand;
  s.recall = static_cast<double>(overlap) / total_ref;
  s.f1 = f1_of(s.precision, s.recall);
  return s;
}

RougeScore rouge_l_tokens(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) return {};
  // Classic O(n*m) LCS table, rolling rows.
  std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (std::size_t i = 1; i <= candidate.size(); ++i) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      if (candidate[i - 1] == reference[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[reference.size()]);
  RougeScore s;
  s.precision = lcs / static_cast<double>(candidate.size());
  s.recall = lcs / static_cast<double>(reference.size());
  s.f1 = f1_of(s.precision, s.recall);
  return s;
}

RougeScore rouge_n(const std::string& candidate, const std::string& reference, int n) {
  return rouge_n_tokens(word_split(candidate), word_split(reference), n);
}

RougeScore rouge_l(const std::string& candidate, const std::string& reference) {
  return rouge_l_tokens(word_split(candidate), word_split(reference));
}

// ---------------------------------------------------------------------------
// Scorers

namespace {

class MarkerStrategyScorer final : public Scorer {
public:
  std::string name() const override { return "marker_strategy"; }
  double score(const std::string& text, const std::string& attribute) const override {
    const auto toks = word_split(text);
    if (toks.empty()) return 0.0;
    return toks.front() == strategy_marker(parse_strategy(attribute)) ? 1.0 : 0.0;
  }
};

class MarkerEmotionScorer final : public Scorer {
public:
  std::string name() const override { return "marker_emotion"; }
  double score(const std::string& text, const std::string& attribute) const override {
    const auto toks = word_split(text);
    if (toks.empty()) return 0.0;
    return toks.back() == emotion_marker(parse_emotion(attribute)) ? 1.0 : 0.0;
  }
};

std::map<std::string, std::shared_ptr<Scorer>>& scorer_registry() {
  static std::map<std::string, std::shared_ptr<Scorer>> reg = [] {
    std::map<std::string, std::shared_ptr<Scorer>> r;
    r["marker_strategy"] = std::make_shared<MarkerStrategyScorer>();
    r["marker_emotion"] = std::make_shared<MarkerEmotionScorer>();
    return r;
  }();
  return reg;
}

} // namespace

void register_scorer(std::shared_ptr<Scorer> scorer) {
  if (!scorer) fail("input", "cannot register a null scorer");
  scorer_registry()[scorer->name()] = std::move(scorer);
}

const Scorer& get_scorer(const std::string& name) {
  auto& reg = scorer_registry();
  auto it = reg.find(name);
  if (it == reg.end()) fail("unknown_scorer", "no scorer named '" + name + "'");
  return *it->second;
}

double conformity(const std::vector<std::pair<std::string, std::string>>& outputs,
                  const Scorer& scorer, double threshold) {
  if (outputs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& [text, attribute] : outputs)
    if (scorer.score(text, attribute) >= threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

// ---------------------------------------------------------------------------
// Preference margin

double preference_margin(const SeqModel& model, const HierarchicalPrefixStack& stack,
                         const std::vector<PreferencePair>& pairs) {
  if (pairs.empty()) fail("input", "preference_margin needs at least one pair");
  std::vector<double> margins(pairs.size(), 0.0);
  parallel_for(pairs.size(), [&](std::size_t i) {
    const PreferencePair& p = pairs[i];
    margins[i] = model.sequence_logprob(p.prompt, p.chosen, &stack, true) -
                 model.sequence_logprob(p.prompt, p.rejected, &stack, true);
  });
  double sum = 0.0;
  for (double m : margins) sum += m;
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Corpus statistics

CorpusStats corpus_stats(const std::vector<AttributedExample>& dataset) {
  CorpusStats st;
  st.total = dataset.size();
  std::map<std::string, std::pair<double, std::size_t>> len_emotion, len_group;
  for (const AttributedExample& ex : dataset) {
    ++st.per_split[to_string(ex.split)];
    ++st.per_strategy[to_string(ex.strategy)];
    ++st.per_emotion[to_string(ex.emotion)];
    const std::string group = ex.target_group ? *ex.target_group : "(none)";
    ++st.per_cell[code_of(ex.strategy) + "|" + code_of(ex.emotion) + "|" + group];
    const double len = static_cast<double>(word_split(ex.counterspeech).size());
    auto& le = len_emotion[to_string(ex.emotion)];
    le.first += len;
    ++le.second;
    auto& lg = len_group[group];
    lg.first += len;
    ++lg.second;
  }
  for (const auto& [k, v] : len_emotion)
    st.mean_len_per_emotion[k] = v.first / static_cast<double>(v.second);
  for (const auto& [k, v] : len_group)
    st.mean_len_per_group[k] = v.first / static_cast<double>(v.second);
  return st;
}

std::string corpus_stats_json(const CorpusStats& stats) {
  nlohmann::ordered_json j;
  j["total"] = stats.total;
  j["per_split"] = stats.per_split;
  j["per_strategy"] = stats.per_strategy;
  j["per_emotion"] = stats.per_emotion;
  j["per_cell"] = stats.per_cell;
  j["mean_len_per_emotion"] = stats.mean_len_per_emotion;
  j["mean_len_per_group"] = stats.mean_len_per_group;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Paired t-test

namespace {

// Continued-fraction core of the regularized incomplete beta (Lentz's
// algorithm; see any numerics text).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 200;
  constexpr double kEps = 3e-16;
  constexpr double kFpmin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpmin) d = kFpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpmin) d = kFpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpmin) c = kFpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpmin) d = kFpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpmin) c = kFpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

} // namespace

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail("input", "paired samples differ in length");
  if (a.size() < 2) fail("input", "paired t-test needs at least two observations");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);

  TTestResult r;
  r.df = n - 1;
  r.mean_diff = mean;
  if (var == 0.0) {
    r.degenerate = true;
    r.t = 0.0;
    r.p = 1.0;
    r.method = "degenerate: identical samples";
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  const double df = static_cast<double>(r.df);
  if (r.df <= 30) {
    r.p = reg_inc_beta(df / 2.0, 0.5, df / (df + r.t * r.t));
    r.method = "exact t-distribution (df <= 30)";
  } else {
    r.p = std::erfc(std::abs(r.t) / std::sqrt(2.0));
    r.method = "normal approximation (df > 30)";
  }
  return r;
}

std::string ttest_json(const TTestResult& r) {
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["p"] = r.p;
  j["df"] = r.df;
  j["mean_diff"] = r.mean_diff;
  j["method"] = r.method;
  j["degenerate"] = r.degenerate;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Whole-model evaluation

std::string generate_text(const SeqModel& model, const HierarchicalPrefixStack& stack,
                          const Vocabulary& vocab, const AttributedExample& ex,
                          std::size_t max_new) {
  const auto prompt = serialize_prompt(ex.hate_speech, ex.strategy, ex.emotion, vocab);
  return vocab.decode(model.greedy_decode(prompt, &stack, max_new));
}

EvalReport evaluate_model(const SeqModel& model, const HierarchicalPrefixStack& stack,
                          const Vocabulary& vocab,
                          const std::vector<AttributedExample>& examples,
                          std::size_t max_new, const Scorer& strategy_scorer,
                          const Scorer& emotion_scorer, double threshold,
                          const std::vector<PreferencePair>* margin_pairs) {
  struct Row {
    double r1, r2, rl, sc, ec;
  };
  std::vector<Row> rows(examples.size());
  parallel_for(examples.size(), [&](std::size_t i) {
    const AttributedExample& ex = examples[i];
    const std::string gen = generate_text(model, stack, vocab, ex, max_new);
    Row& row = rows[i];
    row.r1 = rouge_n(gen, ex.counterspeech, 1).f1;
    row.r2 = rouge_n(gen, ex.counterspeech, 2).f1;
    row.rl = rouge_l(gen, ex.counterspeech).f1;
    row.sc = strategy_scorer.score(gen, to_string(ex.strategy)) >= threshold ? 1.0 : 0.0;
    row.ec = emotion_scorer.score(gen, to_string(ex.emotion)) >= threshold ? 1.0 : 0.0;
  });

  EvalReport rep;
  rep.n = examples.size();
  std::map<std::string, CellMetrics> sums;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    CellMetrics& c = sums[cell_key(examples[i].strategy, examples[i].emotion)];
    c.rouge1 += rows[i].r1;
    c.rouge2 += rows[i].r2;
    c.rougeL += rows[i].rl;
    c.strategy_conformity += rows[i].sc;
    c.emotion_conformity += rows[i].ec;
    ++c.n;
  }
  for (auto& [key, sum] : sums) {
    CellMetrics cell = sum;
    const double cn = static_cast<double>(cell.n);
    cell.rouge1 /= cn;
    cell.rouge2 /= cn;
    cell.rougeL /= cn;
    cell.strategy_conformity /= cn;
    cell.emotion_conformity /= cn;
    rep.cells[key] = cell;
  }
  // Aggregates are defined as the count-weighted means of the cells, so
  // recomputing them from the report reproduces them exactly.
  if (rep.n > 0) {
    const double total = static_cast<double>(rep.n);
    for (const auto& [key, cell] : rep.cells) {
      const double w = static_cast<double>(cell.n);
      rep.rouge1 += cell.rouge1 * w;
      rep.rouge2 += cell.rouge2 * w;
      rep.rougeL += cell.rougeL * w;
      rep.strategy_conformity += cell.strategy_conformity * w;
      rep.emotion_conformity += cell.emotion_conformity * w;
    }
    rep.rouge1 /= total;
    rep.rouge2 /= total;
    rep.rougeL /= total;
    rep.strategy_conformity /= total;
    rep.emotion_conformity /= total;
  }
  if (margin_pairs && !margin_pairs->empty())
    rep.mean_margin = preference_margin(model, stack, *margin_pairs);
  return rep;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["rouge1"] = report.rouge1;
  j["rouge2"] = report.rouge2;
  j["rougeL"] = report.rougeL;
  j["strategy_conformity"] = report.strategy_conformity;
  j["emotion_conformity"] = report.emotion_conformity;
  j["mean_margin"] = report.mean_margin;
  j["n"] = report.n;
  nlohmann::ordered_json cells = nlohmann::ordered_json::object();
  for (const auto& [key, cell] : report.cells) {
    cells[key] = {{"rouge1", cell.rouge1},
                  {"rouge2", cell.rouge2},
                  {"rougeL", cell.rougeL},
                  {"strategy_conformity", cell.strategy_conformity},
                  {"emotion_conformity", cell.emotion_conformity},
                  {"n", cell.n}};
  }
  j["cells"] = cells;
  return j.dump();
}

} // namespace hippro
