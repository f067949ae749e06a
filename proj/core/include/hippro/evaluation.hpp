// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hippro/corpus.hpp"
#include "hippro/model.hpp"

namespace hippro {

// ---------------------------------------------------------------------------
// Lexical similarity

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Sentence-level clipped n-gram overlap (n in {1,2}) on corpus-tokenizer
/// tokens; no stemming, no stopword removal. Empty inputs score zero.
RougeScore rouge_n(const std::string& candidate, const std::string& reference, int n);
RougeScore rouge_n_tokens(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference, int n);

/// Longest-common-subsequence variant: P = L/|cand|, R = L/|ref|.
RougeScore rouge_l(const std::string& candidate, const std::string& reference);
RougeScore rouge_l_tokens(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference);

// ---------------------------------------------------------------------------
// Attribute conformity

/// Pluggable attribute judge: score in [0,1] for how well `text` realizes
/// `attribute` (an attribute's lowercase full word). Learned scorers plug
/// in here; the built-ins are exact marker-word oracles for the synthetic
/// corpus ("marker_strategy": first token; "marker_emotion": last token).
class Scorer {
public:
  virtual ~Scorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const std::string& text, const std::string& attribute) const = 0;
};

/// Registry is process-global; built-ins are pre-registered. Registering a
/// name twice replaces the earlier scorer. Not thread-safe during setup.
void register_scorer(std::shared_ptr<Scorer> scorer);
const Scorer& get_scorer(const std::string& name); // throws Error("unknown_scorer")

/// Fraction of (text, expected attribute) outputs scoring >= threshold.
double conformity(const std::vector<std::pair<std::string, std::string>>& outputs,
                  const Scorer& scorer, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Preference margin

/// Mean over pairs of mean_logprob(chosen) - mean_logprob(rejected).
double preference_margin(const SeqModel& model, const HierarchicalPrefixStack& stack,
                         const std::vector<PreferencePair>& pairs);

// ---------------------------------------------------------------------------
// Corpus statistics

struct CorpusStats {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_split;
  std::map<std::string, std::size_t> per_strategy;
  std::map<std::string, std::size_t> per_emotion;
  std::map<std::string, std::size_t> per_cell; // "IN|JO|group" incl. target group
  std::map<std::string, double> mean_len_per_emotion; // counterspeech tokens
  std::map<std::string, double> mean_len_per_group;   // "(none)" when absent
};

CorpusStats corpus_stats(const std::vector<AttributedExample>& dataset);
std::string corpus_stats_json(const CorpusStats& stats);

// ---------------------------------------------------------------------------
// Significance testing

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
  double mean_diff = 0.0;
  std::string method; // states the p-value policy, or the degenerate case
  bool degenerate = false;
};

/// Paired two-sided t-test on a - b. Exact t CDF (via the regularized
/// incomplete beta) for df <= 30, normal approximation above; the method
/// string records which was used. Zero-variance differences come back
/// flagged degenerate instead of a division by zero.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);
std::string ttest_json(const TTestResult& r);

// ---------------------------------------------------------------------------
// Whole-model evaluation

struct CellMetrics {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double strategy_conformity = 0.0;
  double emotion_conformity = 0.0;
  std::size_t n = 0;
};

struct EvalReport {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double strategy_conformity = 0.0;
  double emotion_conformity = 0.0;
  double mean_margin = 0.0;
  std::map<std::string, CellMetrics> cells; // keyed by cell_key(strategy, emotion)
  std::size_t n = 0;
};

/// Deterministic UTF-8 JSON with fixed field names and sorted cell keys.
std::string eval_report_json(const EvalReport& report);

/// Serialized prompt (with emotion) -> greedy generation -> text.
std::string generate_text(const SeqModel& model, const HierarchicalPrefixStack& stack,
                          const Vocabulary& vocab, const AttributedExample& ex,
                          std::size_t max_new);

/// Greedy-decodes every example, scores ROUGE against the gold
/// counterspeech and conformity via the two scorers, and aggregates
/// per strategy x emotion cell. Aggregates are the cell-count-weighted
/// means of the per-cell values, computed exactly that way so the report
/// is self-consistent. mean_margin is filled from `margin_pairs` when
/// provided.
EvalReport evaluate_model(const SeqModel& model, const HierarchicalPrefixStack& stack,
                          const Vocabulary& vocab,
                          const std::vector<AttributedExample>& examples,
                          std::size_t max_new, const Scorer& strategy_scorer,
                          const Scorer& emotion_scorer, double threshold = 0.5,
                          const std::vector<PreferencePair>* margin_pairs = nullptr);

} // namespace hippro
