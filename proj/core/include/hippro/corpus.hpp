// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace hippro {

// ---------------------------------------------------------------------------
// Attributes

enum class Strategy : std::uint8_t { Informative, Denouncing, Positive, Questioning };
enum class Emotion : std::uint8_t { Anger, Disgust, Joy, Sadness, Surprise };
enum class Split : std::uint8_t { Train, Dev, Test };

inline constexpr std::size_t kNumStrategies = 4;
inline constexpr std::size_t kNumEmotions = 5;

/// Lowercase full word ("informative", "joy", ...) — also the rendering
/// used inside serialized prompts.
std::string to_string(Strategy s);
std::string to_string(Emotion e);
std::string to_string(Split s);

/// Canonical two-letter code (IN/DE/PO/QU, AN/DI/JO/SA/SU).
std::string code_of(Strategy s);
std::string code_of(Emotion e);

/// Accepts the two-letter code or the full word, case-insensitive.
/// Throws Error("unknown_strategy"/"unknown_emotion"/"unknown_split").
Strategy parse_strategy(const std::string& text);
Emotion parse_emotion(const std::string& text);
Split parse_split(const std::string& text);

// ---------------------------------------------------------------------------
// Records

/// One (hate speech, strategy, emotion, counterspeech, target group) record.
struct AttributedExample {
  std::string hate_speech;
  Strategy strategy = Strategy::Informative;
  Emotion emotion = Emotion::Anger;
  std::string counterspeech;
  std::optional<std::string> target_group;
  Split split = Split::Train;
};

using TokenId = std::size_t;

// ---------------------------------------------------------------------------
// Vocabulary

/// Lowercased whitespace tokenizer over a closed vocabulary. The four
/// special ids occupy the lowest slots; SEP renders as "</s>".
class Vocabulary {
public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;

  /// Builds from every word occurring in the corpus texts plus all
  /// attribute words, sorted for determinism.
  static Vocabulary build(const std::vector<AttributedExample>& corpus);
  static Vocabulary from_tokens(const std::vector<std::string>& non_special_tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool contains(const std::string& token) const;
  TokenId id_of(const std::string& token) const; // throws Error("oov")

  /// Lowercase, split on whitespace, map each word. Throws on OOV words.
  std::vector<TokenId> encode(const std::string& text) const;
  std::string decode(const std::vector<TokenId>& ids) const;

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercased whitespace token split (the corpus tokenizer without a
/// vocabulary), shared by the metrics.
std::vector<std::string> word_split(const std::string& text);

// ---------------------------------------------------------------------------
// Prompt serialization

/// Token ids of "h </s> strategy" (phase-1a input) or
/// "h </s> strategy </s> emotion" (phase-1b / phase-2 input),
/// EOS-terminated. Attributes render as lowercase full words.
std::vector<TokenId> serialize_prompt(const std::string& hate_speech, Strategy strategy,
                                      std::optional<Emotion> emotion,
                                      const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Dataset IO and validation

/// Parses a UTF-8 JSON-lines dataset. Field names: hate_speech, strategy,
/// emotion, counterspeech, target_group (optional), split. Errors carry
/// 1-based line numbers.
std::vector<AttributedExample> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<AttributedExample>& data);

struct SplitReport {
  std::map<std::string, std::size_t> per_split;              // "train" -> n
  std::map<std::string, std::size_t> per_cell;               // "Strategy|Emotion" -> n
  std::size_t total = 0;
  std::vector<std::string> mismatches;                       // empty means pass
  bool ok() const { return mismatches.empty(); }
};

std::string cell_key(Strategy s, Emotion e);

/// Exact per-split and per-cell counts; listed (never silent) mismatches
/// against the expected map when one is given.
SplitReport validate_splits(const std::vector<AttributedExample>& dataset,
                            const std::map<Split, std::size_t>* expected = nullptr);

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Marker words anchoring the built-in conformity oracle: every synthetic
/// counterspeech begins with its strategy marker and ends with its emotion
/// marker.
const std::string& strategy_marker(Strategy s);
const std::string& emotion_marker(Emotion e);

/// Deterministic desk-scale corpus. Attribute cells cycle exhaustively
/// (all 20 populated for n >= 20); splits come out at 80/10/10 via a
/// seeded shuffle. n below 20 warns on stderr but still generates.
std::vector<AttributedExample> synth_corpus(std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Preference pairs

/// One preference-tuning element: chosen is the ground-truth counterspeech,
/// rejected is what the stage-1 model produced for the same prompt. Both
/// token sequences are EOS-terminated.
struct PreferencePair {
  std::vector<TokenId> prompt;
  std::vector<TokenId> chosen;
  std::vector<TokenId> rejected;
  bool degenerate = false; // chosen == rejected; contributes no ranking signal
};

struct PairBuildReport {
  std::vector<PreferencePair> pairs;
  std::vector<std::string> skips; // one log line per skipped example
  std::size_t train_size = 0;     // |pairs| + |skips| always equals this
};

/// Greedy generation callback: prompt tokens in, generated tokens
/// (no BOS/EOS) out. Decouples pair building from the model type.
using GeneratorFn =
    std::function<std::vector<TokenId>(const std::vector<TokenId>& prompt)>;

/// One pair per train-split example. Generator failures are logged and
/// skipped, never silently dropped: |pairs| + |skips| == train_size.
PairBuildReport build_preference_pairs(const std::vector<AttributedExample>& dataset,
                                       const Vocabulary& vocab,
                                       const GeneratorFn& generate);

} // namespace hippro
