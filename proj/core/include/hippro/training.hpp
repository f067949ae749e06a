// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hippro/corpus.hpp"
#include "hippro/model.hpp"
#include "hippro/objectives.hpp"
#include "hippro/prefix.hpp"

namespace hippro {

// ---------------------------------------------------------------------------
// Stages and configuration

enum class Stage : std::uint8_t { Strategy, StrategyEmotion, Orpo, Dpo };

std::string to_string(Stage s);
/// Accepts "strategy", "emotion" / "strategy_emotion", "orpo", "dpo".
Stage parse_stage(const std::string& text);

struct TrainConfig {
  std::size_t batch_size = 4;
  double learning_rate = 1e-4;
  std::size_t max_epochs = 50;
  std::size_t early_stop_patience = 3;
  std::uint64_t seed = 0;
  std::size_t vt = 3;
  std::size_t vt_e = 0; // 0 means "same as vt"
  double epsilon = 0.1;
  double beta_dpo = 0.1;
  std::size_t max_new_tokens = 48; // generation cap for pair building / eval
  Stage stage = Stage::Strategy;

  std::size_t effective_vt_e() const { return vt_e == 0 ? vt : vt_e; }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Optimizer

/// Adaptive moment estimation with bias correction and no weight decay.
class Adam {
public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  /// One update over a fixed parameter list; the list's order and shapes
  /// must not change between steps.
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

  std::size_t steps_taken() const { return t_; }

private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data; // little-endian float32 on disk
};

/// Everything needed to resume: config snapshot, vocabulary, backbone and
/// adapter tensors, plus the parent checkpoint's content hash for lineage.
struct Checkpoint {
  Stage stage = Stage::Strategy;
  std::uint64_t model_seed = 0;
  ModelConfig model;
  std::size_t vt = 0;
  std::size_t vt_e = 0; // 0 when no stage-2 adapters are present
  std::vector<std::string> vocab; // full ordered token list, specials first
  std::string parent_hash;        // hex SHA-256 of the parent file; "" for roots
  std::vector<TensorRecord> tensors;
};

Checkpoint make_checkpoint(const SeqModel& model, const HierarchicalPrefixStack& stack,
                           const Vocabulary& vocab, Stage stage,
                           std::uint64_t model_seed, const std::string& parent_hash);

/// Rebuilds model, stack, and vocabulary from a checkpoint. All adapters
/// come back frozen; the caller decides what the next stage may train.
void restore_checkpoint(const Checkpoint& c, SeqModel& model,
                        HierarchicalPrefixStack& stack, Vocabulary& vocab);

/// Binary format: magic "HPX1", u32 version, u32-length-prefixed UTF-8
/// JSON config, tensor records (u32 name length, name, u32 rank, u32 dims,
/// float32 payload), then a 32-byte SHA-256 over all preceding bytes.
/// Returns the file's content hash (hex) for lineage chaining.
std::string save_checkpoint(const std::string& path, const Checkpoint& c);

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::string file_hash; // hex of the trailing integrity hash
};

/// Verifies magic, version, record completeness, and the integrity hash.
/// When `expected_parent` is given, a differing stored parent hash is a
/// lineage error.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::optional<std::string>& expected_parent =
                                     std::nullopt);

/// SHA-256 (hex) over the backbone tensors in serialization order; must be
/// identical across all training stages.
std::string theta_hash(const SeqModel& model);

// ---------------------------------------------------------------------------
// Stage training

struct EpochLog {
  std::size_t epoch = 0; // 1-based
  double train_loss = 0.0;
  double dev_loss = 0.0;
};

struct TrainResult {
  Checkpoint best; // best-dev snapshot
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_dev = 0.0;
  std::size_t epochs_run = 0;
};

/// Runs one stage to early stopping or max_epochs and leaves `stack` at
/// the best-dev parameters. Supervised stages (strategy, strategy_emotion)
/// consume the dataset's train/dev splits; preference stages (orpo, dpo)
/// consume `pairs`, holding out the last tenth as their dev slice. Only
/// stage-trainable adapters change; a non-finite loss aborts with a
/// diagnostic of the offending batch.
TrainResult train_stage(const TrainConfig& cfg,
                        const std::vector<AttributedExample>& dataset,
                        const Vocabulary& vocab, SeqModel& model,
                        HierarchicalPrefixStack& stack,
                        const std::vector<PreferencePair>* pairs,
                        std::uint64_t model_seed, const std::string& parent_hash,
                        std::ostream* status = nullptr);

// ---------------------------------------------------------------------------
// Gradient verification

enum class LossName : std::uint8_t { JFinetuned, JOr, JFinal, Dpo };

std::string to_string(LossName n);
LossName parse_loss_name(const std::string& text);

/// Central finite differences (step h) against analytic gradients on every
/// trainable adapter entry, or a seeded subset of `max_coords` when there
/// are more. Returns the max relative error with denominator
/// max(|analytic|, |numeric|, 1e-8). For LossName::Dpo the frozen input
/// stack doubles as the reference policy.
double gradient_check(LossName which, const SeqModel& model,
                      HierarchicalPrefixStack& stack, const PreferencePair& pair,
                      double h = 1e-5, double epsilon = 0.1, double beta_dpo = 0.1,
                      std::size_t max_coords = 200, std::uint64_t seed = 0);

} // namespace hippro
