// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hippro/corpus.hpp"
#include "hippro/prefix.hpp"
#include "hippro/tape.hpp"
#include "hippro/tensor.hpp"

namespace hippro {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ffn = 64;
  std::size_t max_len = 512;
  bool cross_prefix = false; // decoder cross-attention also sees its prefix rows

  void validate() const;
};

/// Tape leaves for one prefix stack bound to one tape. Frozen adapters get
/// requires_grad=false leaves, so their gradients stay identically zero.
/// `attendable` exists for the equivalence check: with it cleared the
/// prefix rows are still concatenated but masked out of every softmax, and
/// the forward pass must match a prefix-free run.
struct BoundStack {
  static constexpr Tape::NodeId kNone = static_cast<Tape::NodeId>(-1);
  const HierarchicalPrefixStack* stack = nullptr;
  Tape::NodeId alpha = kNone;
  Tape::NodeId beta = kNone;
  Tape::NodeId gamma = kNone;
  Tape::NodeId delta = kNone;
  bool attendable = true;
};

/// Pre-LN encoder-decoder transformer with a frozen, randomly initialized
/// backbone. All conditioning capacity lives in the prefix stack; the
/// backbone tensors are never updated after construction.
class SeqModel {
public:
  SeqModel() = default;
  SeqModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::size_t backbone_param_count() const;

  /// Deterministic name -> tensor registry (checkpoint order).
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<std::pair<std::string, const Tensor*>> named_params() const;

  /// Creates one leaf per adapter; trainable adapters get gradient slots.
  BoundStack bind(Tape& t, const HierarchicalPrefixStack& stack) const;

  /// Encoder forward. Returns the (len(src) x d) hidden states; prefix
  /// rows act only as extra keys/values and produce no output rows.
  Tape::NodeId encode(Tape& t, const std::vector<TokenId>& src,
                      const BoundStack* pfx) const;

  /// Teacher-forced decoder pass over dec_in (BOS-shifted target).
  /// Returns (len(dec_in) x vocab) log-probabilities.
  Tape::NodeId decode_logprobs(Tape& t, Tape::NodeId enc_out,
                               const std::vector<TokenId>& dec_in,
                               const BoundStack* pfx) const;

  /// Convenience: log p(tgt[i] | src, tgt[<i]) per position. tgt must be
  /// non-empty and end with EOS; the decoder input is [BOS] + tgt[:-1].
  Tensor forward_logprobs(const std::vector<TokenId>& src,
                          const std::vector<TokenId>& tgt,
                          const HierarchicalPrefixStack* stack) const;

  /// Sum (or mean, when `mean`) of per-position target log-probs.
  double sequence_logprob(const std::vector<TokenId>& src,
                          const std::vector<TokenId>& tgt,
                          const HierarchicalPrefixStack* stack, bool mean) const;

  /// Greedy argmax decoding, ties broken toward the lowest token id.
  /// Returns generated tokens without BOS/EOS; stops at EOS or max_new.
  std::vector<TokenId> greedy_decode(const std::vector<TokenId>& src,
                                     const HierarchicalPrefixStack* stack,
                                     std::size_t max_new) const;

private:
  struct Ln {
    Tensor g, b;
  };
  struct Attn {
    Tensor wq, wk, wv, wo;
  };
  struct Ffn {
    Tensor w1, b1, w2, b2;
  };
  struct EncLayer {
    Ln ln1;
    Attn attn;
    Ln ln2;
    Ffn ffn;
  };
  struct DecLayer {
    Ln ln1;
    Attn self_attn;
    Ln ln2;
    Attn cross_attn;
    Ln ln3;
    Ffn ffn;
  };

  struct LnNodes {
    Tape::NodeId g, b;
  };
  struct AttnNodes {
    Tape::NodeId wq, wk, wv, wo;
  };
  struct FfnNodes {
    Tape::NodeId w1, b1, w2, b2;
  };
  struct EncLayerNodes {
    LnNodes ln1;
    AttnNodes attn;
    LnNodes ln2;
    FfnNodes ffn;
  };
  struct DecLayerNodes {
    LnNodes ln1;
    AttnNodes self_attn;
    LnNodes ln2;
    AttnNodes cross_attn;
    LnNodes ln3;
    FfnNodes ffn;
  };
  struct ThetaNodes {
    Tape::NodeId embedding;
    std::vector<EncLayerNodes> enc;
    LnNodes enc_lnf;
    std::vector<DecLayerNodes> dec;
    LnNodes dec_lnf;
    Tape::NodeId lm_w, lm_b;
  };

  ThetaNodes bind_theta(Tape& t) const;
  Tape::NodeId embed(Tape& t, const ThetaNodes& th,
                     const std::vector<TokenId>& ids) const;
  // Keys/values rows [stage-1; stage-2] for one layer of one side, or kNone
  // when no stack is bound. Built from slices of the bound adapter leaves.
  std::pair<Tape::NodeId, Tape::NodeId> prefix_kv(Tape& t, const BoundStack* pfx,
                                                  std::size_t layer, Side side) const;
  Tape::NodeId ffn_block(Tape& t, Tape::NodeId x, const FfnNodes& f) const;
  Tape::NodeId encode_impl(Tape& t, const ThetaNodes& th,
                           const std::vector<TokenId>& src,
                           const BoundStack* pfx) const;
  Tape::NodeId decode_impl(Tape& t, const ThetaNodes& th, Tape::NodeId enc_out,
                           const std::vector<TokenId>& dec_in,
                           const BoundStack* pfx) const;

  ModelConfig cfg_;
  Tensor embedding_; // vocab x d, shared input embedding for both sides
  std::vector<EncLayer> enc_;
  Ln enc_lnf_;
  std::vector<DecLayer> dec_;
  Ln dec_lnf_;
  Tensor lm_w_, lm_b_; // d x vocab projection, separate from the embedding
};

/// Sinusoidal position encodings for positions [0, n). Prefix rows never
/// receive one; they are position-free by construction.
Tensor positional_encoding(std::size_t n, std::size_t d);

/// [BOS] + tgt[:-1]. tgt must be non-empty and EOS-terminated.
std::vector<TokenId> shifted_decoder_input(const std::vector<TokenId>& tgt);

} // namespace hippro
