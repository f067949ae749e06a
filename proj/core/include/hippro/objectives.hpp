// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "hippro/corpus.hpp"
#include "hippro/model.hpp"
#include "hippro/tape.hpp"
#include "hippro/tensor.hpp"

namespace hippro {

/// One preference step decomposed. j_final = j_finetuned + epsilon * j_or
/// holds to 1e-12 by construction.
struct LossBreakdown {
  double j_finetuned = 0.0;
  double j_or = 0.0;
  double epsilon = 0.0;
  double j_final = 0.0;
  double margin = 0.0; // mean_logprob(chosen) - mean_logprob(rejected)
};

// ---------------------------------------------------------------------------
// Scalar kernels (log-space throughout; exponentiation only at the edges)

/// Mean per-token NLL of `targets` under per-position log-prob rows.
/// PAD positions are excluded; an all-PAD target is an error.
double nll_loss(const Tensor& logprob_rows, const std::vector<TokenId>& targets);

/// Length-normalized sequence probability exp(mean token log-prob).
/// Positive input signals an upstream bug and is rejected.
double seq_prob(double mean_logprob);

/// pi / (1 - pi), computed as exp(log pi - log(1 - pi)).
double odds(double pi);

/// odds(pi_s) / odds(pi_r); > 1 exactly when pi_s > pi_r.
double odds_ratio(double pi_s, double pi_r);

/// -log sigmoid(log OR) = softplus(-(log-odds difference)). Equal inputs
/// give ln 2 exactly.
double or_loss(double pi_s, double pi_r);

// ---------------------------------------------------------------------------
// Model-level objectives

/// Differentiable preference-step graph on an existing tape. The caller
/// owns the tape and the bound stack; gradients flow into whatever leaves
/// were bound trainable.
struct OrpoNodes {
  Tape::NodeId j_finetuned;
  Tape::NodeId j_or;
  Tape::NodeId j_final;
  double margin = 0.0;
};
OrpoNodes orpo_graph(Tape& t, const SeqModel& model, const BoundStack& bound,
                     const PreferencePair& pair, double epsilon);

/// Self-contained evaluation of one pair. When `grads` is non-null it is
/// filled with d j_final / d adapter for every trainable adapter of the
/// stack, in stack order.
LossBreakdown orpo_loss(const SeqModel& model, const HierarchicalPrefixStack& stack,
                        const PreferencePair& pair, double epsilon,
                        std::vector<Tensor>* grads = nullptr);

/// DPO ablation step graph: -log sigmoid(beta * [(log pi(ys) - log pi_ref(ys))
/// - (log pi(yr) - log pi_ref(yr))]) over summed (unnormalized) log-probs.
/// The reference log-probs are plain numbers computed from the frozen
/// reference stack.
Tape::NodeId dpo_graph(Tape& t, const SeqModel& model, const BoundStack& bound,
                       const PreferencePair& pair, double ref_lp_chosen,
                       double ref_lp_rejected, double beta_dpo);

/// Self-contained DPO loss for one pair against a frozen reference stack.
double dpo_loss(const SeqModel& model, const HierarchicalPrefixStack& stack,
                const HierarchicalPrefixStack& ref_stack, const PreferencePair& pair,
                double beta_dpo, std::vector<Tensor>* grads = nullptr);

/// Gradients accumulated on the bound leaves, one tensor per trainable
/// adapter in stack order (alpha, beta, gamma, delta). Call backward first.
std::vector<Tensor> adapter_grads(const Tape& t, const HierarchicalPrefixStack& stack,
                                  const BoundStack& bound);

} // namespace hippro
