// SPDX-License-Identifier: Apache-2.0
#include "hippro/objectives.hpp"

#include <cmath>

#include "hippro/error.hpp"

namespace hippro {

namespace {

double softplus(double z) {
  // max(z,0) + log1p(exp(-|z|)), safe for large |z|
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double log_odds(double pi) {
  if (!(pi > 0.0 && pi < 1.0)) fail("range", "probability must lie in (0,1)");
  const double lpi = std::log(pi);
  return lpi - log1mexp(lpi);
}

} // namespace

double nll_loss(const Tensor& logprob_rows, const std::vector<TokenId>& targets) {
  if (logprob_rows.rows != targets.size())
    fail("input", "log-prob rows and targets are not aligned");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == Vocabulary::kPad) continue;
    if (targets[i] >= logprob_rows.cols) fail("range", "target id outside vocabulary");
    sum -= logprob_rows.at(i, targets[i]);
    ++n;
  }
  if (n == 0) fail("input", "target has only PAD positions");
  return sum / static_cast<double>(n);
}

double seq_prob(double mean_logprob) {
  if (mean_logprob > 0.0)
    fail("range", "positive mean log-probability (upstream normalization bug)");
  return std::exp(mean_logprob);
}

double odds(double pi) { return std::exp(log_odds(pi)); }

double odds_ratio(double pi_s, double pi_r) {
  return std::exp(log_odds(pi_s) - log_odds(pi_r));
}

double or_loss(double pi_s, double pi_r) {
  return softplus(-(log_odds(pi_s) - log_odds(pi_r)));
}

OrpoNodes orpo_graph(Tape& t, const SeqModel& model, const BoundStack& bound,
                     const PreferencePair& pair, double epsilon) {
  if (pair.chosen.empty()) fail("input", "preference pair has an empty chosen sequence");
  if (pair.rejected.empty())
    fail("input", "preference pair has an empty rejected sequence");
  Tape::NodeId enc = model.encode(t, pair.prompt, &bound);
  Tape::NodeId lp_s = model.decode_logprobs(t, enc, shifted_decoder_input(pair.chosen), &bound);
  Tape::NodeId lp_r =
      model.decode_logprobs(t, enc, shifted_decoder_input(pair.rejected), &bound);

  std::vector<bool> exclude_s(pair.chosen.size(), false);
  for (std::size_t i = 0; i < pair.chosen.size(); ++i)
    exclude_s[i] = pair.chosen[i] == Vocabulary::kPad;

  OrpoNodes out;
  out.j_finetuned = t.nll_mean(lp_s, pair.chosen, exclude_s);
  Tape::NodeId m_s =
      t.scale(t.pick_sum(lp_s, pair.chosen), 1.0 / static_cast<double>(pair.chosen.size()));
  Tape::NodeId m_r = t.scale(t.pick_sum(lp_r, pair.rejected),
                             1.0 / static_cast<double>(pair.rejected.size()));
  out.j_or = t.odds_ratio_loss(m_s, m_r);
  out.j_final = t.add(out.j_finetuned, t.scale(out.j_or, epsilon));
  out.margin = t.value(m_s).d[0] - t.value(m_r).d[0];
  return out;
}

LossBreakdown orpo_loss(const SeqModel& model, const HierarchicalPrefixStack& stack,
                        const PreferencePair& pair, double epsilon,
                        std::vector<Tensor>* grads) {
  Tape t;
  BoundStack bound = model.bind(t, stack);
  OrpoNodes nodes = orpo_graph(t, model, bound, pair, epsilon);
  LossBreakdown b;
  b.j_finetuned = t.value(nodes.j_finetuned).d[0];
  b.j_or = t.value(nodes.j_or).d[0];
  b.epsilon = epsilon;
  b.j_final = t.value(nodes.j_final).d[0];
  b.margin = nodes.margin;
  if (grads) {
    t.backward(nodes.j_final);
    *grads = adapter_grads(t, stack, bound);
  }
  return b;
}

Tape::NodeId dpo_graph(Tape& t, const SeqModel& model, const BoundStack& bound,
                       const PreferencePair& pair, double ref_lp_chosen,
                       double ref_lp_rejected, double beta_dpo) {
  if (pair.chosen.empty()) fail("input", "preference pair has an empty chosen sequence");
  if (pair.rejected.empty())
    fail("input", "preference pair has an empty rejected sequence");
  Tape::NodeId enc = model.encode(t, pair.prompt, &bound);
  Tape::NodeId rows_s =
      model.decode_logprobs(t, enc, shifted_decoder_input(pair.chosen), &bound);
  Tape::NodeId rows_r =
      model.decode_logprobs(t, enc, shifted_decoder_input(pair.rejected), &bound);
  Tape::NodeId lp_s = t.pick_sum(rows_s, pair.chosen);
  Tape::NodeId lp_r = t.pick_sum(rows_r, pair.rejected);
  Tape::NodeId diff = t.sub(lp_s, lp_r);
  Tape::NodeId inner =
      t.add_const(diff, Tensor::scalar(-(ref_lp_chosen - ref_lp_rejected)));
  return t.neg_log_sigmoid(t.scale(inner, beta_dpo));
}

double dpo_loss(const SeqModel& model, const HierarchicalPrefixStack& stack,
                const HierarchicalPrefixStack& ref_stack, const PreferencePair& pair,
                double beta_dpo, std::vector<Tensor>* grads) {
  if (!ref_stack.has_stage2())
    fail("state", "reference stack is missing its stage-2 adapters");
  const double ref_s = model.sequence_logprob(pair.prompt, pair.chosen, &ref_stack, false);
  const double ref_r =
      model.sequence_logprob(pair.prompt, pair.rejected, &ref_stack, false);
  Tape t;
  BoundStack bound = model.bind(t, stack);
  Tape::NodeId loss = dpo_graph(t, model, bound, pair, ref_s, ref_r, beta_dpo);
  if (grads) {
    t.backward(loss);
    *grads = adapter_grads(t, stack, bound);
  }
  return t.value(loss).d[0];
}

std::vector<Tensor> adapter_grads(const Tape& t, const HierarchicalPrefixStack& stack,
                                  const BoundStack& bound) {
  std::vector<Tensor> out;
  const std::pair<const PrefixAdapter*, Tape::NodeId> slots[] = {
      {&stack.alpha, bound.alpha},
      {&stack.beta, bound.beta},
      {stack.gamma ? &*stack.gamma : nullptr, bound.gamma},
      {stack.delta ? &*stack.delta : nullptr, bound.delta}};
  for (const auto& [adapter, leaf] : slots)
    if (adapter && adapter->trainable) out.push_back(t.grad(leaf));
  return out;
}

} // namespace hippro
