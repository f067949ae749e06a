// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "hippro/tensor.hpp"

namespace hippro {

/// Attention visibility rule. Keys are laid out [prefix rows; real rows].
/// Real queries may always see every prefix row (unless attend_prefix is
/// cleared, which exists for the masked-prefix equivalence check) and see
/// real rows either fully or causally.
struct AttnMask {
  std::size_t prefix_len = 0;
  bool causal = false;
  bool attend_prefix = true;

  bool allowed(std::size_t q, std::size_t k) const {
    if (k < prefix_len) return attend_prefix;
    return causal ? (k - prefix_len) <= q : true;
  }
};

/// Reverse-mode autodiff over Tensor values. Nodes are appended in forward
/// order, so reverse iteration is a valid topological order for backward().
/// Gradients are allocated eagerly and stay exactly zero for nodes that no
/// trainable leaf feeds, which makes freeze contracts checkable bit-wise.
class Tape {
public:
  using NodeId = std::size_t;

  NodeId leaf(Tensor value, bool requires_grad);

  const Tensor& value(NodeId id) const { return nodes_[id].val; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  bool needs_grad(NodeId id) const { return nodes_[id].needs; }
  std::size_t node_count() const { return nodes_.size(); }

  // Elementwise / linear algebra
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId add_bias(NodeId a, NodeId bias); // (n x m) + (1 x m), broadcast over rows
  NodeId add_const(NodeId a, const Tensor& c);
  NodeId gelu(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps);

  // Structure
  NodeId concat_rows(NodeId a, NodeId b);
  NodeId slice(NodeId a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1);
  NodeId gather_rows(NodeId table, std::vector<std::size_t> ids);

  /// Multi-head scaled dot-product attention, fused. q is (n x d); k and v
  /// are (m x d) where m may include prefix rows counted in mask.prefix_len.
  NodeId attention(NodeId q, NodeId k, NodeId v, std::size_t n_heads, AttnMask mask);

  NodeId log_softmax_rows(NodeId logits);

  // Scalar reductions over a (n x vocab) log-probability matrix
  NodeId pick_sum(NodeId logprobs, std::vector<std::size_t> targets);
  NodeId nll_mean(NodeId logprobs, std::vector<std::size_t> targets,
                  const std::vector<bool>& exclude);

  /// -log sigmoid( f(m_s) - f(m_r) ) with f(m) = m - log(1 - e^m), the
  /// log-odds of a length-normalized sequence probability e^m. Both inputs
  /// are scalar mean log-probabilities, strictly negative.
  NodeId odds_ratio_loss(NodeId mean_lp_chosen, NodeId mean_lp_rejected);

  /// softplus(-x) = -log sigmoid(x) for a scalar node.
  NodeId neg_log_sigmoid(NodeId x);

  void backward(NodeId root);

private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool needs = false;
    std::function<void(Tape&, NodeId)> back;
  };

  NodeId push(Tensor val, bool needs, std::function<void(Tape&, NodeId)> back);
  Tensor& grad_mut(NodeId id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

/// log(1 - exp(x)) for x < 0, numerically stable on both branches.
double log1mexp(double x);

} // namespace hippro
