// SPDX-License-Identifier: Apache-2.0
#include "hippro/tape.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "hippro/error.hpp"

namespace hippro {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return phi + x * pdf;
}

} // namespace

double log1mexp(double x) {
  // Assumes x < 0. Split at -ln2 per the usual stability analysis.
  if (x > -0.6931471805599453) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

Tape::NodeId Tape::push(Tensor val, bool needs, std::function<void(Tape&, NodeId)> back) {
  Node n;
  n.grad = Tensor(val.rows, val.cols);
  n.val = std::move(val);
  n.needs = needs;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::NodeId Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols != B.rows) fail("shape", "matmul: inner dimensions disagree");
  Tensor C(A.rows, B.cols);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t k = 0; k < A.cols; ++k) {
      const double aik = A.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < B.cols; ++j) C.at(i, j) += aik * B.at(k, j);
    }
  const bool needs = nodes_[a].needs || nodes_[b].needs;
  return push(std::move(C), needs, [a, b](Tape& t, NodeId self) {
    const Tensor& G = t.grad(self);
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    if (t.nodes_[a].needs) {
      Tensor& dA = t.grad_mut(a); // G (n x m) * B^T (m x k)
      for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < B.cols; ++j) {
          const double g = G.at(i, j);
          if (g == 0.0) continue;
          for (std::size_t k = 0; k < A.cols; ++k) dA.at(i, k) += g * B.at(k, j);
        }
    }
    if (t.nodes_[b].needs) {
      Tensor& dB = t.grad_mut(b); // A^T (k x n) * G (n x m)
      for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t k = 0; k < A.cols; ++k) {
          const double aik = A.at(i, k);
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < B.cols; ++j) dB.at(k, j) += aik * G.at(i, j);
        }
    }
  });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) fail("shape", "add: shapes disagree");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.d[i] += B.d[i];
  const bool needs = nodes_[a].needs || nodes_[b].needs;
  return push(std::move(C), needs, [a, b](Tape& t, NodeId self) {
    const Tensor& G = t.grad(self);
    if (t.nodes_[a].needs) {
      Tensor& dA = t.grad_mut(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA.d[i] += G.d[i];
    }
    if (t.nodes_[b].needs) {
      Tensor& dB = t.grad_mut(b);
      for (std::size_t i = 0; i < G.size(); ++i) dB.d[i] += G.d[i];
    }
  });
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) fail("shape", "sub: shapes disagree");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.d[i] -= B.d[i];
  const bool needs = nodes_[a].needs || nodes_[b].needs;
  return push(std::move(C), needs, [a, b](Tape& t, NodeId self) {
    const Tensor& G = t.grad(self);
    if (t.nodes_[a].needs) {
      Tensor& dA = t.grad_mut(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA.d[i] += G.d[i];
    }
    if (t.nodes_[b].needs) {
      Tensor& dB = t.grad_mut(b);
      for (std::size_t i = 0; i < G.size(); ++i) dB.d[i] -= G.d[i];
    }
  });
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  Tensor C = value(a);
  for (double& x : C.d) x *= c;
  return push(std::move(C), nodes_[a].needs, [a, c](Tape& t, NodeId self) {
    if (!t.nodes_[a].needs) return;
    const Tensor& G = t.grad(self);
    Tensor& dA = t.grad_mut(a);
    for (std::size_t i = 0; i < G.size(); ++i) dA.d[i] += c * G.d[i];
  });
}

Tape::NodeId Tape::add_bias(NodeId a, NodeId bias) {
  const Tensor& A = value(a);
  const Tensor& B = value(bias);
  if (B.rows != 1 || B.cols != A.cols) fail("shape", "add_bias: bias must be 1 x cols");
  Tensor C = A;
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < A.cols; ++j) C.at(i, j) += B.at(0, j);
  const bool needs = nodes_[a].needs || nodes_[bias].needs;
  return push(std::move(C), needs, [a, bias](Tape& t, NodeId self) {
    const Tensor& G = t.grad(self);
    if (t.nodes_[a].needs) {
      Tensor& dA = t.grad_mut(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA.d[i] += G.d[i];
    }
    if (t.nodes_[bias].needs) {
      Tensor& dB = t.grad_mut(bias);
      for (std::size_t i = 0; i < G.rows; ++i)
        for (std::size_t j = 0; j < G.cols; ++j) dB.at(0, j) += G.at(i, j);
    }
  });
}

Tape::NodeId Tape::add_const(NodeId a, const Tensor& c) {
  const Tensor& A = value(a);
  if (!A.same_shape(c)) fail("shape", "add_const: shapes disagree");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.d[i] += c.d[i];
  return push(std::move(C), nodes_[a].needs, [a](Tape& t, NodeId self) {
    if (!t.nodes_[a].needs) return;
    const Tensor& G = t.grad(self);
    Tensor& dA = t.grad_mut(a);
    for (std::size_t i = 0; i < G.size(); ++i) dA.d[i] += G.d[i];
  });
}

Tape::NodeId Tape::gelu(NodeId a) {
  const Tensor& A = value(a);
  Tensor C(A.rows, A.cols);
  for (std::size_t i = 0; i < A.size(); ++i) C.d[i] = gelu_fwd(A.d[i]);
  return push(std::move(C), nodes_[a].needs, [a](Tape& t, NodeId self) {
    if (!t.nodes_[a].needs) return;
    const Tensor& G = t.grad(self);
    const Tensor& A = t.value(a);
    Tensor& dA = t.grad_mut(a);
    for (std::size_t i = 0; i < G.size(); ++i) dA.d[i] += G.d[i] * gelu_grad(A.d[i]);
  });
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
  const Tensor& X = value(x);
  const Tensor& Gn = value(gain);
  const Tensor& Bn = value(bias);
  if (Gn.rows != 1 || Gn.cols != X.cols || Bn.rows != 1 || Bn.cols != X.cols)
    fail("shape", "layer_norm: gain/bias must be 1 x cols");
  Tensor Y(X.rows, X.cols);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < X.cols; ++j) mean += X.at(i, j);
    mean /= static_cast<double>(X.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < X.cols; ++j) {
      const double dv = X.at(i, j) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(X.cols);
    const double inv_sigma = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < X.cols; ++j)
      Y.at(i, j) = (X.at(i, j) - mean) * inv_sigma * Gn.at(0, j) + Bn.at(0, j);
  }
  const bool needs = nodes_[x].needs || nodes_[gain].needs || nodes_[bias].needs;
  return push(std::move(Y), needs, [x, gain, bias, eps](Tape& t, NodeId self) {
    const Tensor& G = t.grad(self);
    const Tensor& X = t.value(x);
    const Tensor& Gn = t.value(gain);
    const std::size_t n = X.cols;
    for (std::size_t i = 0; i < X.rows; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += X.at(i, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double dv = X.at(i, j) - mean;
        var += dv * dv;
      }
      var /= static_cast<double>(n);
      const double inv_sigma = 1.0 / std::sqrt(var + eps);
      if (t.nodes_[gain].needs || t.nodes_[bias].needs) {
        Tensor& dGn = t.grad_mut(gain);
        Tensor& dBn = t.grad_mut(bias);
        for (std::size_t j = 0; j < n; ++j) {
          const double xhat = (X.at(i, j) - mean) * inv_sigma;
          if (t.nodes_[gain].needs) dGn.at(0, j) += G.at(i, j) * xhat;
          if (t.nodes_[bias].needs) dBn.at(0, j) += G.at(i, j);
        }
      }
      if (t.nodes_[x].needs) {
        // dxhat = g .* dy ; dx = (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat)) / sigma
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double xhat = (X.at(i, j) - mean) * inv_sigma;
          const double dxhat = G.at(i, j) * Gn.at(0, j);
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        const double m1 = sum_dxhat / static_cast<double>(n);
        const double m2 = sum_dxhat_xhat / static_cast<double>(n);
        Tensor& dX = t.grad_mut(x);
        for (std::size_t j = 0; j < n; ++j) {
          const double xhat = (X.at(i, j) - mean) * inv_sigma;
          const double dxhat = G.at(i, j) * Gn.at(0, j);
          dX.at(i, j) += (dxhat - m1 - xhat * m2) * inv_sigma;
        }
      }
    }
  });
}

Tape::NodeId Tape::concat_rows(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols != B.cols) fail("shape", "concat_rows: column counts disagree");
  Tensor C(A.rows + B.rows, A.cols);
  for (std::size_t i = 0; i < A.size(); ++i) C.d[i] = A.d[i];
  for (std::size_t i = 0; i < B.size(); ++i) C.d[A.size() + i] = B.d[i];
  const bool needs = nodes_[a].needs || nodes_[b].needs;
  return push(std::move(C), needs, [a, b](Tape& t, NodeId self) {
    const Tensor& G = t.grad(self);
    const Tensor& A = t.value(a);
    if (t.nodes_[a].needs) {
      Tensor& dA = t.grad_mut(a);
      for (std::size_t i = 0; i < dA.size(); ++i) dA.d[i] += G.d[i];
    }
    if (t.nodes_[b].needs) {
      Tensor& dB = t.grad_mut(b);
      for (std::size_t i = 0; i < dB.size(); ++i) dB.d[i] += G.d[A.size() + i];
    }
  });
}

Tape::NodeId Tape::slice(NodeId a, std::size_t r0, std::size_t r1, std::size_t c0,
                         std::size_t c1) {
  const Tensor& A = value(a);
  if (r1 > A.rows || c1 > A.cols || r0 >= r1 || c0 >= c1)
    fail("shape", "slice: range out of bounds");
  Tensor C(r1 - r0, c1 - c0);
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = c0; j < c1; ++j) C.at(i - r0, j - c0) = A.at(i, j);
  return push(std::move(C), nodes_[a].needs, [a, r0, r1, c0, c1](Tape& t, NodeId self) {
    if (!t.nodes_[a].needs) return;
    const Tensor& G = t.grad(self);
    Tensor& dA = t.grad_mut(a);
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = c0; j < c1; ++j) dA.at(i, j) += G.at(i - r0, j - c0);
  });
}

Tape::NodeId Tape::gather_rows(NodeId table, std::vector<std::size_t> ids) {
  const Tensor& T = value(table);
  Tensor C(ids.size(), T.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.rows) fail("shape", "gather_rows: id out of range");
    for (std::size_t j = 0; j < T.cols; ++j) C.at(i, j) = T.at(ids[i], j);
  }
  return push(std::move(C), nodes_[table].needs,
              [table, ids = std::move(ids)](Tape& t, NodeId self) {
                if (!t.nodes_[table].needs) return;
                const Tensor& G = t.grad(self);
                Tensor& dT = t.grad_mut(table);
                for (std::size_t i = 0; i < ids.size(); ++i)
                  for (std::size_t j = 0; j < G.cols; ++j)
                    dT.at(ids[i], j) += G.at(i, j);
              });
}

Tape::NodeId Tape::attention(NodeId q, NodeId k, NodeId v, std::size_t n_heads,
                             AttnMask mask) {
  const Tensor& Q = value(q);
  const Tensor& K = value(k);
  const Tensor& V = value(v);
  if (Q.cols != K.cols || K.rows != V.rows || K.cols != V.cols)
    fail("shape", "attention: q/k/v shapes disagree");
  if (Q.cols % n_heads != 0) fail("shape", "attention: head count must divide width");
  const std::size_t dh = Q.cols / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t n = Q.rows;
  const std::size_t m = K.rows;

  // One softmax weight matrix per head, kept for the backward pass.
  std::vector<Tensor> weights(n_heads, Tensor(n, m));
  Tensor O(n, Q.cols);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * dh;
    Tensor& W = weights[h];
    for (std::size_t i = 0; i < n; ++i) {
      double max_s = -std::numeric_limits<double>::infinity();
      std::vector<double> scores(m, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        if (!mask.allowed(i, j)) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q.at(i, c0 + c) * K.at(j, c0 + c);
        s *= inv_scale;
        scores[j] = s;
        if (s > max_s) max_s = s;
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (!mask.allowed(i, j)) continue;
        scores[j] = std::exp(scores[j] - max_s);
        denom += scores[j];
      }
      for (std::size_t j = 0; j < m; ++j) {
        if (!mask.allowed(i, j)) continue;
        W.at(i, j) = scores[j] / denom;
        for (std::size_t c = 0; c < dh; ++c)
          O.at(i, c0 + c) += W.at(i, j) * V.at(j, c0 + c);
      }
    }
  }

  const bool needs = nodes_[q].needs || nodes_[k].needs || nodes_[v].needs;
  return push(std::move(O), needs,
              [q, k, v, n_heads, dh, inv_scale, mask,
               weights = std::move(weights)](Tape& t, NodeId self) {
                const Tensor& G = t.grad(self);
                const Tensor& Q = t.value(q);
                const Tensor& K = t.value(k);
                const Tensor& V = t.value(v);
                const std::size_t n = Q.rows;
                const std::size_t m = K.rows;
                const bool need_q = t.nodes_[q].needs;
                const bool need_k = t.nodes_[k].needs;
                const bool need_v = t.nodes_[v].needs;
                for (std::size_t h = 0; h < n_heads; ++h) {
                  const std::size_t c0 = h * dh;
                  const Tensor& W = weights[h];
                  for (std::size_t i = 0; i < n; ++i) {
                    // dA_ij = dO_i . V_j ; softmax backward per row
                    std::vector<double> dA(m, 0.0);
                    double inner = 0.0; // sum_j dA_ij * W_ij
                    for (std::size_t j = 0; j < m; ++j) {
                      if (!mask.allowed(i, j)) continue;
                      double s = 0.0;
                      for (std::size_t c = 0; c < dh; ++c)
                        s += G.at(i, c0 + c) * V.at(j, c0 + c);
                      dA[j] = s;
                      inner += s * W.at(i, j);
                      if (need_v) {
                        Tensor& dV = t.grad_mut(v);
                        for (std::size_t c = 0; c < dh; ++c)
                          dV.at(j, c0 + c) += W.at(i, j) * G.at(i, c0 + c);
                      }
                    }
                    if (!need_q && !need_k) continue;
                    for (std::size_t j = 0; j < m; ++j) {
                      if (!mask.allowed(i, j)) continue;
                      const double dS = W.at(i, j) * (dA[j] - inner) * inv_scale;
                      if (dS == 0.0) continue;
                      if (need_q) {
                        Tensor& dQ = t.grad_mut(q);
                        for (std::size_t c = 0; c < dh; ++c)
                          dQ.at(i, c0 + c) += dS * K.at(j, c0 + c);
                      }
                      if (need_k) {
                        Tensor& dK = t.grad_mut(k);
                        for (std::size_t c = 0; c < dh; ++c)
                          dK.at(j, c0 + c) += dS * Q.at(i, c0 + c);
                      }
                    }
                  }
                }
              });
}

Tape::NodeId Tape::log_softmax_rows(NodeId logits) {
  const Tensor& X = value(logits);
  Tensor Y(X.rows, X.cols);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double max_x = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < X.cols; ++j) max_x = std::max(max_x, X.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < X.cols; ++j) denom += std::exp(X.at(i, j) - max_x);
    const double lse = max_x + std::log(denom);
    for (std::size_t j = 0; j < X.cols; ++j) Y.at(i, j) = X.at(i, j) - lse;
  }
  return push(std::move(Y), nodes_[logits].needs, [logits](Tape& t, NodeId self) {
    if (!t.nodes_[logits].needs) return;
    const Tensor& G = t.grad(self);
    const Tensor& Y = t.value(self);
    Tensor& dX = t.grad_mut(logits);
    for (std::size_t i = 0; i < Y.rows; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < Y.cols; ++j) gsum += G.at(i, j);
      for (std::size_t j = 0; j < Y.cols; ++j)
        dX.at(i, j) += G.at(i, j) - std::exp(Y.at(i, j)) * gsum;
    }
  });
}

Tape::NodeId Tape::pick_sum(NodeId logprobs, std::vector<std::size_t> targets) {
  const Tensor& L = value(logprobs);
  if (targets.size() != L.rows) fail("shape", "pick_sum: target length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= L.cols) fail("shape", "pick_sum: target id out of range");
    s += L.at(i, targets[i]);
  }
  return push(Tensor::scalar(s), nodes_[logprobs].needs,
              [logprobs, targets = std::move(targets)](Tape& t, NodeId self) {
                if (!t.nodes_[logprobs].needs) return;
                const double g = t.grad(self).d[0];
                Tensor& dL = t.grad_mut(logprobs);
                for (std::size_t i = 0; i < targets.size(); ++i)
                  dL.at(i, targets[i]) += g;
              });
}

Tape::NodeId Tape::nll_mean(NodeId logprobs, std::vector<std::size_t> targets,
                            const std::vector<bool>& exclude) {
  const Tensor& L = value(logprobs);
  if (targets.size() != L.rows || exclude.size() != L.rows)
    fail("shape", "nll_mean: target length mismatch");
  std::size_t n_kept = 0;
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (exclude[i]) continue;
    if (targets[i] >= L.cols) fail("shape", "nll_mean: target id out of range");
    s -= L.at(i, targets[i]);
    ++n_kept;
  }
  if (n_kept == 0) fail("empty", "nll_mean: every target position is excluded");
  const double inv_n = 1.0 / static_cast<double>(n_kept);
  return push(Tensor::scalar(s * inv_n), nodes_[logprobs].needs,
              [logprobs, inv_n, targets = std::move(targets),
               exclude](Tape& t, NodeId self) {
                if (!t.nodes_[logprobs].needs) return;
                const double g = t.grad(self).d[0];
                Tensor& dL = t.grad_mut(logprobs);
                for (std::size_t i = 0; i < targets.size(); ++i) {
                  if (exclude[i]) continue;
                  dL.at(i, targets[i]) -= g * inv_n;
                }
              });
}

Tape::NodeId Tape::odds_ratio_loss(NodeId mean_lp_chosen, NodeId mean_lp_rejected) {
  const double ms = value(mean_lp_chosen).d[0];
  const double mr = value(mean_lp_rejected).d[0];
  if (ms >= 0.0 || mr >= 0.0)
    fail("domain", "odds_ratio_loss: mean log-probabilities must be negative");
  const double fs = ms - log1mexp(ms);
  const double fr = mr - log1mexp(mr);
  const double delta = fs - fr;
  // softplus(-delta), stable on both signs
  const double loss = delta > 0.0 ? std::log1p(std::exp(-delta))
                                  : -delta + std::log1p(std::exp(delta));
  const bool needs = nodes_[mean_lp_chosen].needs || nodes_[mean_lp_rejected].needs;
  return push(Tensor::scalar(loss), needs,
              [mean_lp_chosen, mean_lp_rejected, ms, mr, delta](Tape& t, NodeId self) {
                const double g = t.grad(self).d[0];
                // d loss / d delta = -sigmoid(-delta)
                const double sig_neg = 1.0 / (1.0 + std::exp(delta));
                // f'(m) = 1 / (1 - e^m)
                const double dfs = 1.0 / (-std::expm1(ms));
                const double dfr = 1.0 / (-std::expm1(mr));
                if (t.nodes_[mean_lp_chosen].needs)
                  t.grad_mut(mean_lp_chosen).d[0] += g * (-sig_neg) * dfs;
                if (t.nodes_[mean_lp_rejected].needs)
                  t.grad_mut(mean_lp_rejected).d[0] += g * sig_neg * dfr;
              });
}

Tape::NodeId Tape::neg_log_sigmoid(NodeId x) {
  const double v = value(x).d[0];
  const double loss =
      v > 0.0 ? std::log1p(std::exp(-v)) : -v + std::log1p(std::exp(v));
  return push(Tensor::scalar(loss), nodes_[x].needs, [x, v](Tape& t, NodeId self) {
    if (!t.nodes_[x].needs) return;
    const double g = t.grad(self).d[0];
    const double sig_neg = 1.0 / (1.0 + std::exp(v));
    t.grad_mut(x).d[0] += g * (-sig_neg);
  });
}

void Tape::backward(NodeId root) {
  const Tensor& r = value(root);
  if (r.rows != 1 || r.cols != 1) fail("shape", "backward: root must be scalar");
  grad_mut(root).d[0] = 1.0;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs && n.back) n.back(*this, i);
  }
}

} // namespace hippro
