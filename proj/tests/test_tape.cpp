// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "hippro/error.hpp"
#include "hippro/tape.hpp"

using namespace hippro;

namespace {

constexpr double kLn2 = 0.6931471805599453;

Tensor randn(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(r, c);
  for (double& v : t.d) v = dist(rng);
  return t;
}

// Central finite differences against the tape's analytic gradients for a
// scalar-valued graph over the given leaf tensors.
template <typename Build>
double fd_max_rel(std::vector<Tensor> inputs, Build build, double h = 1e-6) {
  Tape t;
  std::vector<Tape::NodeId> leaves;
  for (const Tensor& in : inputs) leaves.push_back(t.leaf(in, true));
  Tape::NodeId root = build(t, leaves);
  REQUIRE(t.value(root).size() == 1);
  t.backward(root);

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t2;
    std::vector<Tape::NodeId> l2;
    for (const Tensor& x : xs) l2.push_back(t2.leaf(x, false));
    return t2.value(build(t2, l2)).d[0];
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    for (std::size_t i = 0; i < inputs[p].d.size(); ++i) {
      std::vector<Tensor> xs = inputs;
      xs[p].d[i] = inputs[p].d[i] + h;
      const double up = eval(xs);
      xs[p].d[i] = inputs[p].d[i] - h;
      const double dn = eval(xs);
      const double numeric = (up - dn) / (2.0 * h);
      const double analytic = t.grad(leaves[p]).d[i];
      worst = std::max(worst, std::abs(numeric - analytic) /
                                  std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
    }
  }
  return worst;
}

// u (1 x n) * M (n x m) * w (m x 1): reduces a matrix node to a scalar with
// distinct per-entry weights, so gradient errors cannot cancel.
Tape::NodeId reduce(Tape& t, Tape::NodeId m, const Tensor& u, const Tensor& w) {
  Tape::NodeId un = t.leaf(u, false);
  Tape::NodeId wn = t.leaf(w, false);
  return t.matmul(t.matmul(un, m), wn);
}

} // namespace

TEST_CASE("log1mexp is stable on both branches") {
  // exp(log1mexp(x)) should reproduce 1 - exp(x) through the whole range.
  for (double x : {-40.0, -10.0, -3.0, -1.0, -kLn2, -0.5, -0.1, -1e-6, -1e-12}) {
    const double got = std::exp(log1mexp(x));
    const double want = -std::expm1(x);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
  CHECK(log1mexp(-kLn2) == doctest::Approx(-kLn2).epsilon(1e-14));
}

TEST_CASE("linear and elementwise ops match finite differences") {
  std::mt19937_64 rng(7);
  const Tensor u13 = randn(1, 3, rng), w41 = randn(4, 1, rng);
  const Tensor u12 = randn(1, 2, rng), w31 = randn(3, 1, rng);

  SUBCASE("matmul") {
    CHECK(fd_max_rel({randn(3, 2, rng), randn(2, 4, rng)}, [&](Tape& t, auto& l) {
            Tape::NodeId un = t.leaf(u13, false);
            Tape::NodeId wn = t.leaf(w41, false);
            return t.matmul(t.matmul(un, t.matmul(l[0], l[1])), wn);
          }) < 1e-7);
  }
  SUBCASE("add sub scale") {
    CHECK(fd_max_rel({randn(2, 3, rng), randn(2, 3, rng)}, [&](Tape& t, auto& l) {
            return reduce(t, t.scale(t.sub(t.add(l[0], l[1]), l[1]), 1.7), u12, w31);
          }) < 1e-7);
  }
  SUBCASE("add_bias") {
    CHECK(fd_max_rel({randn(2, 3, rng), randn(1, 3, rng)}, [&](Tape& t, auto& l) {
            return reduce(t, t.add_bias(l[0], l[1]), u12, w31);
          }) < 1e-7);
  }
  SUBCASE("gelu") {
    CHECK(fd_max_rel({randn(2, 3, rng)}, [&](Tape& t, auto& l) {
            return reduce(t, t.gelu(l[0]), u12, w31);
          }) < 1e-6);
  }
  SUBCASE("layer_norm") {
    CHECK(fd_max_rel({randn(2, 3, rng), randn(1, 3, rng), randn(1, 3, rng)},
                     [&](Tape& t, auto& l) {
                       return reduce(t, t.layer_norm(l[0], l[1], l[2], 1e-5), u12, w31);
                     }) < 1e-6);
  }
  SUBCASE("concat_rows and slice") {
    CHECK(fd_max_rel({randn(2, 3, rng), randn(3, 3, rng)}, [&](Tape& t, auto& l) {
            Tape::NodeId cat = t.concat_rows(l[0], l[1]); // 5 x 3
            Tape::NodeId sl = t.slice(cat, 1, 3, 1, 3);   // 2 x 2
            Tensor u(1, 2), w(2, 1);
            u.d = {0.3, -1.1};
            w.d = {0.9, 0.4};
            return reduce(t, sl, u, w);
          }) < 1e-7);
  }
  SUBCASE("gather_rows accumulates over repeated ids") {
    CHECK(fd_max_rel({randn(4, 3, rng)}, [&](Tape& t, auto& l) {
            Tape::NodeId g = t.gather_rows(l[0], {2, 0, 2}); // row 2 twice
            Tensor u(1, 3), w(3, 1);
            u.d = {1.0, -0.5, 0.25};
            w.d = {0.7, -0.2, 1.3};
            return reduce(t, g, u, w);
          }) < 1e-7);
  }
  SUBCASE("log_softmax_rows") {
    CHECK(fd_max_rel({randn(2, 5, rng)}, [&](Tape& t, auto& l) {
            Tape::NodeId y = t.log_softmax_rows(l[0]);
            return t.pick_sum(y, {3, 1});
          }) < 1e-7);
  }
  SUBCASE("pick_sum and nll_mean") {
    CHECK(fd_max_rel({randn(3, 4, rng)}, [&](Tape& t, auto& l) {
            Tape::NodeId y = t.log_softmax_rows(l[0]);
            return t.nll_mean(y, {1, 2, 0}, {false, true, false});
          }) < 1e-7);
  }
}

TEST_CASE("attention matches finite differences under every mask shape") {
  std::mt19937_64 rng(11);

  auto check = [&](AttnMask mask, std::size_t nq, std::size_t nk) {
    CHECK(fd_max_rel({randn(nq, 4, rng, 0.5), randn(nk, 4, rng, 0.5),
                      randn(nk, 4, rng, 0.5)},
                     [&](Tape& t, auto& l) {
                       Tape::NodeId o = t.attention(l[0], l[1], l[2], 2, mask);
                       Tensor ur(1, nq), wr(4, 1);
                       for (std::size_t i = 0; i < nq; ++i)
                         ur.d[i] = 0.3 + 0.41 * static_cast<double>(i);
                       wr.d = {0.9, -0.2, 0.5, 1.1};
                       return t.matmul(t.matmul(t.leaf(ur, false), o), t.leaf(wr, false));
                     }) < 1e-6);
  };
  check({0, false, true}, 3, 3);       // full bidirectional
  check({0, true, true}, 3, 3);        // causal
  check({2, true, true}, 3, 5);        // causal with prefix rows
  check({2, false, true}, 3, 5);       // bidirectional with prefix rows
}

TEST_CASE("attention equals a straight-line softmax recomputation") {
  std::mt19937_64 rng(13);
  const std::size_t n = 4, m = 6, d = 6, heads = 3, dh = d / heads, prefix = 2;
  Tensor Q = randn(n, d, rng), K = randn(m, d, rng), V = randn(m, d, rng);
  AttnMask mask{prefix, true, true};

  Tape t;
  Tape::NodeId o = t.attention(t.leaf(Q, false), t.leaf(K, false), t.leaf(V, false),
                               heads, mask);
  const Tensor& O = t.value(o);

  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> w(m, 0.0);
      double denom = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (!mask.allowed(i, j)) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q.at(i, c0 + c) * K.at(j, c0 + c);
        w[j] = std::exp(s / std::sqrt(static_cast<double>(dh)));
        denom += w[j];
      }
      for (std::size_t c = 0; c < dh; ++c) {
        double want = 0.0;
        for (std::size_t j = 0; j < m; ++j) want += w[j] / denom * V.at(j, c0 + c);
        CHECK(O.at(i, c0 + c) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("causal masking blocks information from future positions") {
  std::mt19937_64 rng(17);
  const std::size_t n = 5, d = 4, prefix = 2;
  Tensor Q = randn(n, d, rng), K = randn(prefix + n, d, rng), V = randn(prefix + n, d, rng);

  auto run = [&](const Tensor& v) {
    Tape t;
    return t.value(t.attention(t.leaf(Q, false), t.leaf(K, false), t.leaf(v, false), 2,
                               {prefix, true, true}));
  };
  const Tensor base = run(V);
  Tensor poked = V;
  const std::size_t poke_real = 3; // real position index
  for (std::size_t c = 0; c < d; ++c) poked.at(prefix + poke_real, c) += 10.0;
  const Tensor after = run(poked);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      if (i < poke_real)
        CHECK(after.at(i, c) == base.at(i, c)); // bit-identical: never attended
      else
        CHECK(after.at(i, c) != base.at(i, c));
    }
}

TEST_CASE("masked-out prefix rows reproduce the prefix-free result exactly") {
  std::mt19937_64 rng(19);
  const std::size_t n = 4, d = 6, prefix = 3;
  Tensor Q = randn(n, d, rng);
  Tensor Kp = randn(prefix + n, d, rng), Vp = randn(prefix + n, d, rng);
  Tensor K(n, d), V(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      K.at(i, c) = Kp.at(prefix + i, c);
      V.at(i, c) = Vp.at(prefix + i, c);
    }

  Tape t;
  const Tensor& with_masked = t.value(t.attention(
      t.leaf(Q, false), t.leaf(Kp, false), t.leaf(Vp, false), 2, {prefix, true, false}));
  const Tensor& without = t.value(t.attention(t.leaf(Q, false), t.leaf(K, false),
                                              t.leaf(V, false), 2, {0, true, true}));
  REQUIRE(with_masked.size() == without.size());
  for (std::size_t i = 0; i < without.size(); ++i)
    CHECK(with_masked.d[i] == without.d[i]);
}

TEST_CASE("frozen leaves keep bit-zero gradients") {
  std::mt19937_64 rng(23);
  Tape t;
  Tape::NodeId frozen = t.leaf(randn(2, 3, rng), false);
  Tape::NodeId hot = t.leaf(randn(3, 2, rng), true);
  Tape::NodeId prod = t.matmul(frozen, hot); // 2 x 2
  Tensor u(1, 2), w(2, 1);
  u.d = {1.0, 2.0};
  w.d = {0.5, -0.5};
  Tape::NodeId root = t.matmul(t.matmul(t.leaf(u, false), prod), t.leaf(w, false));
  t.backward(root);

  for (double g : t.grad(frozen).d) CHECK(g == 0.0);
  double hot_norm = 0.0;
  for (double g : t.grad(hot).d) hot_norm += std::abs(g);
  CHECK(hot_norm > 0.0);
}

TEST_CASE("odds ratio loss closed forms") {
  auto make = [](double pi_s, double pi_r, bool needs = true) {
    Tape t;
    Tape::NodeId ms = t.leaf(Tensor::scalar(std::log(pi_s)), needs);
    Tape::NodeId mr = t.leaf(Tensor::scalar(std::log(pi_r)), needs);
    Tape::NodeId loss = t.odds_ratio_loss(ms, mr);
    return t.value(loss).d[0];
  };
  // sigma(0) = 1/2 at equal probabilities, for any probability level
  for (double pi : {0.1, 0.5, 0.9}) CHECK(std::abs(make(pi, pi) - kLn2) < 1e-15);
  // -log sigma(log 4) = log(1 + 1/4)
  CHECK(make(0.8, 0.5) == doctest::Approx(std::log(1.25)).epsilon(1e-13));
  CHECK(make(0.5, 0.8) == doctest::Approx(std::log(5.0)).epsilon(1e-13));
}

TEST_CASE("odds ratio loss matches finite differences") {
  CHECK(fd_max_rel({Tensor::scalar(std::log(0.37)), Tensor::scalar(std::log(0.62))},
                   [](Tape& t, auto& l) { return t.odds_ratio_loss(l[0], l[1]); },
                   1e-7) < 1e-7);
  CHECK(fd_max_rel({Tensor::scalar(-7.3), Tensor::scalar(-0.02)},
                   [](Tape& t, auto& l) { return t.odds_ratio_loss(l[0], l[1]); },
                   1e-7) < 1e-6);
}

TEST_CASE("odds ratio loss rejects non-negative mean log-probabilities") {
  Tape t;
  Tape::NodeId bad = t.leaf(Tensor::scalar(0.0), false);
  Tape::NodeId ok = t.leaf(Tensor::scalar(-1.0), false);
  CHECK_THROWS_AS(t.odds_ratio_loss(bad, ok), Error);
  CHECK_THROWS_AS(t.odds_ratio_loss(ok, bad), Error);
}

TEST_CASE("neg_log_sigmoid matches softplus identities") {
  Tape t;
  CHECK(t.value(t.neg_log_sigmoid(t.leaf(Tensor::scalar(0.0), false))).d[0] ==
        doctest::Approx(kLn2).epsilon(1e-15));
  CHECK(fd_max_rel({Tensor::scalar(1.3)},
                   [](Tape& tt, auto& l) { return tt.neg_log_sigmoid(l[0]); },
                   1e-7) < 1e-8);
}

TEST_CASE("nll_mean hand-computed case and empty guard") {
  // Target log-probs ln(1/2), ln(1/4), ln(1/8) -> mean NLL = 2 ln 2.
  Tensor rows(3, 2);
  rows.at(0, 0) = std::log(0.5);
  rows.at(1, 0) = std::log(0.25);
  rows.at(2, 0) = std::log(0.125);
  Tape t;
  Tape::NodeId lp = t.leaf(rows, false);
  const double got = t.value(t.nll_mean(lp, {0, 0, 0}, {false, false, false})).d[0];
  CHECK(got == doctest::Approx(2.0 * kLn2).epsilon(1e-14));
  CHECK_THROWS_AS(t.nll_mean(lp, {0, 0, 0}, {true, true, true}), Error);
}

TEST_CASE("backward requires a scalar root") {
  Tape t;
  Tape::NodeId m = t.leaf(Tensor(2, 2), true);
  CHECK_THROWS_AS(t.backward(m), Error);
}

TEST_CASE("uniform distribution NLL is ln(vocab)") {
  const std::size_t vocab = 4;
  Tensor logits(3, vocab); // all zeros -> uniform after softmax
  Tape t;
  Tape::NodeId y = t.log_softmax_rows(t.leaf(logits, false));
  const double nll = t.value(t.nll_mean(y, {0, 1, 2}, {false, false, false})).d[0];
  CHECK(nll == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}
