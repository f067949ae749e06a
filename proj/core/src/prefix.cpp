// SPDX-License-Identifier: Apache-2.0
#include "hippro/prefix.hpp"

#include <random>

#include "hippro/error.hpp"
#include "hippro/model.hpp"

namespace hippro {

namespace {

PrefixAdapter make_adapter(Side side, PrefixStage stage, std::size_t vt,
                           std::size_t layers, std::size_t dim, std::mt19937_64& rng) {
  if (vt == 0) fail("config", "prefix adapter needs at least one virtual token");
  if (layers == 0) fail("config", "prefix adapter needs at least one layer");
  PrefixAdapter a;
  a.side = side;
  a.stage = stage;
  a.n_virtual = vt;
  a.n_layers = layers;
  a.dim = dim;
  a.params = Tensor(layers * vt, 2 * dim);
  a.trainable = true;
  std::normal_distribution<double> dist(0.0, 0.02);
  for (double& v : a.params.d) v = dist(rng);
  return a;
}

} // namespace

std::size_t HierarchicalPrefixStack::prefix_len(Side side) const {
  std::size_t n = 0;
  if (side == Side::Encoder) {
    n = alpha.n_virtual;
    if (gamma) n += gamma->n_virtual;
  } else {
    n = beta.n_virtual;
    if (delta) n += delta->n_virtual;
  }
  return n;
}

std::vector<PrefixAdapter*> HierarchicalPrefixStack::adapters() {
  std::vector<PrefixAdapter*> out{&alpha, &beta};
  if (gamma) out.push_back(&*gamma);
  if (delta) out.push_back(&*delta);
  return out;
}

std::vector<const PrefixAdapter*> HierarchicalPrefixStack::adapters() const {
  std::vector<const PrefixAdapter*> out{&alpha, &beta};
  if (gamma) out.push_back(&*gamma);
  if (delta) out.push_back(&*delta);
  return out;
}

std::vector<PrefixAdapter*> HierarchicalPrefixStack::trainable_adapters() {
  std::vector<PrefixAdapter*> out;
  for (PrefixAdapter* a : adapters())
    if (a->trainable) out.push_back(a);
  return out;
}

HierarchicalPrefixStack init_stage1(std::size_t vt, const ModelConfig& cfg,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  HierarchicalPrefixStack stack;
  stack.alpha = make_adapter(Side::Encoder, PrefixStage::StrategyStage, vt,
                             cfg.n_layers, cfg.d_model, rng);
  stack.beta = make_adapter(Side::Decoder, PrefixStage::StrategyStage, vt,
                            cfg.n_layers, cfg.d_model, rng);
  return stack;
}

void init_stage2(HierarchicalPrefixStack& stack, std::size_t vt_e, std::uint64_t seed) {
  if (stack.has_stage2()) fail("state", "stage-2 adapters already present");
  std::mt19937_64 rng(seed);
  stack.alpha.trainable = false;
  stack.beta.trainable = false;
  if (vt_e == stack.alpha.n_virtual) {
    // Same width: the emotion blocks continue from the learned strategy
    // blocks instead of restarting from noise.
    stack.gamma = stack.alpha;
    stack.delta = stack.beta;
    stack.gamma->trainable = true;
    stack.delta->trainable = true;
  } else {
    stack.gamma = make_adapter(Side::Encoder, PrefixStage::EmotionStage, vt_e,
                               stack.alpha.n_layers, stack.alpha.dim, rng);
    stack.delta = make_adapter(Side::Decoder, PrefixStage::EmotionStage, vt_e,
                               stack.beta.n_layers, stack.beta.dim, rng);
  }
  stack.gamma->stage = PrefixStage::EmotionStage;
  stack.delta->stage = PrefixStage::EmotionStage;
}

LayerPrefix inject(const HierarchicalPrefixStack& stack, std::size_t layer_index,
                   Side side) {
  const PrefixAdapter& s1 = side == Side::Encoder ? stack.alpha : stack.beta;
  const PrefixAdapter* s2 = nullptr;
  if (side == Side::Encoder && stack.gamma) s2 = &*stack.gamma;
  if (side == Side::Decoder && stack.delta) s2 = &*stack.delta;
  if (layer_index >= s1.n_layers)
    fail("range", "prefix layer index out of range");

  const std::size_t d = s1.dim;
  const std::size_t total = s1.n_virtual + (s2 ? s2->n_virtual : 0);
  LayerPrefix out;
  out.keys = Tensor(total, d);
  out.values = Tensor(total, d);
  auto copy_rows = [&](const PrefixAdapter& a, std::size_t row0) {
    for (std::size_t t = 0; t < a.n_virtual; ++t)
      for (std::size_t c = 0; c < d; ++c) {
        out.keys.at(row0 + t, c) = a.at(t, layer_index, c);
        out.values.at(row0 + t, c) = a.at(t, layer_index, d + c);
      }
  };
  copy_rows(s1, 0);
  if (s2) copy_rows(*s2, s1.n_virtual);
  return out;
}

std::size_t param_count(std::size_t vt, std::size_t layers, std::size_t dim) {
  return vt * layers * 2 * dim;
}

} // namespace hippro
