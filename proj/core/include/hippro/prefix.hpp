// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hippro/tensor.hpp"

namespace hippro {

struct ModelConfig; // model.hpp

enum class Side : std::uint8_t { Encoder, Decoder };
enum class PrefixStage : std::uint8_t { StrategyStage, EmotionStage };

/// One block of virtual key-value tokens for every attention layer of one
/// side. Logical shape n_virtual x n_layers x 2d (keys then values along
/// the last axis); stored layer-major as (n_layers * n_virtual) x 2d.
struct PrefixAdapter {
  Side side = Side::Encoder;
  PrefixStage stage = PrefixStage::StrategyStage;
  std::size_t n_virtual = 0;
  std::size_t n_layers = 0;
  std::size_t dim = 0; // d; each token holds 2d reals per layer
  Tensor params;       // (n_layers * n_virtual) x 2d
  bool trainable = false;

  double& at(std::size_t token, std::size_t layer, std::size_t c) {
    return params.at(layer * n_virtual + token, c);
  }
  double at(std::size_t token, std::size_t layer, std::size_t c) const {
    return params.at(layer * n_virtual + token, c);
  }
  std::size_t param_count() const { return n_virtual * n_layers * 2 * dim; }
};

/// Key and value rows for one attention layer, already concatenated in
/// stack order [stage-1 tokens; stage-2 tokens]. Each is prefix_len x d.
struct LayerPrefix {
  Tensor keys;
  Tensor values;
};

/// The four hierarchical blocks. Stage 1 trains alpha (encoder) and beta
/// (decoder); stage 2 adds gamma/delta on top and freezes stage 1.
struct HierarchicalPrefixStack {
  PrefixAdapter alpha;
  PrefixAdapter beta;
  std::optional<PrefixAdapter> gamma;
  std::optional<PrefixAdapter> delta;
  std::string lineage; // checkpoint hash that supplied alpha*/beta*, if any

  bool has_stage2() const { return gamma.has_value(); }
  std::size_t prefix_len(Side side) const;

  std::vector<PrefixAdapter*> adapters();
  std::vector<const PrefixAdapter*> adapters() const;
  std::vector<PrefixAdapter*> trainable_adapters();
};

/// Fresh stage-1 stack: alpha across all encoder layers, beta across all
/// decoder layers, both trainable, entries ~ N(0, 0.02^2).
HierarchicalPrefixStack init_stage1(std::size_t vt, const ModelConfig& cfg,
                                    std::uint64_t seed);

/// Adds gamma/delta (trainable) and freezes alpha/beta in place. When
/// vt_e matches the stage-1 width, gamma and delta start as copies of
/// alpha* and beta*; otherwise they are drawn fresh at scale 0.02.
void init_stage2(HierarchicalPrefixStack& stack, std::size_t vt_e, std::uint64_t seed);

/// Concatenated [stage-1; stage-2] key/value rows for one layer of one side.
LayerPrefix inject(const HierarchicalPrefixStack& stack, std::size_t layer_index,
                   Side side);

/// Per-adapter trainable parameter count: vt * l * 2d.
std::size_t param_count(std::size_t vt, std::size_t layers, std::size_t dim);

} // namespace hippro
