// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of the full recognizer on tiny dimensions.

#pragma once

#include <cstdint>
#include <vector>

#include "laddermoe/model.hpp"
#include "laddermoe/training.hpp"

namespace laddermoe {

/// The smallest configuration that still exercises every module: two
/// blocks, an adapter after each, four experts with top-2 routing, and
/// labels of up to three characters.
inline ModelConfig grad_check_config() {
  ModelConfig mc;
  EncoderConfig& e = mc.encoder;
  e.image_size = 8;
  e.patch_size = 4;
  e.embed_dim = 8;
  e.depth = 2;
  e.heads = 2;
  e.mlp_ratio = 2;
  e.adapter_layers = {0, 1};
  e.num_experts = 4;
  e.top_k = 2;
  e.expert_bottleneck = 4;
  DecoderConfig& d = mc.decoder;
  d.num_permutations = 3;
  d.max_label_len = 3;
  d.vocab_size = 9;
  d.heads = 2;
  d.mlp_ratio = 2;
  return mc;
}

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t label_length = 3;
  double eps = 1e-4;
  double tolerance = 1e-4;
  Stencil stencil = Stencil::FivePoint;
  ErrorMeasure measure = ErrorMeasure::Elementwise;
};

/// Builds the tiny recognizer, freezes its backbone, gives the zero-initialized
/// expert up-projections, routers and gates random values so that every
/// trainable tensor influences the loss and no two router scores tie, and
/// checks the gradient of the permuted-mask loss of one random labeled image
/// against central differences.
inline FiniteDifferenceReport model_gradient_check(const GradCheckOptions& opt = {},
                                                   const ModelConfig& mc = grad_check_config()) {
  if (opt.label_length < 1 || opt.label_length > mc.decoder.max_label_len)
    throw ParameterError("grad check label length must lie in [1, max_label_len]");
  Model m = Model::create(mc, opt.seed);
  freeze_partition(m);
  Rng rng(opt.seed, "gradcheck");
  for (auto& ad : m.encoder.adapters) {
    for (double& v : ad.router.projection.weight.data()) v = 0.3 * rng.normal();
    for (auto& ex : ad.experts)
      for (double& v : ex.up.weight.data()) v = 0.5 * rng.normal();
    for (double& v : ad.gate.data()) v = rng.normal();
  }
  Image image(mc.encoder.image_size, mc.encoder.image_size);
  for (double& p : image.pixels) p = rng.uniform();
  std::vector<std::size_t> label(opt.label_length);
  const std::size_t categories = mc.decoder.vocab_size - tokens::kNumSpecials;
  for (auto& c : label) c = rng.below(categories);
  const std::vector<int> target = label_tokens(label);
  const auto masks = make_permutation_masks(opt.label_length + 1, mc.decoder.num_permutations, rng);

  std::vector<std::pair<std::string, Tensor>> params;
  for (auto& [name, t] : m.trainable_parameters()) params.emplace_back(name, t);
  return finite_difference_check([&] { return m.loss(image, target, masks); }, params, opt.eps, opt.tolerance, opt.stencil,
                                 opt.measure);
}

}  // namespace laddermoe
