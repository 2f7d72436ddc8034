// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Encoder + decoder recognizer and its frozen/trainable parameter partition.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "laddermoe/decoder.hpp"
#include "laddermoe/encoder.hpp"

namespace laddermoe {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (encoder.embed_dim % decoder.heads != 0) throw ParameterError("decoder heads must divide embed_dim");
  }
  bool operator==(const ModelConfig&) const = default;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class Model {
 public:
  ModelConfig cfg;
  EncoderParams encoder;
  DecoderParams decoder;

  static Model create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.encoder = init_encoder(cfg.encoder, derive_seed(seed, "model.encoder"));
    m.decoder = init_decoder(cfg.decoder, cfg.encoder.embed_dim, derive_seed(seed, "model.decoder"));
    return m;
  }

  void visit(const nn::ParamVisitor& fn) {
    encoder.visit(fn);
    decoder.visit(fn);
  }

  /// All parameters in a fixed order (backbone, adapters, decoder).
  NamedTensors parameters() {
    NamedTensors out;
    visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
  }

  NamedTensors trainable_parameters() {
    NamedTensors out;
    visit([&](const std::string& name, Tensor& t) {
      if (t.requires_grad()) out.emplace_back(name, t);
    });
    return out;
  }

  /// Deep copy: same configuration, independent parameter storage.
  Model clone() const {
    Model m = *this;
    m.visit([](const std::string&, Tensor& t) {
      const bool rg = t.requires_grad();
      t = t.detach();
      t.set_requires_grad(rg);
    });
    return m;
  }

  /// Copies parameter values by name; every name in `src` must exist here.
  void load_values(const std::map<std::string, std::vector<double>>& src, bool require_all = true) {
    std::size_t used = 0;
    visit([&](const std::string& name, Tensor& t) {
      auto it = src.find(name);
      if (it == src.end()) {
        if (require_all) throw FormatError("missing parameter '" + name + "'");
        return;
      }
      if (it->second.size() != t.size()) throw FormatError("parameter '" + name + "' has the wrong size");
      std::copy(it->second.begin(), it->second.end(), t.data().begin());
      ++used;
    });
    if (require_all && used != src.size()) throw FormatError("checkpoint holds parameters this model does not have");
  }

  EncodeResult encode(const Image& image, bool record_routing = false) const {
    return laddermoe::encode(image, cfg.encoder, encoder, record_routing);
  }

  /// Greedy recognition of one crop (no graph is recorded).
  std::vector<std::size_t> recognize(const Image& image, std::size_t max_len = 1) const {
    NoGradGuard guard;
    const EncodeResult enc = encode(image);
    return decode_infer(enc.features, decoder, cfg.decoder, max_len);
  }

  /// Recognition loss of one labeled crop averaged over `masks`.
  Tensor loss(const Image& image, const std::vector<int>& target, const std::vector<VisibilityMask>& masks) const {
    const EncodeResult enc = encode(image);
    return decode_loss(enc.features, target, masks, decoder, cfg.decoder);
  }
};

inline bool is_backbone_param(const std::string& name) { return name.rfind("encoder.backbone.", 0) == 0; }

struct ParamPartition {
  std::vector<std::string> frozen;
  std::vector<std::string> trainable;
};

/// Freezes every backbone tensor and marks gates, routers, experts and the
/// decoder trainable.
inline ParamPartition freeze_partition(Model& m) {
  ParamPartition p;
  m.visit([&](const std::string& name, Tensor& t) {
    const bool frozen = is_backbone_param(name);
    t.set_requires_grad(!frozen);
    t.zero_grad();
    (frozen ? p.frozen : p.trainable).push_back(name);
  });
  return p;
}

}  // namespace laddermoe
