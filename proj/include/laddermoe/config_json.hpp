// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// JSON (de)serialization of every configuration struct. Readers are strict:
// unknown keys and wrongly typed values are rejected with the offending field
// named in the message.

#pragma once

#include <array>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "laddermoe/corpus.hpp"
#include "laddermoe/model.hpp"
#include "laddermoe/train_config.hpp"

namespace laddermoe {

using Json = nlohmann::json;

namespace detail {

template <class T>
struct is_std_vector : std::false_type {};
template <class U>
struct is_std_vector<std::vector<U>> : std::true_type {};

template <class T>
struct std_array_size : std::integral_constant<std::size_t, 0> {};
template <class U, std::size_t N>
struct std_array_size<std::array<U, N>> : std::integral_constant<std::size_t, N> {};

/// Whether `j` holds a value of type T without lossy conversion: no negative
/// or fractional numbers for unsigned fields, no strings for numbers.
template <class T>
bool json_holds(const Json& j) {
  if constexpr (std::is_same_v<T, Json>) {
    return true;
  } else if constexpr (std::is_same_v<T, bool>) {
    return j.is_boolean();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
  } else if constexpr (std::is_integral_v<T>) {
    return j.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    return j.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return j.is_string();
  } else if constexpr (is_std_vector<T>::value) {
    if (!j.is_array()) return false;
    for (const auto& e : j)
      if (!json_holds<typename T::value_type>(e)) return false;
    return true;
  } else if constexpr (std_array_size<T>::value > 0) {
    if (!j.is_array() || j.size() != std_array_size<T>::value) return false;
    for (const auto& e : j)
      if (!json_holds<typename T::value_type>(e)) return false;
    return true;
  } else {
    static_assert(std::is_same_v<T, void>, "unsupported config field type");
  }
}

}  // namespace detail

class StrictReader {
 public:
  StrictReader(const Json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ParameterError("config section '" + section_ + "' must be an object");
  }

  template <class T>
  StrictReader& get(const char* key, T& out) {
    if (!j_.contains(key)) return *this;
    seen_.insert(key);
    if (!detail::json_holds<T>(j_.at(key)))
      throw ParameterError("config field '" + section_ + "." + key + "' has the wrong type or sign: " + j_.at(key).dump());
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ParameterError("config field '" + section_ + "." + key + "' has the wrong type: " + e.what());
    }
    return *this;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ParameterError("unknown config key '" + section_ + "." + it.key() + "'");
  }

 private:
  const Json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

inline Json to_json(const EncoderConfig& c) {
  return Json{{"image_size", c.image_size},   {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
              {"depth", c.depth},             {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
              {"adapter_layers", c.adapter_layers}, {"num_experts", c.num_experts}, {"top_k", c.top_k},
              {"expert_bottleneck", c.expert_bottleneck}, {"normalize_polarity", c.normalize_polarity}};
}

inline void from_json(const Json& j, EncoderConfig& c, const std::string& section = "encoder") {
  StrictReader r(j, section);
  r.get("image_size", c.image_size).get("patch_size", c.patch_size).get("embed_dim", c.embed_dim)
      .get("depth", c.depth).get("heads", c.heads).get("mlp_ratio", c.mlp_ratio)
      .get("adapter_layers", c.adapter_layers).get("num_experts", c.num_experts).get("top_k", c.top_k)
      .get("expert_bottleneck", c.expert_bottleneck).get("normalize_polarity", c.normalize_polarity);
  r.finish();
}

inline Json to_json(const DecoderConfig& c) {
  return Json{{"num_permutations", c.num_permutations}, {"max_label_len", c.max_label_len},
              {"vocab_size", c.vocab_size},             {"heads", c.heads},
              {"mlp_ratio", c.mlp_ratio}};
}

inline void from_json(const Json& j, DecoderConfig& c, const std::string& section = "decoder") {
  StrictReader r(j, section);
  r.get("num_permutations", c.num_permutations).get("max_label_len", c.max_label_len)
      .get("vocab_size", c.vocab_size).get("heads", c.heads).get("mlp_ratio", c.mlp_ratio);
  r.finish();
}

inline Json to_json(const ModelConfig& c) { return Json{{"encoder", to_json(c.encoder)}, {"decoder", to_json(c.decoder)}}; }

inline void from_json(const Json& j, ModelConfig& c) {
  StrictReader r(j, "model");
  Json e = Json::object(), d = Json::object();
  r.get("encoder", e).get("decoder", d);
  r.finish();
  from_json(e, c.encoder);
  from_json(d, c.decoder);
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"batch_size", c.batch_size},
              {"plm_epochs", c.plm_epochs},
              {"osf_epochs", c.osf_epochs},
              {"pretrain_epochs", c.pretrain_epochs},
              {"learning_rate", c.learning_rate},
              {"pretrain_learning_rate", c.pretrain_learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed}};
}

inline void from_json(const Json& j, TrainConfig& c, const std::string& section = "train") {
  StrictReader r(j, section);
  r.get("batch_size", c.batch_size).get("plm_epochs", c.plm_epochs).get("osf_epochs", c.osf_epochs)
      .get("pretrain_epochs", c.pretrain_epochs).get("learning_rate", c.learning_rate)
      .get("pretrain_learning_rate", c.pretrain_learning_rate).get("beta1", c.beta1).get("beta2", c.beta2)
      .get("adam_eps", c.adam_eps).get("seed", c.seed);
  r.finish();
}

inline Json to_json(const CorpusConfig& c) {
  return Json{{"num_categories", c.num_categories},
              {"zipf_s", c.zipf_s},
              {"total_crops", c.total_crops},
              {"min_count", c.min_count},
              {"glyph_size", c.glyph_size},
              {"max_noise", c.max_noise},
              {"domain_weights", c.domain_weights},
              {"num_pages", c.num_pages},
              {"min_page_chars", c.min_page_chars},
              {"max_page_chars", c.max_page_chars},
              {"max_columns", c.max_columns},
              {"page_jitter", c.page_jitter}};
}

inline void from_json(const Json& j, CorpusConfig& c, const std::string& section = "data") {
  StrictReader r(j, section);
  r.get("num_categories", c.num_categories).get("zipf_s", c.zipf_s).get("total_crops", c.total_crops)
      .get("min_count", c.min_count).get("glyph_size", c.glyph_size).get("max_noise", c.max_noise)
      .get("domain_weights", c.domain_weights).get("num_pages", c.num_pages)
      .get("min_page_chars", c.min_page_chars).get("max_page_chars", c.max_page_chars)
      .get("max_columns", c.max_columns).get("page_jitter", c.page_jitter);
  r.finish();
}

}  // namespace laddermoe
