// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// The end-to-end run: one resolved configuration (corpus, model, schedule,
// seed), the desk-scale defaults, and the steps shared by the command-line
// tool and the acceptance suite.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "laddermoe/config_json.hpp"
#include "laddermoe/corpus.hpp"
#include "laddermoe/evaluate.hpp"
#include "laddermoe/training.hpp"

namespace laddermoe {

/// Backbone pretraining data. With `categories > 0` the backbone learns a
/// separate vocabulary of procedural glyphs (ids from `first_glyph` on, drawn
/// with the corpus's domain mix and noise range); with 0 it learns the
/// training split's crops.
struct PretrainCorpusConfig {
  std::size_t categories = 200;
  std::size_t per_category = 30;
  std::size_t first_glyph = 1000;

  bool operator==(const PretrainCorpusConfig&) const = default;
};

inline Json to_json(const PretrainCorpusConfig& c) {
  return Json{{"categories", c.categories}, {"per_category", c.per_category}, {"first_glyph", c.first_glyph}};
}

inline void from_json(const Json& j, PretrainCorpusConfig& c) {
  StrictReader r(j, "pretrain_corpus");
  r.get("categories", c.categories).get("per_category", c.per_category).get("first_glyph", c.first_glyph);
  r.finish();
}

struct RunConfig {
  std::uint64_t seed = 0;
  CorpusConfig data;
  ModelConfig model;
  TrainConfig train;
  PretrainCorpusConfig pretrain_corpus;
  double column_factor = 0.5;  // column-grouping threshold factor
  std::size_t workers = 1;

  /// Derives every per-component seed from `seed` and sizes the vocabulary.
  RunConfig& resolve() {
    train.seed = derive_seed(seed, "train");
    model.decoder.vocab_size = data.num_categories + tokens::kNumSpecials;
    return *this;
  }

  std::uint64_t corpus_seed() const { return derive_seed(seed, "corpus"); }

  void validate() const {
    data.validate();
    model.validate();
    train.validate();
    if (model.decoder.vocab_size != data.num_categories + tokens::kNumSpecials)
      throw ParameterError("decoder.vocab_size must equal data.num_categories + " + std::to_string(tokens::kNumSpecials));
    if (!(column_factor > 0.0) || !std::isfinite(column_factor)) throw ParameterError("column_factor must be > 0");
    if (workers < 1) throw ParameterError("workers must be >= 1");
    if (pretrain_corpus.categories > 0) {
      if (pretrain_corpus.categories < 2) throw ParameterError("pretrain_corpus.categories must be 0 or >= 2");
      if (pretrain_corpus.per_category < 1) throw ParameterError("pretrain_corpus.per_category must be >= 1");
      if (pretrain_corpus.first_glyph < data.num_categories)
        throw ParameterError("pretrain_corpus.first_glyph must not overlap the corpus categories");
    }
  }
  bool operator==(const RunConfig&) const = default;
};

/// Desk-scale configuration: 60-category corpus with 200 pages, a 4-block
/// 32-wide ViT pretrained for 10 epochs on a 200-glyph auxiliary vocabulary,
/// 8 experts (top-2) after every block, and the 8 + 2 epoch schedule.
inline RunConfig desk_config(std::uint64_t seed = 0) {
  RunConfig r;
  r.seed = seed;
  r.data.num_pages = 200;
  EncoderConfig& e = r.model.encoder;
  e.image_size = 16;
  e.patch_size = 4;
  e.embed_dim = 32;
  e.depth = 4;
  e.heads = 2;
  e.mlp_ratio = 2;
  e.adapter_layers = {0, 1, 2, 3};
  e.num_experts = 8;
  e.top_k = 2;
  e.expert_bottleneck = 8;
  DecoderConfig& d = r.model.decoder;
  d.num_permutations = 6;
  d.max_label_len = 8;
  d.heads = 2;
  d.mlp_ratio = 2;
  r.train.batch_size = 32;
  r.train.plm_epochs = 8;
  r.train.osf_epochs = 2;
  r.train.pretrain_epochs = 10;
  r.train.learning_rate = 2e-3;
  r.train.pretrain_learning_rate = 2e-3;
  return r.resolve();
}

/// JSON form with sections seed, workers, column_factor, data, encoder,
/// decoder, train and pretrain_corpus. The derived train seed and vocabulary size are omitted.
inline Json to_json(const RunConfig& r) {
  Json train = to_json(r.train);
  train.erase("seed");
  Json decoder = to_json(r.model.decoder);
  decoder.erase("vocab_size");
  return Json{{"seed", r.seed},
              {"workers", r.workers},
              {"column_factor", r.column_factor},
              {"data", to_json(r.data)},
              {"encoder", to_json(r.model.encoder)},
              {"decoder", decoder},
              {"train", train},
              {"pretrain_corpus", to_json(r.pretrain_corpus)}};
}

/// Overlays the keys present in `j` onto `r` (unknown keys are rejected) and
/// re-resolves derived fields.
inline void from_json(const Json& j, RunConfig& r) {
  StrictReader top(j, "config");
  Json data = Json::object(), enc = Json::object(), dec = Json::object(), train = Json::object();
  Json aux = Json::object();
  top.get("seed", r.seed).get("workers", r.workers).get("column_factor", r.column_factor);
  top.get("data", data).get("encoder", enc).get("decoder", dec).get("train", train).get("pretrain_corpus", aux);
  top.finish();
  if (train.is_object() && train.contains("seed"))
    throw ParameterError("config field 'train.seed' is derived from the top-level 'seed'; set that instead");
  if (dec.is_object() && dec.contains("vocab_size"))
    throw ParameterError("config field 'decoder.vocab_size' is derived from 'data.num_categories'");
  from_json(data, r.data);
  from_json(enc, r.model.encoder);
  from_json(dec, r.model.decoder);
  from_json(train, r.train);
  from_json(aux, r.pretrain_corpus);
  r.resolve();
}

// ---------------------------------------------------------------------------
// Steps

inline Corpus make_corpus(const RunConfig& r) { return build_corpus(r.data, r.corpus_seed()); }

inline std::vector<TextSample> split_samples(const Corpus& c, Split s, const RunConfig& r) {
  return text_samples(c.crops_in(s), r.model.encoder.image_size);
}

/// The auxiliary pretraining glyphs, labeled 0 .. categories-1.
inline std::vector<TextSample> pretrain_samples(const RunConfig& r) {
  const PretrainCorpusConfig& pc = r.pretrain_corpus;
  Rng rng(r.seed, "pretrain_corpus");
  std::vector<TextSample> out;
  out.reserve(pc.categories * pc.per_category);
  for (std::size_t c = 0; c < pc.categories; ++c)
    for (std::size_t k = 0; k < pc.per_category; ++k) {
      const Domain d = sample_domain(r.data.domain_weights, rng);
      const double noise = rng.uniform() * r.data.max_noise;
      GlyphSample g = render_glyph(pc.first_glyph + c, d, noise, rng.next_u64(), r.model.encoder.image_size);
      out.push_back({quantize8(g.image), {c}});
    }
  return out;
}

/// Pretrains the backbone on the auxiliary vocabulary, or on `train` (the
/// training split's crops) when the auxiliary vocabulary is disabled.
inline PretrainResult pretrain(const RunConfig& r, const std::vector<TextSample>& train) {
  if (r.pretrain_corpus.categories == 0)
    return pretrain_backbone(train, r.data.num_categories, r.model.encoder, r.train);
  return pretrain_backbone(pretrain_samples(r), r.pretrain_corpus.categories, r.model.encoder, r.train);
}

/// A fresh recognizer carrying the pretrained backbone, ready for the schedule.
inline TrainingSession start_run(const RunConfig& r, const Checkpoint& pretrained) {
  Model m = Model::create(r.model, r.train.seed);
  apply_pretrained_backbone(m, pretrained);
  return start_session(std::move(m), r.train);
}

/// Single-character report over a split of the corpus.
inline CharReport evaluate_chars(const Model& m, const Corpus& c, Split s, std::size_t workers = 1) {
  const std::vector<GlyphSample> crops = c.crops_in(s);
  std::vector<std::size_t> labels;
  std::vector<Domain> domains;
  for (const auto& g : crops) {
    labels.push_back(g.category);
    domains.push_back(g.domain);
  }
  return char_report(predict_categories(m, crops, workers), labels, domains, c.retained, c.groups);
}

struct PageEvaluation {
  std::vector<std::size_t> page_indices;
  std::vector<PageTranscription> transcriptions;
  PageReport report;
};

/// Transcribes a split's pages from their ground-truth boxes and scores the
/// reading-order text against the reference.
inline PageEvaluation evaluate_pages(const Model& m, const Corpus& c, Split s, double factor, std::size_t workers = 1) {
  PageEvaluation ev;
  ev.page_indices = c.page_split.indices(s);
  std::vector<const Image*> images;
  std::vector<std::vector<BBox>> boxes;
  std::vector<std::vector<std::size_t>> refs, hyps;
  for (auto i : ev.page_indices) {
    const PageSample& p = c.pages[i];
    images.push_back(&p.image);
    boxes.emplace_back();
    refs.emplace_back();
    for (const auto& ch : p.chars) {
      boxes.back().push_back(ch.box);
      refs.back().push_back(ch.category);
    }
  }
  ev.transcriptions = transcribe_pages(m, images, boxes, factor, workers);
  for (const auto& t : ev.transcriptions) hyps.push_back(t.text);
  ev.report = page_report(refs, hyps);
  return ev;
}

}  // namespace laddermoe
