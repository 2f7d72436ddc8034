// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include "laddermoe/config_json.hpp"
#include "laddermoe/pipeline.hpp"

using namespace laddermoe;

TEST_CASE("configs round-trip through JSON", "[config]") {
  EncoderConfig e;
  e.num_experts = 36;
  e.top_k = 5;
  e.adapter_layers = {1, 3};
  EncoderConfig e2;
  from_json(to_json(e), e2);
  CHECK(e2 == e);

  DecoderConfig d;
  d.vocab_size = 63;
  d.num_permutations = 6;
  DecoderConfig d2;
  from_json(to_json(d), d2);
  CHECK(d2 == d);

  ModelConfig m;
  m.encoder = e;
  m.decoder = d;
  ModelConfig m2;
  from_json(to_json(m), m2);
  CHECK(m2 == m);

  TrainConfig t;
  t.plm_epochs = 35;
  t.osf_epochs = 5;
  t.learning_rate = 1e-4;
  t.seed = 0xffffffffffffULL;
  TrainConfig t2;
  from_json(to_json(t), t2);
  CHECK(t2 == t);
  CHECK_NOTHROW(t2.validate());

  CorpusConfig c;
  c.domain_weights = {1, 2, 3};
  CorpusConfig c2;
  from_json(to_json(c), c2);
  CHECK(c2 == c);
}

TEST_CASE("missing keys keep defaults", "[config]") {
  EncoderConfig e;
  from_json(Json{{"top_k", 3}}, e);
  CHECK(e.top_k == 3);
  CHECK(e.num_experts == EncoderConfig{}.num_experts);
  TrainConfig t;
  from_json(Json::object(), t);
  CHECK(t == TrainConfig{});
}

TEST_CASE("strict readers reject unknown keys and lossy values", "[config]") {
  EncoderConfig e;
  CHECK_THROWS_AS(from_json(Json{{"topk", 3}}, e), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"top_k", -1}}, e), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"top_k", 2.5}}, e), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"top_k", "2"}}, e), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"adapter_layers", {1, -2}}}, e), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"adapter_layers", 3}}, e), ParameterError);
  CHECK_THROWS_AS(from_json(Json::array(), e), ParameterError);

  try {
    from_json(Json{{"top_k", -1}}, e);
  } catch (const ParameterError& err) {
    CHECK(std::string(err.what()).find("encoder.top_k") != std::string::npos);
  }

  TrainConfig t;
  CHECK_NOTHROW(from_json(Json{{"learning_rate", 1}}, t));  // integers are valid reals
  CHECK(t.learning_rate == 1.0);
  CHECK_THROWS_AS(from_json(Json{{"learning_rate", true}}, t), ParameterError);

  CorpusConfig c;
  CHECK_THROWS_AS(from_json(Json{{"domain_weights", {1, 2}}}, c), ParameterError);
  ModelConfig m;
  CHECK_THROWS_AS(from_json(Json{{"encoder", Json::object()}, {"extra", 1}}, m), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"decoder", {{"vocab", 5}}}}, m), ParameterError);
}

TEST_CASE("range validation", "[config]") {
  TrainConfig t;
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ParameterError);
  t = {};
  t.beta2 = 1.0;
  CHECK_THROWS_AS(t.validate(), ParameterError);
  t = {};
  t.plm_epochs = 0;
  t.osf_epochs = 0;
  CHECK_NOTHROW(t.validate());

  ModelConfig m;
  m.decoder.vocab_size = 63;
  m.encoder.embed_dim = 30;
  m.encoder.heads = 3;
  m.decoder.heads = 4;
  CHECK_THROWS_AS(m.validate(), ParameterError);
}

TEST_CASE("run config derives seeds and vocabulary and round-trips", "[config]") {
  RunConfig r = desk_config(7);
  CHECK_NOTHROW(r.validate());
  CHECK(r.model.decoder.vocab_size == r.data.num_categories + tokens::kNumSpecials);
  CHECK(r.train.seed == derive_seed(7, "train"));
  CHECK(r.corpus_seed() != r.train.seed);

  const Json j = to_json(r);
  CHECK_FALSE(j["train"].contains("seed"));
  CHECK_FALSE(j["decoder"].contains("vocab_size"));
  RunConfig back;
  from_json(j, back);
  CHECK(back == r);

  RunConfig o = desk_config(0);
  from_json(Json{{"seed", 9}, {"data", {{"num_categories", 20}}}}, o);
  CHECK(o.train.seed == derive_seed(9, "train"));
  CHECK(o.model.decoder.vocab_size == 20 + tokens::kNumSpecials);

  CHECK_THROWS_AS(from_json(Json{{"train", {{"seed", 1}}}}, o), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"decoder", {{"vocab_size", 9}}}}, o), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"pretrain_corpus", {{"classes", 9}}}}, o), ParameterError);
  CHECK_THROWS_AS(from_json(Json{{"extra", 1}}, o), ParameterError);

  RunConfig overlap = desk_config(0);
  overlap.pretrain_corpus.first_glyph = 10;
  CHECK_THROWS_AS(overlap.validate(), ParameterError);
}

TEST_CASE("auxiliary pretraining glyphs are labeled densely and repeatable", "[config]") {
  RunConfig r = desk_config(3);
  r.pretrain_corpus.categories = 4;
  r.pretrain_corpus.per_category = 3;
  const auto a = pretrain_samples(r);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].label == std::vector<std::size_t>{i / 3});
  const auto b = pretrain_samples(r);
  CHECK(a[5].image.pixels == b[5].image.pixels);
  r.seed = 4;
  CHECK(pretrain_samples(r)[5].image.pixels != a[5].image.pixels);
}
