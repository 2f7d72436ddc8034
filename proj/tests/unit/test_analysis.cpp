// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "laddermoe/analysis.hpp"

using namespace laddermoe;
using Catch::Matchers::WithinAbs;

namespace {

ModelConfig tiny_model(std::size_t experts, std::size_t k) {
  ModelConfig mc;
  auto& e = mc.encoder;
  e.image_size = 8;
  e.patch_size = 4;
  e.embed_dim = 8;
  e.depth = 4;
  e.heads = 2;
  e.mlp_ratio = 2;
  e.adapter_layers = {0, 1, 2, 3};
  e.num_experts = experts;
  e.top_k = k;
  e.expert_bottleneck = 4;
  mc.decoder.heads = 2;
  mc.decoder.mlp_ratio = 2;
  mc.decoder.max_label_len = 2;
  mc.decoder.vocab_size = 10;
  return mc;
}

std::vector<GlyphSample> samples(std::size_t n, std::size_t categories) {
  std::vector<GlyphSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(render_glyph(i % categories, kAllDomains[i % 3], 0.3, i, 8));
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("one sample counts k selections per adapter", "[analysis]") {
  Model m = Model::create(tiny_model(8, 5), 3);
  const auto mats = record_activations(m, samples(1, 4), 4);
  REQUIRE(mats.size() == 4);
  for (const auto& a : mats) {
    std::uint64_t total = 0;
    for (auto c : a.counts) total += c;
    CHECK(total == 5);
    CHECK(a.category_totals[0] == 1);
  }
}

TEST_CASE("activation counts are conserved, repeatable and read-only", "[analysis]") {
  Model m = Model::create(tiny_model(6, 2), 4);
  // break the zero-init symmetry so routing depends on the input
  Rng rng(2);
  for (auto& ad : m.encoder.adapters)
    for (double& v : ad.router.projection.weight.data()) v = rng.normal();
  const auto before = m.parameters();
  std::vector<std::vector<double>> snapshot;
  for (auto& [n, t] : before) snapshot.emplace_back(t.values());

  const auto data = samples(60, 5);
  const auto a = record_activations(m, data, 5);
  const auto b = record_activations(m, data, 5);
  CHECK(a == b);
  for (const auto& mat : a)
    for (std::size_t c = 0; c < 5; ++c) CHECK(mat.column_sum(c) == 2 * mat.category_totals[c]);
  std::size_t i = 0;
  for (auto& [n, t] : m.parameters()) CHECK(t.values() == snapshot[i++]);

  ModelConfig none = tiny_model(0, 1);
  CHECK(record_activations(Model::create(none, 1), data, 5).empty());
}

TEST_CASE("accumulate_routing rejects mismatched inputs", "[analysis]") {
  std::vector<ActivationMatrix> mats{ActivationMatrix::zeros(0, 3, 2)};
  CHECK_THROWS_AS(accumulate_routing(mats, {}, 0), DimensionError);
  CHECK_THROWS_AS(accumulate_routing(mats, {RoutingRecord{0, {1}, {1.0}}}, 2), DimensionError);
  CHECK_THROWS_AS(accumulate_routing(mats, {RoutingRecord{0, {3}, {1.0}}}, 0), DimensionError);
  accumulate_routing(mats, {RoutingRecord{0, {2, 0}, {0.5, 0.5}}}, 1);
  CHECK(mats[0].at(2, 1) == 1);
  CHECK(mats[0].at(0, 1) == 1);
  CHECK(mats[0].category_totals[1] == 1);
}

TEST_CASE("CSV export round-trips and normalized values are bounded", "[analysis]") {
  Rng rng(8);
  const std::size_t k = 3;
  std::vector<ActivationMatrix> mats;
  for (std::size_t a = 0; a < 2; ++a) {
    auto m = ActivationMatrix::zeros(a, 7, 11);
    for (int s = 0; s < 200; ++s) {
      const std::size_t c = rng.below(11);
      std::vector<std::size_t> sel{0, 1, 2, 3, 4, 5, 6};
      rng.shuffle(sel);
      sel.resize(k);
      std::vector<RoutingRecord> rec{RoutingRecord{a, sel, std::vector<double>(k, 1.0 / k)}};
      std::vector<ActivationMatrix> one{m};
      accumulate_routing(one, rec, c);
      m = one[0];
    }
    mats.push_back(m);
  }
  const auto dir = std::filesystem::temp_directory_path() / "laddermoe_analysis_test";
  std::filesystem::remove_all(dir);
  const auto files = export_heatmap_csv(mats, dir);
  REQUIRE(files.size() == 4);
  CHECK(parse_raw_csv(slurp(dir / "adapter0_raw.csv")) == mats[0]);
  CHECK(parse_raw_csv(slurp(dir / "adapter1_raw.csv")) == mats[1]);

  std::istringstream norm(slurp(dir / "adapter1_normalized.csv"));
  std::string line;
  std::getline(norm, line);
  std::getline(norm, line);
  std::size_t rows = 0;
  while (std::getline(norm, line)) {
    std::istringstream rs(line);
    std::string cell;
    std::getline(rs, cell, ',');
    while (std::getline(rs, cell, ',')) {
      const double v = std::stod(cell);
      CHECK((v >= 0.0 && v <= static_cast<double>(k)));
    }
    ++rows;
  }
  CHECK(rows == 7);

  const auto empty = ActivationMatrix::zeros(0, 0, 0);
  CHECK(parse_raw_csv(raw_csv(empty)) == empty);
  CHECK_THROWS_AS(parse_raw_csv(""), FormatError);
  CHECK_THROWS_AS(parse_raw_csv("# something else\n"), FormatError);
  std::string truncated = raw_csv(mats[0]);
  truncated.resize(truncated.rfind('\n', truncated.size() - 2) + 1);
  CHECK_THROWS_AS(parse_raw_csv(truncated), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("utilization summary fixtures", "[analysis]") {
  auto uniform = ActivationMatrix::zeros(0, 4, 2);
  for (auto& c : uniform.counts) c = 3;
  auto single = ActivationMatrix::zeros(1, 4, 2);
  single.at(2, 0) = 9;
  single.at(2, 1) = 4;
  const auto s = expert_utilization_summary({uniform, single});
  CHECK_THAT(s.adapters[0].entropy, WithinAbs(std::log(4.0), 1e-12));
  CHECK(s.adapters[0].utilization == 1.0);
  CHECK(s.adapters[1].entropy == 0.0);
  CHECK(s.adapters[1].utilization == 0.25);

  // constructed overlap of two among the five most used experts
  auto a = ActivationMatrix::zeros(0, 10, 1), b = ActivationMatrix::zeros(1, 10, 1);
  const std::vector<std::size_t> top_a{0, 1, 2, 3, 4}, top_b{3, 4, 7, 8, 9};
  for (std::size_t i = 0; i < 5; ++i) {
    a.at(top_a[i], 0) = 100 - i;
    b.at(top_b[i], 0) = 50 - i;
  }
  a.at(9, 0) = 1;
  b.at(0, 0) = 1;
  const auto o = expert_utilization_summary({a, b});
  CHECK(o.top_overlap[0][1] == 2);
  CHECK(o.top_overlap[1][0] == 2);
  CHECK(o.top_overlap[0][0] == 5);
  CHECK(o.adapters[0].top_experts == top_a);
  const auto j = to_json(o);
  CHECK(j["top_overlap"][0][1] == 2);
}
