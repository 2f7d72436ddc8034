// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "laddermoe/checkpoint.hpp"
#include "laddermoe/training.hpp"

using namespace laddermoe;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig mc;
  auto& e = mc.encoder;
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
  mc.decoder.heads = 2;
  mc.decoder.mlp_ratio = 2;
  mc.decoder.max_label_len = 3;
  mc.decoder.num_permutations = 4;
  mc.decoder.vocab_size = 8;
  return mc;
}

TrainConfig tiny_train(std::size_t plm, std::size_t osf) {
  TrainConfig tc;
  tc.batch_size = 4;
  tc.plm_epochs = plm;
  tc.osf_epochs = osf;
  tc.learning_rate = 3e-3;
  tc.seed = 11;
  return tc;
}

std::vector<TextSample> tiny_data(std::size_t n) {
  std::vector<TextSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const GlyphSample g = render_glyph(i % 5, kAllDomains[i % 3], 0.2, 100 + i, 8);
    std::vector<std::size_t> label{g.category};
    if (i % 4 == 3) label.push_back((i + 1) % 5);  // a few two-token labels
    out.push_back({g.image, label});
  }
  return out;
}

std::vector<std::uint8_t> bytes_of(const Checkpoint& ck) { return serialize_checkpoint(ck); }

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("laddermoe_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("checkpoint files round-trip byte for byte", "[training][checkpoint]") {
  auto s = start_session(Model::create(tiny_model(), 3), tiny_train(1, 0));
  train_epoch(s, tiny_data(8), Phase::Plm);
  const Checkpoint ck = to_checkpoint(s);
  const auto dir = scratch("roundtrip");
  save_checkpoint(ck, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  CHECK(back.phase == Phase::Plm);
  CHECK(back.epoch == 1);
  CHECK(back.rng_state == ck.rng_state);
  CHECK(back.config == ck.config);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) CHECK(back.tensors[i] == ck.tensors[i]);
  CHECK_FALSE(fs::exists(dir / "a.ckpt.tmp"));
  fs::remove_all(dir);
}

TEST_CASE("damaged checkpoints are rejected", "[training][checkpoint]") {
  const Checkpoint ck = to_checkpoint(*std::make_unique<TrainingSession>(start_session(Model::create(tiny_model(), 3), tiny_train(1, 0))));
  const auto good = bytes_of(ck);
  CHECK_NOTHROW(deserialize_checkpoint(good));

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, good.size() / 2, good.size() - 1}) {
    std::vector<std::uint8_t> b(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(deserialize_checkpoint(b), FormatError);
  }
  auto flipped = good;
  flipped[good.size() / 3] ^= 0x40;
  CHECK_THROWS_AS(deserialize_checkpoint(flipped), FormatError);

  const auto dir = scratch("damaged");
  write_bytes(dir / "t.ckpt", std::vector<std::uint8_t>(good.begin(), good.begin() + 100));
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);

  // a record whose data disagrees with its shape cannot be written
  Checkpoint bad;
  bad.tensors.push_back({"x", {2, 2}, {1.0}});
  CHECK_THROWS_AS(serialize_checkpoint(bad), DimensionError);
}

TEST_CASE("freeze_partition splits backbone from side modules", "[training]") {
  Model m = Model::create(tiny_model(), 1);
  const ParamPartition p = freeze_partition(m);
  std::size_t total = 0;
  m.visit([&](const std::string&, Tensor&) { ++total; });
  CHECK(p.frozen.size() + p.trainable.size() == total);
  for (const auto& n : p.frozen) CHECK(n.rfind("encoder.backbone.", 0) == 0);
  bool saw_gate = false, saw_router = false, saw_expert = false, saw_decoder = false, saw_block = false;
  for (const auto& n : p.trainable) {
    CHECK(n.rfind("encoder.backbone.", 0) != 0);
    saw_gate |= n.find("gate") != std::string::npos;
    saw_router |= n.find("router") != std::string::npos;
    saw_expert |= n.find("expert") != std::string::npos;
    saw_decoder |= n.rfind("decoder.", 0) == 0;
  }
  for (const auto& n : p.frozen) saw_block |= n.find(".block0.attn") != std::string::npos;
  CHECK(saw_gate);
  CHECK(saw_router);
  CHECK(saw_expert);
  CHECK(saw_decoder);
  CHECK(saw_block);
  m.visit([&](const std::string& n, Tensor& t) { CHECK(t.requires_grad() == (n.rfind("encoder.backbone.", 0) != 0)); });
}

TEST_CASE("training epochs leave frozen tensors bitwise unchanged", "[training]") {
  auto s = start_session(Model::create(tiny_model(), 5), tiny_train(1, 1));
  std::map<std::string, std::vector<double>> before;
  s.model.visit([&](const std::string& n, Tensor& t) { before[n] = t.values(); });
  const auto data = tiny_data(12);
  train_epoch(s, data, Phase::Plm);
  train_epoch(s, data, Phase::Osf);
  bool decoder_moved = false;
  s.model.visit([&](const std::string& n, Tensor& t) {
    if (is_backbone_param(n)) CHECK(t.values() == before[n]);
    else if (n.rfind("decoder.", 0) == 0 && t.values() != before[n]) decoder_moved = true;
  });
  CHECK(decoder_moved);
  CHECK_THROWS_AS(train_epoch(s, data, Phase::Pretrain), ParameterError);
  CHECK_THROWS_AS(train_epoch(s, {}, Phase::Plm), DataError);
}

TEST_CASE("one-sample loss strictly decreases", "[training]") {
  TrainConfig tc = tiny_train(5, 0);
  tc.learning_rate = 1e-3;
  auto s = start_session(Model::create(tiny_model(), 6), tc);
  const auto data = tiny_data(1);
  double prev = 1e300;
  for (int e = 0; e < 5; ++e) {
    const EpochStats st = train_epoch(s, data, Phase::Osf);
    const double now = ordered_loss(s.model, data);
    CHECK(st.samples == 1);
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("OSF epochs do not depend on the permutation count", "[training]") {
  const auto data = tiny_data(10);
  std::vector<EpochStats> runs;
  std::vector<std::vector<std::uint8_t>> params;
  for (std::size_t k : {1, 12}) {
    ModelConfig mc = tiny_model();
    mc.decoder.num_permutations = k;
    auto s = start_session(Model::create(mc, 2), tiny_train(0, 2));
    train_epoch(s, data, Phase::Osf);
    runs.push_back(train_epoch(s, data, Phase::Osf));
    std::vector<double> all;
    s.model.visit([&](const std::string&, Tensor& t) { all.insert(all.end(), t.data().begin(), t.data().end()); });
    params.emplace_back(reinterpret_cast<const std::uint8_t*>(all.data()),
                        reinterpret_cast<const std::uint8_t*>(all.data() + all.size()));
  }
  CHECK(runs[0] == runs[1]);
  CHECK(params[0] == params[1]);
}

TEST_CASE("schedule bookkeeping", "[training]") {
  const auto data = tiny_data(8);
  SECTION("an empty schedule returns the initial state") {
    auto s = start_session(Model::create(tiny_model(), 4), tiny_train(0, 0));
    const auto before = bytes_of(to_checkpoint(s));
    const auto res = run_schedule(s, data);
    CHECK(res.completed);
    CHECK(res.log.empty());
    CHECK(bytes_of(res.final_checkpoint) == before);
  }
  SECTION("full-scale epoch counts validate") {
    TrainConfig tc;
    tc.plm_epochs = 35;
    tc.osf_epochs = 5;
    CHECK_NOTHROW(tc.validate());
  }
  SECTION("phases, checkpoint files and epoch numbering") {
    const auto dir = scratch("schedule");
    auto s = start_session(Model::create(tiny_model(), 4), tiny_train(2, 1));
    ScheduleOptions opt;
    opt.checkpoint_dir = dir;
    std::vector<Phase> seen;
    opt.on_epoch = [&](const EpochStats& st, TrainingSession&) { seen.push_back(st.phase); };
    const auto res = run_schedule(s, data, opt);
    CHECK(seen == std::vector<Phase>{Phase::Plm, Phase::Plm, Phase::Osf});
    REQUIRE(res.log.size() == 3);
    CHECK(res.log[2].epoch == 3);
    CHECK(fs::exists(dir / "plm_end.ckpt"));
    CHECK(fs::exists(dir / "final.ckpt"));
    CHECK(fs::exists(dir / "latest.ckpt"));
    const Checkpoint boundary = load_checkpoint(dir / "plm_end.ckpt");
    CHECK(boundary.phase == Phase::Plm);
    CHECK(boundary.epoch == 2);
    const Checkpoint fin = load_checkpoint(dir / "final.ckpt");
    CHECK(fin.phase == Phase::Osf);
    CHECK(bytes_of(fin) == bytes_of(res.final_checkpoint));
    CHECK(s.last_checkpoint == (dir / "final.ckpt").string());
    fs::remove_all(dir);
  }
}

TEST_CASE("identical runs agree bitwise and resuming reproduces them", "[training]") {
  const auto data = tiny_data(9);
  auto full = start_session(Model::create(tiny_model(), 8), tiny_train(2, 1));
  const auto a = run_schedule(full, data);
  auto again = start_session(Model::create(tiny_model(), 8), tiny_train(2, 1));
  const auto b = run_schedule(again, data);
  CHECK(bytes_of(a.final_checkpoint) == bytes_of(b.final_checkpoint));
  CHECK(a.log == b.log);

  for (std::size_t stop : {1, 2}) {
    const auto dir = scratch("resume" + std::to_string(stop));
    auto part = start_session(Model::create(tiny_model(), 8), tiny_train(2, 1));
    ScheduleOptions opt;
    opt.checkpoint_dir = dir;
    opt.stop_after = stop;
    const auto first = run_schedule(part, data, opt);
    CHECK_FALSE(first.completed);
    auto resumed = resume_session(load_checkpoint(dir / "latest.ckpt"));
    CHECK(resumed.epochs_done == stop);
    const auto rest = run_schedule(resumed, data);
    CHECK(rest.completed);
    CHECK(bytes_of(rest.final_checkpoint) == bytes_of(a.final_checkpoint));
    CHECK(rest.log.back() == a.log.back());
    fs::remove_all(dir);
  }
}

TEST_CASE("non-finite losses abort with the last checkpoint path", "[training]") {
  const auto dir = scratch("nonfinite");
  auto s = start_session(Model::create(tiny_model(), 8), tiny_train(1, 1));
  ScheduleOptions opt;
  opt.checkpoint_dir = dir;
  opt.stop_after = 1;
  run_schedule(s, tiny_data(4), opt);
  s.model.decoder.head.bias.data()[0] = std::nan("");
  try {
    train_epoch(s, tiny_data(4), Phase::Osf);
    FAIL("expected a non-finite loss error");
  } catch (const NonFiniteLossError& e) {
    CHECK(e.last_good_checkpoint() == s.last_checkpoint);
    CHECK(fs::exists(e.last_good_checkpoint()));
  }
  fs::remove_all(dir);
}

TEST_CASE("Adam updates only parameters that received a gradient", "[training]") {
  Tensor a = Tensor::from({2}, {1.0, -2.0}), b = Tensor::from({1}, {5.0});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  NamedTensors ps{{"a", a}, {"b", b}};
  Adam opt(0.1, 0.9, 0.999, 1e-8);
  backward(sum(mul(a, a)));
  opt.step(ps);
  // first step: bias-corrected update is lr * g / (|g| + eps)
  CHECK_THAT(a.data()[0], WithinAbs(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-12));
  CHECK_THAT(a.data()[1], WithinAbs(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-12));
  CHECK(b.data()[0] == 5.0);
  CHECK(opt.steps("a") == 1);
  CHECK(opt.steps("b") == 0);

  std::vector<TensorRecord> state;
  opt.export_state(state);
  Checkpoint ck;
  ck.tensors = state;
  Adam restored(0.1, 0.9, 0.999, 1e-8);
  restored.import_state(ck);
  CHECK(restored.steps("a") == 1);
  ck.tensors.pop_back();
  CHECK_THROWS_AS(restored.import_state(ck), FormatError);
}

TEST_CASE("backbone pretraining", "[training][pretrain]") {
  EncoderConfig e = tiny_model().encoder;
  e.depth = 2;
  TrainConfig tc = tiny_train(0, 0);
  tc.pretrain_learning_rate = 3e-3;

  std::vector<TextSample> toy;
  for (std::size_t i = 0; i < 24; ++i) {
    const GlyphSample g = render_glyph(i % 2 == 0 ? 3 : 17, kAllDomains[i % 3], 0.2, 500 + i, 8);
    toy.push_back({g.image, {i % 2}});
  }

  SECTION("zero epochs return the model initialization") {
    tc.pretrain_epochs = 0;
    const auto r = pretrain_backbone(toy, 2, e, tc);
    CHECK(r.log.empty());
    ModelConfig mc = tiny_model();
    Model m = Model::create(mc, tc.seed);
    m.encoder.visit_backbone([&](const std::string& n, Tensor& t) {
      const TensorRecord* rec = r.checkpoint.find(n);
      REQUIRE(rec);
      CHECK(rec->values == t.values());
    });
  }
  SECTION("a two-category toy set is learned within 20 epochs") {
    tc.pretrain_epochs = 20;
    const auto r = pretrain_backbone(toy, 2, e, tc);
    const auto pc = load_pretrained_classifier(r.checkpoint);
    std::size_t hit = 0;
    for (const auto& s : toy) hit += pc.predict(s.image) == s.label[0];
    CHECK(static_cast<double>(hit) / static_cast<double>(toy.size()) > 0.9);
    CHECK(r.log.back().mean_loss < r.log.front().mean_loss);

    const auto again = pretrain_backbone(toy, 2, e, tc);
    CHECK(bytes_of(again.checkpoint) == bytes_of(r.checkpoint));

    Model m = Model::create(tiny_model(), 99);
    apply_pretrained_backbone(m, r.checkpoint);
    m.encoder.visit_backbone([&](const std::string& n, Tensor& t) { CHECK(r.checkpoint.find(n)->values == t.values()); });
  }
  SECTION("invalid inputs") {
    tc.pretrain_epochs = 1;
    CHECK_THROWS_AS(pretrain_backbone({}, 2, e, tc), DataError);
    CHECK_THROWS_AS(pretrain_backbone({{toy[0].image, {5}}}, 2, e, tc), DataError);
  }
}
