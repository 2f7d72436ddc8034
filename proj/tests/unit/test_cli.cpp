// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cli.hpp"

using namespace laddermoe;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "laddermoe");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("laddermoe_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

Json echo(const fs::path& out) { return cli::read_json_file(out / "resolved_config.json"); }

const char* kSmallConfig = R"({"seed": 5,
  "data": {"num_categories": 12, "total_crops": 360, "min_count": 2, "num_pages": 20},
  "pretrain_corpus": {"categories": 16, "per_category": 6},
  "train": {"pretrain_epochs": 1, "plm_epochs": 1, "osf_epochs": 1, "batch_size": 16}})";

}  // namespace

TEST_CASE("grad-check exits 0 with an all-pass report", "[cli]") {
  const fs::path out = fresh_dir("gradcheck");
  REQUIRE(run_cli({"grad-check", "--out", out.string()}) == cli::kExitOk);
  const Json rep = cli::read_json_file(out / "grad_check.json");
  CHECK(rep["format"] == "laddermoe.grad_check");
  CHECK(rep["all_passed"] == true);
  CHECK(fs::exists(out / "provenance" / "grad-check.json"));
}

TEST_CASE("flag values are range-checked before any work", "[cli]") {
  const fs::path out = fresh_dir("usage");
  CHECK(run_cli({"grad-check", "--out", out.string(), "--top-k", "0"}) == cli::kExitUsage);
  CHECK(run_cli({"grad-check", "--out", out.string(), "--top-k", "9"}) == cli::kExitUsage);  // more than 8 experts
  CHECK(run_cli({"grad-check", "--out", out.string(), "--batch-size", "0"}) == cli::kExitUsage);
  CHECK(run_cli({"grad-check", "--out", out.string(), "--lambda", "-1"}) == cli::kExitUsage);
  CHECK(run_cli({"grad-check", "--out", out.string(), "--adapter-layers", "2,1"}) == cli::kExitUsage);
  CHECK(run_cli({"no-such-command"}) == cli::kExitUsage);
  CHECK(run_cli({}) == cli::kExitUsage);
  CHECK(run_cli({"ablate", "--out", out.string(), "--axis", "top-k", "--values", "1,99"}) == cli::kExitUsage);
  CHECK(run_cli({"ablate", "--out", out.string(), "--axis", "width", "--values", "1"}) == cli::kExitUsage);

  REQUIRE(run_cli({"grad-check", "--out", out.string(), "--experts", "36", "--top-k", "5"}) == cli::kExitOk);
  CHECK(echo(out)["config"]["encoder"]["num_experts"] == 36);
  CHECK(echo(out)["config"]["encoder"]["top_k"] == 5);
}

TEST_CASE("flag beats config file beats default", "[cli]") {
  const fs::path out = fresh_dir("precedence");
  const fs::path cfg = out / "cfg.json";
  write_file(cfg, R"({"encoder": {"top_k": 3}, "train": {"osf_epochs": 4}, "column_factor": 0.7})");
  REQUIRE(run_cli({"grad-check", "--config", cfg.string(), "--out", out.string(), "--top-k", "4"}) == cli::kExitOk);
  const Json e = echo(out);
  CHECK(e["config"]["encoder"]["top_k"] == 4);
  CHECK(e["config"]["train"]["osf_epochs"] == 4);
  CHECK(e["config"]["column_factor"] == 0.7);
  CHECK(e["config"]["train"]["plm_epochs"] == desk_config().train.plm_epochs);

  // the echo is itself a valid config file and resolves to the same echo
  const fs::path again = out / "again";
  fs::create_directories(again);
  fs::copy_file(out / "resolved_config.json", again / "cfg.json");
  REQUIRE(run_cli({"grad-check", "--config", (again / "cfg.json").string(), "--out", out.string()}) == cli::kExitOk);
  CHECK(echo(out) == e);

  write_file(cfg, R"({"encoder": {"topk": 3}})");
  CHECK(run_cli({"grad-check", "--config", cfg.string(), "--out", out.string()}) == cli::kExitUsage);
  write_file(cfg, R"({"train": {"seed": 3}})");
  CHECK(run_cli({"grad-check", "--config", cfg.string(), "--out", out.string()}) == cli::kExitUsage);
  write_file(cfg, "{not json");
  CHECK(run_cli({"grad-check", "--config", cfg.string(), "--out", out.string()}) == cli::kExitUsage);
  CHECK(run_cli({"grad-check", "--config", (out / "missing.json").string(), "--out", out.string()}) == cli::kExitUsage);
}

TEST_CASE("LADDERMOE_OUT is the default output root", "[cli]") {
  const fs::path out = fresh_dir("env");
  ::setenv("LADDERMOE_OUT", out.c_str(), 1);
  const int code = run_cli({"grad-check"});
  ::unsetenv("LADDERMOE_OUT");
  REQUIRE(code == cli::kExitOk);
  CHECK(fs::exists(out / "resolved_config.json"));
  CHECK(fs::exists(out / "grad_check.json"));
}

TEST_CASE("synth, eval-char on oracle predictions and missing inputs", "[cli]") {
  const fs::path out = fresh_dir("synth");
  const fs::path cfg = out / "small.json";
  write_file(cfg, kSmallConfig);
  REQUIRE(run_cli({"synth", "--config", cfg.string(), "--out", out.string()}) == cli::kExitOk);
  const Manifest crops = read_manifest(out / "data" / "crops.jsonl");
  CHECK(crops.records.size() == 360);

  // oracle predictions: every crop's own label
  std::vector<Json> rows;
  for (const auto& r : crops.records) rows.push_back({{"id", r.id}, {"category", r.categories[0]}});
  write_json_lines(out / "oracle.jsonl", {{"format", "laddermoe.predictions"}, {"version", 1}}, rows);
  REQUIRE(run_cli({"eval-char", "--config", cfg.string(), "--out", out.string(), "--predictions",
                   (out / "oracle.jsonl").string()}) == cli::kExitOk);
  const Json rep = cli::read_json_file(out / "char_report.json");
  CHECK(rep["format"] == "laddermoe.char_report");
  CHECK(rep["overall_acc"] == 1.0);
  CHECK(rep["balanced_acc"] == 1.0);

  // the provenance record lists the predictions file with its digest
  const Json prov = cli::read_json_file(out / "provenance" / "eval-char.json");
  bool listed = false;
  for (const auto& in : prov["inputs"])
    if (in["path"] == (out / "oracle.jsonl").generic_string()) listed = in["fnv1a64"].get<std::string>().size() == 16;
  CHECK(listed);

  // reading a corpus back gives the in-memory crops exactly
  cli::Provenance scratch;
  const cli::StoredCorpus stored = cli::load_corpus(out / "data", false, scratch);
  RunConfig rc;
  from_json(Json::parse(kSmallConfig), rc);
  const Corpus mem = make_corpus(rc);
  REQUIRE(stored.corpus.crops.size() == mem.crops.size());
  CHECK(stored.corpus.crops[7].image.pixels == mem.crops[7].image.pixels);
  CHECK(stored.corpus.char_split.assignment == mem.char_split.assignment);
  CHECK(stored.corpus.groups.tail == mem.groups.tail);

  CHECK(run_cli({"eval-char", "--config", cfg.string(), "--out", out.string()}) == cli::kExitRuntime);  // no model
  CHECK(run_cli({"train", "--config", cfg.string(), "--out", out.string()}) == cli::kExitRuntime);  // no backbone
  CHECK(run_cli({"eval-char", "--config", cfg.string(), "--out", (out / "elsewhere").string()}) ==
        cli::kExitRuntime);  // no corpus
}
