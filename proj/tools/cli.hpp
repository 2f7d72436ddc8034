// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// The laddermoe command-line tool. Every subcommand resolves one RunConfig
// (flag > config file > default), echoes it to the output directory, does its
// work, and writes a provenance record listing the files it read and wrote
// with their digests.
//
// Output directory layout (all relative to --out):
//   data/                 corpus written by `synth`
//   pretrained.ckpt       backbone from `pretrain`
//   checkpoints/          plm_end.ckpt, latest.ckpt, final.ckpt from `train`
//   transcriptions.jsonl  from `transcribe`
//   activations/          heatmap CSVs from `analyze-experts`
//   provenance/<cmd>.json

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "laddermoe/dataset_io.hpp"
#include "laddermoe/laddermoe.hpp"
#include "laddermoe/png_io.hpp"

namespace laddermoe::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline constexpr int kConfigEchoVersion = 1;
inline constexpr int kProvenanceVersion = 1;
inline constexpr int kCorpusInfoVersion = 1;
inline constexpr int kPredictionsVersion = 1;
inline constexpr int kLogVersion = 1;
inline constexpr int kCliReportVersion = 1;
inline constexpr int kAblationVersion = 1;

/// Invalid invocation: bad flag value, bad config file, inconsistent settings.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> experts, top_k, permutations, plm_epochs, osf_epochs, batch_size, workers;
  std::optional<std::vector<std::size_t>> adapter_layers;
  std::optional<double> lambda;
};

/// File locations. Empty entries fall back to the config file's "paths"
/// section, then to the defaults under the output directory.
struct Paths {
  std::string data, pretrained, checkpoint, boxes, transcriptions, predictions, detections;
};

struct Invocation {
  std::string command;
  std::string config_file;
  std::string out;
  Overrides overrides;
  Paths paths;
  std::string split = "test";
  std::string axis;
  std::vector<std::string> values;
  bool resume = false;
};

// ---------------------------------------------------------------------------
// Small file helpers

inline std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string file_digest(const fs::path& p) {
  const auto bytes = read_bytes(p);
  return hex64(detail::fnv1a64_bytes(bytes.data(), bytes.size()));
}

inline void write_json_file(const fs::path& p, const Json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_text_file(p, j.dump(2) + "\n");
}

inline Json read_json_file(const fs::path& p) {
  const auto bytes = read_bytes(p);
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

/// Inputs and outputs of one subcommand, each with its content digest.
class Provenance {
 public:
  void input(const fs::path& p) { inputs_.push_back({{"path", p.generic_string()}, {"fnv1a64", file_digest(p)}}); }
  void output(const fs::path& p) { outputs_.push_back({{"path", p.generic_string()}, {"fnv1a64", file_digest(p)}}); }

  void write(const fs::path& out, const std::string& command, const Json& resolved) const {
    const std::string cfg = resolved.dump();
    Json j{{"format", "laddermoe.provenance"},
           {"version", kProvenanceVersion},
           {"command", command},
           {"config_fnv1a64", hex64(detail::fnv1a64_bytes(reinterpret_cast<const std::uint8_t*>(cfg.data()), cfg.size()))},
           {"inputs", inputs_},
           {"outputs", outputs_}};
    write_json_file(out / "provenance" / (command + ".json"), j);
  }

 private:
  Json inputs_ = Json::array();
  Json outputs_ = Json::array();
};

// ---------------------------------------------------------------------------
// Configuration resolution

struct Resolved {
  RunConfig run;
  fs::path out;
  Paths paths;  // all entries filled

  Json to_json() const {
    return Json{{"format", "laddermoe.config"},
                {"version", kConfigEchoVersion},
                {"out", out.generic_string()},
                {"paths",
                 {{"data", paths.data},
                  {"pretrained", paths.pretrained},
                  {"checkpoint", paths.checkpoint},
                  {"boxes", paths.boxes},
                  {"transcriptions", paths.transcriptions},
                  {"predictions", paths.predictions},
                  {"detections", paths.detections}}},
                {"config", laddermoe::to_json(run)}};
  }
};

inline void read_paths(const Json& j, Paths& p) {
  StrictReader r(j, "paths");
  r.get("data", p.data).get("pretrained", p.pretrained).get("checkpoint", p.checkpoint).get("boxes", p.boxes);
  r.get("transcriptions", p.transcriptions).get("predictions", p.predictions).get("detections", p.detections);
  r.finish();
}

inline void apply(const Overrides& o, RunConfig& r) {
  if (o.seed) r.seed = *o.seed;
  if (o.experts) r.model.encoder.num_experts = *o.experts;
  if (o.top_k) r.model.encoder.top_k = *o.top_k;
  if (o.adapter_layers) r.model.encoder.adapter_layers = *o.adapter_layers;
  if (o.permutations) r.model.decoder.num_permutations = *o.permutations;
  if (o.plm_epochs) r.train.plm_epochs = *o.plm_epochs;
  if (o.osf_epochs) r.train.osf_epochs = *o.osf_epochs;
  if (o.batch_size) r.train.batch_size = *o.batch_size;
  if (o.workers) r.workers = *o.workers;
  if (o.lambda) r.column_factor = *o.lambda;
}

/// Defaults, then the config file, then flags. A config file is either a
/// plain RunConfig object (optionally with "out" and "paths") or an earlier
/// resolved_config.json echo.
inline Resolved resolve(const Invocation& inv) {
  Resolved res;
  res.run = desk_config(0);
  Paths file_paths;
  std::string file_out;
  try {
    if (!inv.config_file.empty()) {
      Json j = read_json_file(inv.config_file);
      if (!j.is_object()) throw UsageError("config file '" + inv.config_file + "' must hold a JSON object");
      if (j.contains("format")) {
        if (j["format"] != "laddermoe.config" || j.value("version", -1) != kConfigEchoVersion)
          throw UsageError("config file '" + inv.config_file + "' has an unsupported format header");
        if (j.contains("paths")) read_paths(j["paths"], file_paths);
        if (j.contains("out")) file_out = j["out"].get<std::string>();
        j = j.value("config", Json::object());
      } else {
        if (j.contains("paths")) {
          read_paths(j["paths"], file_paths);
          j.erase("paths");
        }
        if (j.contains("out")) {
          if (!j["out"].is_string()) throw UsageError("config field 'out' must be a string");
          file_out = j["out"].get<std::string>();
          j.erase("out");
        }
      }
      from_json(j, res.run);
    }
    apply(inv.overrides, res.run);
    res.run.resolve();
    res.run.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }

  if (!inv.out.empty()) res.out = inv.out;
  else if (!file_out.empty()) res.out = file_out;
  else if (const char* env = std::getenv("LADDERMOE_OUT"); env && *env) res.out = env;
  else res.out = "laddermoe_out";

  auto pick = [](const std::string& flag, const std::string& file, const fs::path& fallback) {
    return !flag.empty() ? flag : !file.empty() ? file : fallback.generic_string();
  };
  Paths& p = res.paths;
  p.data = pick(inv.paths.data, file_paths.data, res.out / "data");
  p.pretrained = pick(inv.paths.pretrained, file_paths.pretrained, res.out / "pretrained.ckpt");
  p.checkpoint = pick(inv.paths.checkpoint, file_paths.checkpoint, res.out / "checkpoints" / "final.ckpt");
  p.boxes = pick(inv.paths.boxes, file_paths.boxes, fs::path(p.data) / "boxes.jsonl");
  p.transcriptions = pick(inv.paths.transcriptions, file_paths.transcriptions, res.out / "transcriptions.jsonl");
  p.predictions = pick(inv.paths.predictions, file_paths.predictions, fs::path());
  p.detections = pick(inv.paths.detections, file_paths.detections, fs::path());
  return res;
}

// ---------------------------------------------------------------------------
// Corpus on disk

struct StoredCorpus {
  Corpus corpus;
  std::vector<std::string> crop_ids, page_ids;
};

inline Json groups_json(const FrequencyGroups& g) { return {{"head", g.head}, {"mid", g.mid}, {"tail", g.tail}}; }

/// Writes crops and pages as 8-bit PNGs with their manifests, the ground-truth
/// box file, and corpus.json (category counts, retained set, frequency groups).
inline void store_corpus(const Corpus& c, const fs::path& dir, std::size_t workers, Provenance& prov) {
  fs::create_directories(dir / "crops");
  fs::create_directories(dir / "pages");
  std::vector<ManifestRecord> crops(c.crops.size()), pages(c.pages.size());
  parallel_for(c.crops.size(), workers, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "crop%05zu", i);
    crops[i] = {id, std::string("crops/") + id + ".png", c.crops[i].domain, {c.crops[i].category}, {},
                c.char_split.assignment[i]};
    write_png(dir / crops[i].path, c.crops[i].image);
  });
  std::vector<BoxRecord> boxes;
  for (std::size_t i = 0; i < c.pages.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "page%04zu", i);
    ManifestRecord& r = pages[i];
    r = {id, std::string("pages/") + id + ".png", c.pages[i].domain, {}, {}, c.page_split.assignment[i]};
    for (const auto& ch : c.pages[i].chars) {
      r.categories.push_back(ch.category);
      r.boxes.push_back(ch.box);
      boxes.push_back({id, ch.box, std::nullopt, ch.category});
    }
  }
  parallel_for(c.pages.size(), workers, [&](std::size_t i) { write_png(dir / pages[i].path, c.pages[i].image); });
  write_manifest(dir / "crops.jsonl", "crops", crops);
  write_manifest(dir / "pages.jsonl", "pages", pages);
  write_box_file(dir / "boxes.jsonl", boxes);
  write_json_file(dir / "corpus.json", Json{{"format", "laddermoe.corpus"},
                                            {"version", kCorpusInfoVersion},
                                            {"counts", c.counts},
                                            {"retained", c.retained},
                                            {"groups", groups_json(c.groups)}});
  for (const char* f : {"crops.jsonl", "pages.jsonl", "boxes.jsonl", "corpus.json"}) prov.output(dir / f);
  for (const auto& r : crops) prov.output(dir / r.path);
  for (const auto& r : pages) prov.output(dir / r.path);
}

/// Reads a corpus written by `store_corpus`. Page images are only read when
/// `with_pages` is set.
inline StoredCorpus load_corpus(const fs::path& dir, bool with_pages, Provenance& prov) {
  if (!fs::exists(dir / "corpus.json"))
    throw IoError("no corpus at '" + dir.string() + "' (run `laddermoe synth` first or pass --data)");
  StoredCorpus s;
  Corpus& c = s.corpus;
  const Json info = read_json_file(dir / "corpus.json");
  if (info.value("format", "") != "laddermoe.corpus" || info.value("version", -1) != kCorpusInfoVersion)
    throw FormatError("'" + (dir / "corpus.json").string() + "' has an unsupported format header");
  prov.input(dir / "corpus.json");
  try {
    c.counts = info.at("counts").get<std::vector<std::size_t>>();
    c.retained = info.at("retained").get<std::vector<std::size_t>>();
    const Json& g = info.at("groups");
    c.groups = {g.at("head").get<std::vector<std::size_t>>(), g.at("mid").get<std::vector<std::size_t>>(),
                g.at("tail").get<std::vector<std::size_t>>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corpus.json: " + std::string(e.what()));
  }

  const Manifest crops = read_manifest(dir / "crops.jsonl");
  prov.input(dir / "crops.jsonl");
  c.char_split.kind = SplitKind::Char;
  for (const auto& r : crops.records) {
    if (r.categories.size() != 1) throw FormatError("crop '" + r.id + "' must carry exactly one category");
    c.crops.push_back({read_png(dir / r.path), r.categories[0], r.domain});
    c.char_split.assignment.push_back(r.split);
    s.crop_ids.push_back(r.id);
    prov.input(dir / r.path);
  }
  const Manifest pages = read_manifest(dir / "pages.jsonl");
  prov.input(dir / "pages.jsonl");
  c.page_split.kind = SplitKind::Page;
  for (const auto& r : pages.records) {
    if (r.categories.size() != r.boxes.size()) throw FormatError("page '" + r.id + "' has mismatched boxes and categories");
    PageSample p;
    p.domain = r.domain;
    for (std::size_t i = 0; i < r.boxes.size(); ++i) p.chars.push_back({r.boxes[i], r.categories[i]});
    if (with_pages) {
      p.image = read_png(dir / r.path);
      prov.input(dir / r.path);
    }
    c.pages.push_back(std::move(p));
    c.page_split.assignment.push_back(r.split);
    s.page_ids.push_back(r.id);
  }
  return s;
}

inline void check_vocabulary(const StoredCorpus& s, const RunConfig& r) {
  if (s.corpus.counts.size() != r.data.num_categories)
    throw UsageError("corpus holds " + std::to_string(s.corpus.counts.size()) +
                     " categories but data.num_categories is " + std::to_string(r.data.num_categories));
}

inline Model load_model(const fs::path& path, Provenance& prov) {
  if (!fs::exists(path)) throw IoError("no checkpoint at '" + path.string() + "' (run `laddermoe train` or pass --checkpoint)");
  Checkpoint ck = load_checkpoint(path);
  prov.input(path);
  return resume_session(ck).model;
}

/// A report body tagged with the split it covers; bodies without their own
/// format header get one.
inline Json report_file(const std::string& kind, const std::string& split, Json body) {
  if (!body.contains("format")) {
    body["format"] = "laddermoe." + kind;
    body["version"] = kCliReportVersion;
  }
  body["split"] = split;
  return body;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_synth(const Resolved& r, Provenance& prov) {
  const Corpus c = make_corpus(r.run);
  store_corpus(c, r.paths.data, r.run.workers, prov);
  std::cout << "wrote " << c.crops.size() << " crops over " << c.retained.size() << " categories and " << c.pages.size()
            << " pages to " << r.paths.data << "\n";
  return kExitOk;
}

inline Json epoch_json(const EpochStats& s) {
  return {{"epoch", s.epoch}, {"phase", phase_name(s.phase)}, {"mean_loss", s.mean_loss}, {"samples", s.samples}};
}

inline int cmd_pretrain(const Resolved& r, Provenance& prov) {
  std::vector<TextSample> train;
  if (r.run.pretrain_corpus.categories == 0) {
    const StoredCorpus s = load_corpus(r.paths.data, false, prov);
    check_vocabulary(s, r.run);
    train = split_samples(s.corpus, Split::Train, r.run);
  }
  const PretrainResult pr = pretrain(r.run, train);
  save_checkpoint(pr.checkpoint, r.paths.pretrained);
  prov.output(r.paths.pretrained);
  std::vector<Json> log;
  for (const auto& s : pr.log) log.push_back(epoch_json(s));
  const fs::path log_path = r.out / "pretrain_log.jsonl";
  write_json_lines(log_path, {{"format", "laddermoe.pretrain_log"}, {"version", kLogVersion}}, log);
  prov.output(log_path);
  std::cout << "pretrained " << pr.log.size() << " epochs";
  if (!pr.log.empty()) std::cout << ", final loss " << pr.log.back().mean_loss;
  std::cout << "; wrote " << r.paths.pretrained << "\n";
  return kExitOk;
}

inline int cmd_train(const Resolved& r, const Invocation& inv, Provenance& prov) {
  const StoredCorpus s = load_corpus(r.paths.data, false, prov);
  check_vocabulary(s, r.run);
  const auto train = split_samples(s.corpus, Split::Train, r.run);
  const auto val = split_samples(s.corpus, Split::Val, r.run);
  const fs::path ck_dir = r.out / "checkpoints";
  const fs::path latest = ck_dir / "latest.ckpt";

  std::optional<TrainingSession> session;
  if (inv.resume && fs::exists(latest)) {
    Checkpoint ck = load_checkpoint(latest);
    prov.input(latest);
    if (ck.config != run_config_json(r.run.model, r.run.train))
      throw UsageError("'" + latest.string() + "' was written under a different configuration; cannot resume");
    session.emplace(resume_session(ck));
    std::cout << "resuming after epoch " << session->epochs_done << "\n";
  } else {
    if (!fs::exists(r.paths.pretrained))
      throw IoError("no pretrained backbone at '" + r.paths.pretrained + "' (run `laddermoe pretrain` first)");
    const Checkpoint pre = load_checkpoint(r.paths.pretrained);
    prov.input(r.paths.pretrained);
    session.emplace(start_run(r.run, pre));
  }

  std::vector<Json> log;
  ScheduleOptions opt;
  opt.checkpoint_dir = ck_dir;
  opt.on_epoch = [&](const EpochStats& st, TrainingSession& ts) {
    Json j = epoch_json(st);
    if (!val.empty()) j["val_ordered_loss"] = ordered_loss(ts.model, val);
    std::cout << phase_name(st.phase) << " epoch " << st.epoch << ": loss " << st.mean_loss;
    if (j.contains("val_ordered_loss")) std::cout << ", validation " << j["val_ordered_loss"].get<double>();
    std::cout << std::endl;
    log.push_back(std::move(j));
  };
  const ScheduleResult res = run_schedule(*session, train, opt);
  const fs::path log_path = r.out / "train_log.jsonl";
  write_json_lines(log_path, {{"format", "laddermoe.train_log"}, {"version", kLogVersion}}, log);
  prov.output(log_path);
  for (const auto& w : res.written) prov.output(w);
  std::cout << "wrote " << (ck_dir / "final.ckpt").generic_string() << "\n";
  return kExitOk;
}

inline std::vector<std::size_t> read_predictions(const fs::path& path, const std::vector<std::string>& ids) {
  const JsonLines jl = read_json_lines(path, "laddermoe.predictions", kPredictionsVersion);
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < jl.records.size(); ++i) {
    const std::string where = path.string() + " record " + std::to_string(i + 1);
    by_id[field<std::string>(jl.records[i], "id", where)] = field<std::size_t>(jl.records[i], "category", where);
  }
  std::vector<std::size_t> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError(path.string() + ": no prediction for crop '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

inline void write_predictions(const fs::path& path, const std::vector<std::string>& ids,
                              const std::vector<std::size_t>& preds) {
  std::vector<Json> rows;
  for (std::size_t i = 0; i < ids.size(); ++i)
    rows.push_back(preds[i] == kNoPrediction ? Json{{"id", ids[i]}, {"category", nullptr}}
                                             : Json{{"id", ids[i]}, {"category", preds[i]}});
  write_json_lines(path, {{"format", "laddermoe.predictions"}, {"version", kPredictionsVersion}}, rows);
}

inline int cmd_eval_char(const Resolved& r, const Invocation& inv, Provenance& prov) {
  const Split split = parse_split(inv.split);
  const StoredCorpus s = load_corpus(r.paths.data, false, prov);
  const auto idx = s.corpus.char_split.indices(split);
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  std::vector<Domain> domains;
  std::vector<GlyphSample> crops;
  for (auto i : idx) {
    ids.push_back(s.crop_ids[i]);
    labels.push_back(s.corpus.crops[i].category);
    domains.push_back(s.corpus.crops[i].domain);
    crops.push_back(s.corpus.crops[i]);
  }
  std::vector<std::size_t> preds;
  if (!r.paths.predictions.empty()) {
    preds = read_predictions(r.paths.predictions, ids);
    prov.input(r.paths.predictions);
  } else {
    const Model m = load_model(r.paths.checkpoint, prov);
    preds = predict_categories(m, crops, r.run.workers);
    const fs::path pred_path = r.out / "char_predictions.jsonl";
    write_predictions(pred_path, ids, preds);
    prov.output(pred_path);
  }
  const CharReport rep = char_report(preds, labels, domains, s.corpus.retained, s.corpus.groups);
  const fs::path path = r.out / "char_report.json";
  write_json_file(path, report_file("char_report", inv.split, to_json(rep)));
  prov.output(path);
  std::cout << format_table(rep);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  return kExitOk;
}

inline int cmd_transcribe(const Resolved& r, const Invocation& inv, Provenance& prov) {
  const Split split = parse_split(inv.split);
  const StoredCorpus s = load_corpus(r.paths.data, true, prov);
  const Model m = load_model(r.paths.checkpoint, prov);
  const auto by_page = boxes_by_page(read_box_file(r.paths.boxes));
  prov.input(r.paths.boxes);

  std::vector<std::size_t> with_boxes;
  std::vector<const Image*> images;
  std::vector<std::vector<BBox>> boxes;
  std::vector<TranscriptionRecord> recs;
  for (auto i : s.corpus.page_split.indices(split)) {
    recs.push_back({s.page_ids[i], {}, {}});
    auto it = by_page.find(s.page_ids[i]);
    if (it == by_page.end() || it->second.empty()) {
      std::cerr << "warning: no boxes for page " << s.page_ids[i] << "; empty transcription\n";
      continue;
    }
    with_boxes.push_back(recs.size() - 1);
    images.push_back(&s.corpus.pages[i].image);
    boxes.emplace_back();
    for (const auto& b : it->second) boxes.back().push_back(b.box);
  }
  const auto tr = transcribe_pages(m, images, boxes, r.run.column_factor, r.run.workers);
  for (std::size_t j = 0; j < tr.size(); ++j) {
    recs[with_boxes[j]].columns = tr[j].columns;
    recs[with_boxes[j]].flat_text = tr[j].text;
    for (const auto& w : tr[j].warnings) std::cerr << "warning: " << recs[with_boxes[j]].page_id << ": " << w << "\n";
  }
  write_transcriptions(r.paths.transcriptions, recs);
  prov.output(r.paths.transcriptions);
  std::cout << "transcribed " << recs.size() << " pages to " << r.paths.transcriptions << "\n";
  return kExitOk;
}

inline int cmd_eval_page(const Resolved& r, const Invocation& inv, Provenance& prov) {
  const Split split = parse_split(inv.split);
  const StoredCorpus s = load_corpus(r.paths.data, false, prov);
  std::map<std::string, std::vector<std::size_t>> hyp_by_page;
  for (const auto& t : read_transcriptions(r.paths.transcriptions)) hyp_by_page[t.page_id] = t.flat_text;
  prov.input(r.paths.transcriptions);

  std::optional<std::map<std::string, std::vector<BoxRecord>>> detections;
  if (!r.paths.detections.empty()) {
    detections = boxes_by_page(read_box_file(r.paths.detections));
    prov.input(r.paths.detections);
  }
  std::vector<std::vector<std::size_t>> refs, hyps;
  std::vector<std::vector<ScoredBox>> dets;
  std::vector<std::vector<BBox>> gts;
  for (auto i : s.corpus.page_split.indices(split)) {
    refs.emplace_back();
    gts.emplace_back();
    for (const auto& ch : s.corpus.pages[i].chars) {
      refs.back().push_back(ch.category);
      gts.back().push_back(ch.box);
    }
    auto it = hyp_by_page.find(s.page_ids[i]);
    if (it == hyp_by_page.end()) std::cerr << "warning: no transcription for page " << s.page_ids[i] << "\n";
    hyps.push_back(it == hyp_by_page.end() ? std::vector<std::size_t>{} : it->second);
    dets.emplace_back();
    if (detections)
      if (auto d = detections->find(s.page_ids[i]); d != detections->end())
        for (const auto& b : d->second) dets.back().push_back({b.box, b.score.value_or(1.0)});
  }
  const PageReport rep = detections ? page_report(refs, hyps, &dets, &gts) : page_report(refs, hyps);
  const fs::path path = r.out / "page_report.json";
  write_json_file(path, report_file("page_report", inv.split, to_json(rep, true)));
  prov.output(path);
  std::cout << format_table(rep);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  return kExitOk;
}

inline int cmd_analyze(const Resolved& r, const Invocation& inv, Provenance& prov) {
  const Split split = parse_split(inv.split);
  const StoredCorpus s = load_corpus(r.paths.data, false, prov);
  const Model m = load_model(r.paths.checkpoint, prov);
  if (!m.cfg.encoder.adapters_enabled()) throw DataError("the checkpoint's encoder has no expert adapters to analyze");
  const auto mats = record_activations(m, s.corpus.crops_in(split), s.corpus.counts.size());
  const fs::path dir = r.out / "activations";
  for (const auto& f : export_heatmap_csv(mats, dir)) prov.output(f);
  const UtilizationSummary sum = expert_utilization_summary(mats);
  const fs::path path = dir / "utilization.json";
  write_json_file(path, report_file("utilization", inv.split, to_json(sum)));
  prov.output(path);
  for (const auto& a : sum.adapters)
    std::cout << "adapter " << a.adapter << ": entropy " << a.entropy << ", utilization " << a.utilization << "\n";
  return kExitOk;
}

inline int cmd_grad_check(const Resolved& r, Provenance& prov) {
  GradCheckOptions opt;
  opt.seed = r.run.seed;
  const FiniteDifferenceReport rep = model_gradient_check(opt);
  Json entries = Json::array();
  for (const auto& e : rep.entries)
    entries.push_back({{"name", e.name},
                       {"max_rel_error", e.max_rel_error},
                       {"tensor_rel_error", e.tensor_rel_error},
                       {"passed", e.passed}});
  const fs::path path = r.out / "grad_check.json";
  write_json_file(path, Json{{"format", "laddermoe.grad_check"},
                             {"version", kCliReportVersion},
                             {"seed", opt.seed},
                             {"eps", opt.eps},
                             {"tolerance", opt.tolerance},
                             {"all_passed", rep.all_passed()},
                             {"entries", entries}});
  prov.output(path);
  std::size_t failed = 0;
  for (const auto& e : rep.entries)
    if (!e.passed) {
      ++failed;
      std::cout << "FAIL " << e.name << ": relative error " << e.max_rel_error << "\n";
    }
  std::cout << rep.entries.size() - failed << "/" << rep.entries.size() << " parameter tensors within "
            << opt.tolerance << ", worst relative error " << rep.worst() << "\n";
  return failed == 0 ? kExitOk : kExitRuntime;
}

/// Sets one ablation axis; returns false for an unknown axis.
inline bool set_axis(RunConfig& r, const std::string& axis, std::size_t v) {
  if (axis == "experts") r.model.encoder.num_experts = v;
  else if (axis == "top-k") r.model.encoder.top_k = v;
  else if (axis == "osf-epochs") r.train.osf_epochs = v;
  else if (axis == "permutations") r.model.decoder.num_permutations = v;
  else return false;
  return true;
}

inline int cmd_ablate(const Resolved& r, const Invocation& inv, Provenance& prov) {
  // validate every point before any work
  std::vector<std::pair<std::string, RunConfig>> points;
  for (const auto& text : inv.values) {
    std::size_t v = 0;
    try {
      std::size_t used = 0;
      if (text.empty() || text[0] == '-') throw std::invalid_argument(text);
      v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
    } catch (const std::logic_error&) {
      throw UsageError("--values: '" + text + "' is not a non-negative integer");
    }
    RunConfig c = r.run;
    if (!set_axis(c, inv.axis, v)) throw UsageError("--axis must be one of experts, top-k, osf-epochs, permutations");
    try {
      c.resolve().validate();
    } catch (const ParameterError& e) {
      throw UsageError("--axis " + inv.axis + " value " + text + ": " + e.what());
    }
    points.emplace_back(text, c);
  }
  if (points.empty()) throw UsageError("--values needs at least one value");

  const StoredCorpus s = load_corpus(r.paths.data, true, prov);
  check_vocabulary(s, r.run);
  const auto train = split_samples(s.corpus, Split::Train, r.run);
  const auto val = split_samples(s.corpus, Split::Val, r.run);
  Checkpoint pre;
  if (fs::exists(r.paths.pretrained)) {
    pre = load_checkpoint(r.paths.pretrained);
    prov.input(r.paths.pretrained);
  } else {
    std::cout << "no pretrained backbone at " << r.paths.pretrained << "; pretraining in memory\n";
    pre = pretrain(r.run, train).checkpoint;
  }

  std::ostringstream csv;
  csv << "# laddermoe ablation version=" << kAblationVersion << " axis=" << inv.axis << " seed=" << r.run.seed << "\n";
  csv << "value,overall,balanced,head,mid,tail,macro_cr,micro_cr,macro_ar,micro_ar,val_ordered_loss\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    std::ostringstream os;
    os << std::setprecision(17) << *v;
    return os.str();
  };
  for (const auto& [text, c] : points) {
    TrainingSession ts = start_run(c, pre);
    run_schedule(ts, train);
    const CharReport cr = evaluate_chars(ts.model, s.corpus, Split::Test, c.workers);
    const PageReport pr = evaluate_pages(ts.model, s.corpus, Split::Test, c.column_factor, c.workers).report;
    const std::optional<double> vl = val.empty() ? std::nullopt : std::optional<double>(ordered_loss(ts.model, val));
    csv << text << ',' << cell(cr.overall) << ',' << cell(cr.balanced) << ',' << cell(cr.subset("head")) << ','
        << cell(cr.subset("mid")) << ',' << cell(cr.subset("tail")) << ',' << cell(pr.rates.macro_cr) << ','
        << cell(pr.rates.micro_cr) << ',' << cell(pr.rates.macro_ar) << ',' << cell(pr.rates.micro_ar) << ',' << cell(vl)
        << "\n";
    std::cout << inv.axis << " = " << text << ": overall " << cr.overall << ", balanced " << cr.balanced
              << ", Micro-CR " << pr.rates.micro_cr << std::endl;
  }
  const fs::path path = r.out / ("ablation_" + inv.axis + ".csv");
  write_text_file(path, csv.str());
  prov.output(path);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Parsing and dispatch

inline void add_common(CLI::App* sub, Invocation& inv) {
  const CLI::Validator positive(
      [](std::string& v) {
        return !v.empty() && v.find_first_not_of("0123456789") == std::string::npos &&
                       v.find_first_not_of('0') != std::string::npos
                   ? std::string()
                   : "value " + v + " must be an integer >= 1";
      },
      "INT >= 1");
  sub->add_option("--config", inv.config_file, "JSON config file (flags override it)");
  sub->add_option("--seed", inv.overrides.seed, "run seed; every random stream derives from it");
  sub->add_option("--out", inv.out, "output directory (default: $LADDERMOE_OUT, else ./laddermoe_out)");
  sub->add_option("--experts", inv.overrides.experts, "experts per adapter (0 disables adapters)");
  sub->add_option("--top-k", inv.overrides.top_k, "experts routed per image, in [1, experts]")->check(positive);
  sub->add_option("--adapter-layers", inv.overrides.adapter_layers, "comma-separated block indices carrying adapters")
      ->delimiter(',');
  sub->add_option("--permutations", inv.overrides.permutations, "permutation masks per PLM sample")->check(positive);
  sub->add_option("--plm-epochs", inv.overrides.plm_epochs, "permuted-language-modeling epochs");
  sub->add_option("--osf-epochs", inv.overrides.osf_epochs, "ordered-sequence fine-tuning epochs");
  sub->add_option("--batch-size", inv.overrides.batch_size, "training batch size")->check(positive);
  sub->add_option("--lambda", inv.overrides.lambda, "column-grouping threshold factor (default 0.5)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--workers", inv.overrides.workers, "threads for evaluation and corpus writing")->check(positive);
  sub->add_option("--data", inv.paths.data, "corpus directory (default: <out>/data)");
}

inline void add_split(CLI::App* sub, Invocation& inv) {
  sub->add_option("--split", inv.split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
}

inline void add_checkpoint(CLI::App* sub, Invocation& inv) {
  sub->add_option("--checkpoint", inv.paths.checkpoint, "trained checkpoint (default: <out>/checkpoints/final.ckpt)");
}

/// Runs the tool. Returns 0 on success, 1 on a runtime error, 2 on a usage
/// error.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"laddermoe: mixture-of-experts adapters for long-tailed inscription recognition"};
  app.name("laddermoe");
  app.require_subcommand(1);
  Invocation inv;

  struct Command {
    const char* name;
    const char* help;
  };
  const std::vector<Command> commands{
      {"synth", "build the synthetic corpus and its manifests"},
      {"pretrain", "pretrain the backbone"},
      {"train", "train adapters and decoder (PLM then OSF)"},
      {"eval-char", "single-character accuracy report"},
      {"transcribe", "transcribe pages from a box file"},
      {"eval-page", "page-level CR/AR report from transcriptions"},
      {"analyze-experts", "expert activation heatmaps and utilization"},
      {"grad-check", "finite-difference check of the full model on tiny dimensions"},
      {"ablate", "sweep one axis and tabulate the results as CSV"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& s : commands) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, inv);
    subs[s.name] = sub;
  }
  subs["pretrain"]->add_option("--pretrained", inv.paths.pretrained, "output backbone (default: <out>/pretrained.ckpt)");
  subs["train"]->add_option("--pretrained", inv.paths.pretrained, "pretrained backbone (default: <out>/pretrained.ckpt)");
  subs["train"]->add_flag("--resume", inv.resume, "continue from <out>/checkpoints/latest.ckpt when present");
  for (const char* n : {"eval-char", "transcribe", "eval-page", "analyze-experts"}) add_split(subs[n], inv);
  for (const char* n : {"eval-char", "transcribe", "analyze-experts"}) add_checkpoint(subs[n], inv);
  subs["eval-char"]->add_option("--predictions", inv.paths.predictions,
                                "score a predictions file instead of running a checkpoint");
  subs["transcribe"]->add_option("--boxes", inv.paths.boxes, "box file (default: <data>/boxes.jsonl)");
  subs["transcribe"]->add_option("--transcriptions", inv.paths.transcriptions, "output file");
  subs["eval-page"]->add_option("--transcriptions", inv.paths.transcriptions, "transcription file to score");
  subs["eval-page"]->add_option("--detections", inv.paths.detections, "scored box file for AP50");
  subs["ablate"]->add_option("--axis", inv.axis, "experts, top-k, osf-epochs or permutations")
      ->required()
      ->check(CLI::IsMember({"experts", "top-k", "osf-epochs", "permutations"}));
  subs["ablate"]->add_option("--values", inv.values, "comma-separated axis values")->required()->delimiter(',');
  subs["ablate"]->add_option("--pretrained", inv.paths.pretrained, "pretrained backbone (default: <out>/pretrained.ckpt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) inv.command = name;

  try {
    const Resolved r = resolve(inv);
    fs::create_directories(r.out);
    const Json echo = r.to_json();
    write_json_file(r.out / "resolved_config.json", echo);
    Provenance prov;
    if (!inv.config_file.empty()) prov.input(inv.config_file);
    int code = kExitOk;
    const std::string& c = inv.command;
    if (c == "synth") code = cmd_synth(r, prov);
    else if (c == "pretrain") code = cmd_pretrain(r, prov);
    else if (c == "train") code = cmd_train(r, inv, prov);
    else if (c == "eval-char") code = cmd_eval_char(r, inv, prov);
    else if (c == "transcribe") code = cmd_transcribe(r, inv, prov);
    else if (c == "eval-page") code = cmd_eval_page(r, inv, prov);
    else if (c == "analyze-experts") code = cmd_analyze(r, inv, prov);
    else if (c == "grad-check") code = cmd_grad_check(r, prov);
    else if (c == "ablate") code = cmd_ablate(r, inv, prov);
    prov.write(r.out, c, echo);
    return code;
  } catch (const UsageError& e) {
    std::cerr << "laddermoe " << inv.command << ": usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "laddermoe " << inv.command << ": error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace laddermoe::cli
