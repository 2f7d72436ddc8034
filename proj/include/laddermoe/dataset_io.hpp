// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Line-oriented JSON files: dataset manifests, box files and transcription
// output. Every file starts with a header record carrying its format name and
// version.

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "laddermoe/image.hpp"
#include "laddermoe/syndata.hpp"
#include "laddermoe/transcribe.hpp"

namespace laddermoe {

inline constexpr int kManifestVersion = 1;
inline constexpr int kBoxFileVersion = 1;
inline constexpr int kTranscriptionVersion = 1;

using Json = nlohmann::json;

struct JsonLines {
  Json header;
  std::vector<Json> records;
};

inline void write_json_lines(const std::filesystem::path& path, const Json& header, const std::vector<Json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << header.dump() << '\n';
  for (const auto& r : records) os << r.dump() << '\n';
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

/// Reads a JSON-lines file and checks its header's format name and version.
inline JsonLines read_json_lines(const std::filesystem::path& path, const std::string& format, int version) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  JsonLines out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (out.header.is_null()) {
      if (!j.is_object() || j.value("format", "") != format)
        throw FormatError(path.string() + ": expected a '" + format + "' header record");
      if (j.value("version", -1) != version)
        throw FormatError(path.string() + ": unsupported " + format + " version " + j.value("version", Json()).dump());
      out.header = std::move(j);
      continue;
    }
    out.records.push_back(std::move(j));
  }
  if (out.header.is_null()) throw FormatError(path.string() + ": empty file, header missing");
  return out;
}

template <class T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestRecord {
  std::string id;
  std::string path;  // relative to the manifest's directory
  Domain domain = Domain::Rubbing;
  std::vector<std::size_t> categories;
  std::vector<BBox> boxes;
  Split split = Split::Train;
  bool operator==(const ManifestRecord&) const = default;
};

inline Json box_json(const BBox& b) { return Json::array({b.x1, b.y1, b.x2, b.y2}); }

inline BBox box_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw FormatError(where + ": a box is [x1, y1, x2, y2]");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  } catch (const nlohmann::json::exception&) {
    throw FormatError(where + ": box coordinates must be numbers");
  }
}

inline void write_manifest(const std::filesystem::path& path, const std::string& kind,
                           const std::vector<ManifestRecord>& records) {
  std::vector<Json> rows;
  for (const auto& r : records) {
    Json boxes = Json::array();
    for (auto& b : r.boxes) boxes.push_back(box_json(b));
    rows.push_back({{"id", r.id},
                    {"path", r.path},
                    {"domain", domain_name(r.domain)},
                    {"categories", r.categories},
                    {"boxes", boxes},
                    {"split", split_name(r.split)}});
  }
  write_json_lines(path, {{"format", "laddermoe.manifest"}, {"version", kManifestVersion}, {"kind", kind}}, rows);
}

struct Manifest {
  std::string kind;  // "crops" or "pages"
  std::vector<ManifestRecord> records;
};

inline Manifest read_manifest(const std::filesystem::path& path) {
  const JsonLines jl = read_json_lines(path, "laddermoe.manifest", kManifestVersion);
  Manifest m;
  m.kind = field<std::string>(jl.header, "kind", path.string());
  for (std::size_t i = 0; i < jl.records.size(); ++i) {
    const Json& j = jl.records[i];
    const std::string where = path.string() + " record " + std::to_string(i + 1);
    ManifestRecord r;
    r.id = field<std::string>(j, "id", where);
    r.path = field<std::string>(j, "path", where);
    r.domain = parse_domain(field<std::string>(j, "domain", where));
    r.categories = field<std::vector<std::size_t>>(j, "categories", where);
    for (const auto& b : field<Json>(j, "boxes", where)) r.boxes.push_back(box_from_json(b, where));
    r.split = parse_split(field<std::string>(j, "split", where));
    m.records.push_back(std::move(r));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Box files

struct BoxRecord {
  std::string page_id;
  BBox box;
  std::optional<double> score;
  std::optional<std::size_t> category;
  bool operator==(const BoxRecord&) const = default;
};

inline void write_box_file(const std::filesystem::path& path, const std::vector<BoxRecord>& boxes) {
  std::vector<Json> rows;
  for (const auto& b : boxes) {
    Json j = {{"page_id", b.page_id}, {"x1", b.box.x1}, {"y1", b.box.y1}, {"x2", b.box.x2}, {"y2", b.box.y2}};
    if (b.score) j["score"] = *b.score;
    if (b.category) j["category"] = *b.category;
    rows.push_back(std::move(j));
  }
  write_json_lines(path, {{"format", "laddermoe.boxes"}, {"version", kBoxFileVersion}}, rows);
}

inline std::vector<BoxRecord> read_box_file(const std::filesystem::path& path) {
  const JsonLines jl = read_json_lines(path, "laddermoe.boxes", kBoxFileVersion);
  std::vector<BoxRecord> out;
  for (std::size_t i = 0; i < jl.records.size(); ++i) {
    const Json& j = jl.records[i];
    const std::string where = path.string() + " record " + std::to_string(i + 1);
    BoxRecord b;
    b.page_id = field<std::string>(j, "page_id", where);
    b.box = {field<double>(j, "x1", where), field<double>(j, "y1", where), field<double>(j, "x2", where),
             field<double>(j, "y2", where)};
    if (j.contains("score")) b.score = field<double>(j, "score", where);
    if (j.contains("category")) b.category = field<std::size_t>(j, "category", where);
    out.push_back(std::move(b));
  }
  return out;
}

/// Groups box records by page id, keeping file order within each page.
inline std::map<std::string, std::vector<BoxRecord>> boxes_by_page(const std::vector<BoxRecord>& boxes) {
  std::map<std::string, std::vector<BoxRecord>> out;
  for (const auto& b : boxes) out[b.page_id].push_back(b);
  return out;
}

// ---------------------------------------------------------------------------
// Transcriptions

struct TranscriptionRecord {
  std::string page_id;
  std::vector<std::vector<std::size_t>> columns;
  std::vector<std::size_t> flat_text;
  bool operator==(const TranscriptionRecord&) const = default;
};

inline void write_transcriptions(const std::filesystem::path& path, const std::vector<TranscriptionRecord>& recs) {
  std::vector<Json> rows;
  for (const auto& r : recs) rows.push_back({{"page_id", r.page_id}, {"columns", r.columns}, {"flat_text", r.flat_text}});
  write_json_lines(path, {{"format", "laddermoe.transcription"}, {"version", kTranscriptionVersion}}, rows);
}

inline std::vector<TranscriptionRecord> read_transcriptions(const std::filesystem::path& path) {
  const JsonLines jl = read_json_lines(path, "laddermoe.transcription", kTranscriptionVersion);
  std::vector<TranscriptionRecord> out;
  for (std::size_t i = 0; i < jl.records.size(); ++i) {
    const std::string where = path.string() + " record " + std::to_string(i + 1);
    out.push_back({field<std::string>(jl.records[i], "page_id", where),
                   field<std::vector<std::vector<std::size_t>>>(jl.records[i], "columns", where),
                   field<std::vector<std::size_t>>(jl.records[i], "flat_text", where)});
  }
  return out;
}

}  // namespace laddermoe
