// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned little-endian checkpoint files.
//
//   magic "LMOECKPT" | u32 version | u64 config digest (FNV-1a of config text)
//   u32 len + config JSON | u8 phase | u64 epoch | u32 len + RNG state
//   u64 tensor count | per tensor: u32 len + name, u32 ndim, u64 dims[ndim],
//                                  f64 values[numel]
//   u64 FNV-1a checksum of every preceding byte

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "laddermoe/config_json.hpp"
#include "laddermoe/rng.hpp"
#include "laddermoe/tensor.hpp"
#include "laddermoe/train_config.hpp"

namespace laddermoe {

constexpr char kCheckpointMagic[8] = {'L', 'M', 'O', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
  bool operator==(const TensorRecord&) const = default;
};

struct Checkpoint {
  Json config = Json::object();
  Phase phase = Phase::Pretrain;
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](auto& t) { return t.name == name; });
    return it == tensors.end() ? nullptr : &*it;
  }
  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b, std::size_t limit) : b_(b), limit_(limit) {}
  void need(std::size_t n) const {
    if (n > limit_ || pos_ > limit_ - n) throw FormatError("checkpoint truncated");
  }
  template <class U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str32() {
    const auto n = uint<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, b_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a64_bytes(const std::uint8_t* p, std::size_t n) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(p), n));
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.uint(kCheckpointVersion);
  const std::string cfg = ck.config.dump();
  w.uint(fnv1a64(cfg));
  w.str32(cfg);
  w.uint(static_cast<std::uint8_t>(ck.phase));
  w.uint(ck.epoch);
  w.str32(ck.rng_state);
  w.uint(static_cast<std::uint64_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (shape_numel(t.shape) != t.values.size()) throw DimensionError("tensor '" + t.name + "' data does not match its shape");
    w.str32(t.name);
    w.uint(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.uint(static_cast<std::uint64_t>(d));
    for (double v : t.values) w.f64(v);
  }
  auto& buf = w.buffer();
  const std::uint64_t sum = detail::fnv1a64_bytes(buf.data(), buf.size());
  w.uint(sum);
  return std::move(buf);
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + 8) throw FormatError("checkpoint truncated");
  const std::size_t body = bytes.size() - 8;
  {
    detail::ByteReader tail(bytes, bytes.size());
    std::vector<std::uint8_t> skip(body);
    tail.raw(skip.data(), body);
    if (tail.uint<std::uint64_t>() != detail::fnv1a64_bytes(bytes.data(), body))
      throw FormatError("checkpoint checksum mismatch (corrupt or truncated file)");
  }
  detail::ByteReader r(bytes, body);
  char magic[sizeof kCheckpointMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw FormatError("not a checkpoint file (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto digest = r.uint<std::uint64_t>();
  const std::string cfg = r.str32();
  if (fnv1a64(cfg) != digest) throw FormatError("checkpoint config digest mismatch");
  Checkpoint ck;
  try {
    ck.config = Json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const auto phase = r.uint<std::uint8_t>();
  if (phase > static_cast<std::uint8_t>(Phase::Osf)) throw FormatError("unknown phase marker");
  ck.phase = static_cast<Phase>(phase);
  ck.epoch = r.uint<std::uint64_t>();
  ck.rng_state = r.str32();
  const auto count = r.uint<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.str32();
    const auto nd = r.uint<std::uint32_t>();
    if (nd > 8) throw FormatError("tensor '" + t.name + "' has implausible rank");
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
      const auto e = r.uint<std::uint64_t>();
      t.shape.push_back(static_cast<std::size_t>(e));
      numel *= e;
    }
    r.need(numel * 8);
    t.values.resize(numel);
    for (auto& v : t.values) v = r.f64();
    ck.tensors.push_back(std::move(t));
  }
  if (r.pos() != body) throw FormatError("trailing bytes after checkpoint tensor table");
  return ck;
}

/// Writes atomically (temp file + rename), so a failed save leaves no partial file.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace laddermoe
