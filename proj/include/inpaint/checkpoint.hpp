// Copyright (c) 2026 The inpaint Authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary container shared by every model kind.
//
//   magic "INPNTCKP" | u32 version | str kind | str header-json
//   u64 array count | { str name | i32 n,c,h,w | f64 data... }*
//   u64 FNV-1a hash of all preceding bytes
//
// str = u64 length + bytes. Integers and doubles are stored little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "inpaint/core/tensor.hpp"
#include "json.hpp"

namespace inpaint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'I', 'N', 'P', 'N', 'T', 'C', 'K', 'P'};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> arrays;  // order preserved

  void add(std::string name, const Tensor& t) { arrays.emplace_back(std::move(name), t); }

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : arrays)
      if (n == name) return t;
    throw CheckpointError("checkpoint has no array '" + name + "'");
  }

  bool operator==(const Checkpoint&) const = default;
};

inline std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

namespace checkpoint_detail {

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

inline void put_str(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end, std::string path) : buf_(buf), end_(end), path_(std::move(path)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_str() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_doubles(double* dst, std::size_t n) {
    if (n > (end_ - pos_) / sizeof(double)) fail();
    std::memcpy(dst, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) {
    if (n > end_ - pos_) fail();
  }
  [[noreturn]] void fail() const { throw CheckpointError("checkpoint '" + path_ + "' is truncated or corrupt"); }

  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

}  // namespace checkpoint_detail

/// Atomic write: the file appears under `path` only once fully written.
inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  using namespace checkpoint_detail;
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  put_str(buf, ck.kind);
  put_str(buf, ck.header.dump());
  put<std::uint64_t>(buf, ck.arrays.size());
  for (const auto& [name, t] : ck.arrays) {
    put_str(buf, name);
    for (int d : {t.n(), t.c(), t.h(), t.w()}) put<std::int32_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  put<std::uint64_t>(buf, fnv1a(buf.data(), buf.size()));

  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open '" + tmp + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    f.flush();
    if (!f) throw CheckpointError("failed writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path, const std::string& expected_kind = "") {
  using namespace checkpoint_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kCheckpointMagic) + 4 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError("'" + path + "' is not a checkpoint file");
  std::uint32_t version;
  std::memcpy(&version, buf.data() + 8, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version mismatch in '" + path + "': file has version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion));
  if (buf.size() < 8 + 4 + 8) throw CheckpointError("checkpoint '" + path + "' is truncated or corrupt");
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, 8);
  if (stored != fnv1a(buf.data(), body)) throw CheckpointError("checkpoint '" + path + "' is truncated or corrupt");

  Reader r(buf, body, path);
  r.get<std::uint64_t>();  // magic
  r.get<std::uint32_t>();  // version
  Checkpoint ck;
  ck.kind = r.get_str();
  if (!expected_kind.empty() && ck.kind != expected_kind)
    throw CheckpointError("checkpoint '" + path + "' holds a '" + ck.kind + "' model, expected '" + expected_kind + "'");
  try {
    ck.header = nlohmann::json::parse(r.get_str());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "' has a malformed header: " + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_str();
    Shape s;
    s.n = r.get<std::int32_t>(), s.c = r.get<std::int32_t>(), s.h = r.get<std::int32_t>(), s.w = r.get<std::int32_t>();
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) throw CheckpointError("checkpoint '" + path + "' is truncated or corrupt");
    Tensor t(s);
    r.read_doubles(t.data(), t.size());
    ck.arrays.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos() != body) throw CheckpointError("checkpoint '" + path + "' is truncated or corrupt");
  return ck;
}

}  // namespace inpaint
