#pragma once

// Versioned binary container for training state.
//
// Layout (all integers little-endian):
//   8 bytes   magic "S2NCKPT1"
//   u32       format version
//   u64       FNV-1a digest of the embedded config text
//   u64 + n   config text
//   u64       iteration
//   u64 + n   random-stream state (text)
//   u32       array count, then per array:
//               u32 + n  name
//               3 x u64  shape (batch, channels, width)
//               u64      element count
//               count x f32 values
//   u64       FNV-1a digest of every preceding byte

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "s2n/tensor.hpp"

namespace s2n {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'S', '2', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  std::string config_text;
  std::uint64_t iteration = 0;
  std::string rng_state;
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void bytes(std::string_view s) { out_.append(s); }
  void text64(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint64_t uint(int n, const char* field) {
    need(static_cast<std::size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view bytes(std::uint64_t n, const char* field) {
    need(n, field);
    const std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const noexcept { return pos_; }

  [[noreturn]] void fail(const std::string& why) const { throw CheckpointError(what_ + ": " + why); }

 private:
  void need(std::uint64_t n, const char* field) const {
    if (n > data_.size() - pos_) fail(std::string("truncated while reading ") + field);
  }
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointData& c) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 8));
  w.u32(kCheckpointVersion);
  w.u64(fnv1a64(c.config_text));
  w.text64(c.config_text);
  w.u64(c.iteration);
  w.text64(c.rng_state);
  w.u32(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    if (a.data.size() != a.shape.size()) {
      throw CheckpointError("array " + a.name + ": data size does not match shape " + a.shape.str());
    }
    w.u32(static_cast<std::uint32_t>(a.name.size()));
    w.bytes(a.name);
    w.u64(a.shape.batch);
    w.u64(a.shape.channels);
    w.u64(a.shape.width);
    w.u64(a.data.size());
    for (float f : a.data) w.f32(f);
  }
  w.u64(fnv1a64(w.str()));
  return std::move(w.str());
}

inline CheckpointData decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  detail::ByteReader r(bytes, what);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    r.fail("bad magic (not a checkpoint file)");
  }
  r.bytes(8, "magic");
  const auto version = r.uint(4, "version");
  if (version != kCheckpointVersion) {
    r.fail("unsupported format version " + std::to_string(version) + " (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 8 + 4 + 8 + 8) r.fail("truncated header");
  const std::uint64_t body_end = bytes.size() - 8;
  {
    detail::ByteReader tail(bytes.substr(body_end), what);
    if (tail.uint(8, "checksum") != fnv1a64(bytes.substr(0, body_end))) {
      r.fail("checksum mismatch (file is corrupt or truncated)");
    }
  }
  CheckpointData c;
  const std::uint64_t digest = r.uint(8, "config digest");
  c.config_text = std::string(r.bytes(r.uint(8, "config length"), "config text"));
  if (fnv1a64(c.config_text) != digest) r.fail("config digest mismatch");
  c.iteration = r.uint(8, "iteration");
  c.rng_state = std::string(r.bytes(r.uint(8, "rng length"), "rng state"));
  const auto count = r.uint(4, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = std::string(r.bytes(r.uint(4, "name length"), "array name"));
    a.shape.batch = r.uint(8, "shape");
    a.shape.channels = r.uint(8, "shape");
    a.shape.width = r.uint(8, "shape");
    const auto n = r.uint(8, "element count");
    if (n != a.shape.size()) r.fail("array " + a.name + ": element count does not match shape");
    const std::string_view raw = r.bytes(n * 4, "array data");
    a.data.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<unsigned char>(raw[4 * k + b])) << (8 * b);
      a.data[k] = std::bit_cast<float>(bits);
    }
    c.arrays.push_back(std::move(a));
  }
  if (r.position() != body_end) r.fail("trailing bytes after the last array");
  return c;
}

/// Writes through a temporary file and renames it into place.
inline void write_checkpoint(const std::string& path, const CheckpointData& c) {
  const std::string bytes = encode_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(path + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path + ": cannot open");
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  return decode_checkpoint(bytes, path);
}

}  // namespace s2n
