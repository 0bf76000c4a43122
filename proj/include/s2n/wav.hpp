#pragma once

// 16-bit PCM mono RIFF/WAVE reading and writing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace s2n {

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Waveform {
  std::vector<double> samples;  // nominally in [-1, 1]
  std::uint32_t sample_rate = 22050;

  std::size_t size() const noexcept { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
  friend bool operator==(const Waveform&, const Waveform&) = default;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

/// Parses an in-memory WAV image. `what` names the source in error messages.
inline Waveform parse_wav(const std::vector<unsigned char>& bytes, const std::string& what = "wav") {
  auto fail = [&](const std::string& why) { throw WavError(what + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* h = bytes.data() + pos;
    const std::uint32_t len = detail::read_u32(h + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(h, "fmt ", 4) == 0) {
      if (len < 16 || body + 16 > bytes.size()) fail("malformed fmt chunk");
      format = detail::read_u16(bytes.data() + body);
      channels = detail::read_u16(bytes.data() + body + 2);
      rate = detail::read_u32(bytes.data() + body + 4);
      bits = detail::read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(h, "data", 4) == 0) {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (format != 1) fail("unsupported encoding " + std::to_string(format) + " (need PCM)");
      if (channels != 1) fail("expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) fail("expected 16-bit samples, got " + std::to_string(bits) + "-bit");
      if (rate == 0) fail("sample rate is zero");
      if (len % 2 != 0) fail("data chunk length is odd");
      if (body + len > bytes.size()) {
        fail("truncated data chunk (" + std::to_string(bytes.size() - body) + " of " +
             std::to_string(len) + " bytes)");
      }
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(detail::read_u16(bytes.data() + body + 2 * i));
        w.samples[i] = v / 32768.0;
      }
      return w;
    }
    pos = body + len + (len & 1u);
  }
  fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
  return {};
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(path + ": cannot open");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  return parse_wav(bytes, path);
}

/// 16-bit quantization used by write_wav; returns true when the value clipped.
inline bool quantize_sample(double x, std::int16_t& out) {
  const double scaled = std::nearbyint(x * 32768.0);
  const double clamped = std::clamp(scaled, -32768.0, 32767.0);
  out = static_cast<std::int16_t>(clamped);
  return clamped != scaled;
}

inline std::string encode_wav(const Waveform& w, std::size_t* clipped = nullptr) {
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, w.sample_rate);
  detail::put_u32(out, w.sample_rate * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_len);
  std::size_t clips = 0;
  for (double x : w.samples) {
    std::int16_t q;
    clips += quantize_sample(x, q);
    detail::put_u16(out, static_cast<std::uint16_t>(q));
  }
  if (clipped != nullptr) *clipped = clips;
  return out;
}

/// Writes 16-bit PCM mono. Returns the number of samples clipped to full scale.
inline std::size_t write_wav(const Waveform& w, const std::string& path) {
  std::size_t clipped = 0;
  const std::string bytes = encode_wav(w, &clipped);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WavError(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WavError(path + ": write failed");
  return clipped;
}

/// The waveform as it reads back after a 16-bit round trip.
inline Waveform quantized(const Waveform& w) {
  Waveform q = w;
  for (double& x : q.samples) {
    std::int16_t v;
    quantize_sample(x, v);
    x = v / 32768.0;
  }
  return q;
}

}  // namespace s2n
