#pragma once

// Unpaired two-domain corpora: manifests, crop sampling, and a synthetic toy
// pair where domain X is an envelope-smoothed image of a domain-Y-like process.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2n/dsp.hpp"
#include "s2n/random.hpp"
#include "s2n/tensor.hpp"
#include "s2n/wav.hpp"

namespace s2n {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Domain { X, Y };

inline char domain_tag(Domain d) { return d == Domain::X ? 'X' : 'Y'; }

struct DomainCorpus {
  Domain domain = Domain::X;
  std::vector<Waveform> train;
  std::vector<Waveform> heldout;
  std::vector<std::string> train_paths;
  std::vector<std::string> heldout_paths;
  NormStats stats;

  std::size_t size() const { return train.size() + heldout.size(); }
  std::uint32_t sample_rate() const {
    return train.empty() ? (heldout.empty() ? 0 : heldout.front().sample_rate) : train.front().sample_rate;
  }
  std::size_t shortest_train() const {
    std::size_t n = train.empty() ? 0 : train.front().size();
    for (const auto& w : train) n = std::min(n, w.size());
    return n;
  }

  /// Computes stats from the train split only.
  void refresh_stats() {
    if (train.empty()) {
      throw DataError(std::string("domain ") + domain_tag(domain) +
                      ": train split is empty, normalization stats are undefined");
    }
    stats = compute_stats(train);
  }
};

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string path;  // as written; relative paths resolve against the manifest directory
  Domain domain = Domain::X;
  bool heldout = false;
};

inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::string& what) {
  std::vector<ManifestEntry> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    const std::string where = what + ":" + std::to_string(lineno);
    if (cols.size() != 3) {
      throw DataError(where + ": expected 3 tab-separated columns (path, domain, split), got " +
                      std::to_string(cols.size()));
    }
    if (cols[0] == "path" && cols[1] == "domain") continue;  // header row
    ManifestEntry e;
    e.path = cols[0];
    if (cols[1] == "X") {
      e.domain = Domain::X;
    } else if (cols[1] == "Y") {
      e.domain = Domain::Y;
    } else {
      throw DataError(where + ": domain must be X or Y, got '" + cols[1] + "'");
    }
    if (cols[2] == "train") {
      e.heldout = false;
    } else if (cols[2] == "heldout") {
      e.heldout = true;
    } else {
      throw DataError(where + ": split must be train or heldout, got '" + cols[2] + "'");
    }
    rows.push_back(std::move(e));
  }
  return rows;
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open manifest");
  return parse_manifest(in, path);
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& rows) {
  out << "path\tdomain\tsplit\n";
  for (const auto& r : rows) {
    out << r.path << '\t' << domain_tag(r.domain) << '\t' << (r.heldout ? "heldout" : "train") << '\n';
  }
}

/// Loads one domain's files from a manifest and computes its stats.
inline DomainCorpus load_corpus(const std::string& manifest, Domain domain) {
  const auto rows = read_manifest(manifest);
  const std::filesystem::path base = std::filesystem::path(manifest).parent_path();
  DomainCorpus c;
  c.domain = domain;
  std::uint32_t rate = 0;
  std::string rate_source;
  for (const auto& r : rows) {
    if (r.domain != domain) continue;
    std::filesystem::path p(r.path);
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw DataError(manifest + ": missing file " + p.string());
    Waveform w = read_wav(p.string());
    if (rate == 0) {
      rate = w.sample_rate;
      rate_source = p.string();
    } else if (w.sample_rate != rate) {
      throw DataError(manifest + ": mixed sample rates " + std::to_string(rate) + " Hz (" +
                      rate_source + ") and " + std::to_string(w.sample_rate) + " Hz (" +
                      p.string() + ")");
    }
    (r.heldout ? c.heldout : c.train).push_back(std::move(w));
    (r.heldout ? c.heldout_paths : c.train_paths).push_back(p.string());
  }
  c.refresh_stats();
  return c;
}

inline std::pair<DomainCorpus, DomainCorpus> load_corpora(const std::string& manifest) {
  DomainCorpus x = load_corpus(manifest, Domain::X);
  DomainCorpus y = load_corpus(manifest, Domain::Y);
  if (x.sample_rate() != y.sample_rate()) {
    throw DataError(manifest + ": mixed sample rates " + std::to_string(x.sample_rate()) +
                    " Hz (domain X) and " + std::to_string(y.sample_rate()) + " Hz (domain Y)");
  }
  return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------------------
// Sampling

struct Crop {
  std::size_t utterance = 0;
  std::size_t offset = 0;
};

/// Uniform utterance, then uniform start offset within it.
inline Crop draw_crop(const DomainCorpus& c, std::size_t segment, Rng& rng) {
  Crop crop;
  crop.utterance = static_cast<std::size_t>(rng.below(c.train.size()));
  crop.offset = static_cast<std::size_t>(rng.below(c.train[crop.utterance].size() - segment + 1));
  return crop;
}

/// batch_size normalized crops from the train split, shape (batch, 1, segment).
inline Tensor<float> sample_batch(const DomainCorpus& c, std::size_t batch_size, std::size_t segment,
                                  Rng& rng) {
  if (c.train.empty()) {
    throw DataError(std::string("domain ") + domain_tag(c.domain) + ": train split is empty");
  }
  if (segment == 0 || segment > c.shortest_train()) {
    throw DataError(std::string("domain ") + domain_tag(c.domain) + ": segment length " +
                    std::to_string(segment) + " exceeds the shortest waveform (" +
                    std::to_string(c.shortest_train()) + " samples)");
  }
  check_stats(c.stats);
  Tensor<float> out(Shape{batch_size, 1, segment});
  for (std::size_t b = 0; b < batch_size; ++b) {
    const Crop crop = draw_crop(c, segment, rng);
    const double* src = c.train[crop.utterance].samples.data() + crop.offset;
    float* dst = out.row(b, 0);
    for (std::size_t i = 0; i < segment; ++i) {
      dst[i] = static_cast<float>((src[i] - c.stats.mean) / c.stats.std);
    }
  }
  return out;
}

/// Independent crops per domain: all of X's draws, then all of Y's.
inline std::pair<Tensor<float>, Tensor<float>> sample_unpaired_batch(const DomainCorpus& x,
                                                                     const DomainCorpus& y,
                                                                     std::size_t batch_size,
                                                                     std::size_t segment, Rng& rng) {
  Tensor<float> bx = sample_batch(x, batch_size, segment, rng);
  Tensor<float> by = sample_batch(y, batch_size, segment, rng);
  return {std::move(bx), std::move(by)};
}

/// Aligned crops for conditional training: the same utterance and offset from
/// both corpora, each normalized with its own stats.
inline std::pair<Tensor<float>, Tensor<float>> sample_paired_batch(const DomainCorpus& noisy,
                                                                   const DomainCorpus& clean,
                                                                   std::size_t batch_size,
                                                                   std::size_t segment, Rng& rng) {
  if (noisy.train.size() != clean.train.size()) throw DataError("paired corpora differ in size");
  for (std::size_t i = 0; i < noisy.train.size(); ++i) {
    if (noisy.train[i].size() != clean.train[i].size()) {
      throw DataError("paired utterance " + std::to_string(i) + " differs in length");
    }
  }
  Rng replay = rng;  // equal lengths make the clean side draw the same crops
  Tensor<float> a = sample_batch(noisy, batch_size, segment, rng);
  Tensor<float> b = sample_batch(clean, batch_size, segment, replay);
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Toy domains

struct ToyDomainSpec {
  std::uint64_t seed = 1;
  std::size_t utterances = 200;  // per domain
  double seconds = 1.0;
  std::uint32_t sample_rate = 22050;
  double f0_min = 100.0;
  double f0_max = 220.0;
  std::size_t harmonics = 8;
  double detail_level = 1.0;  // log-amplitude depth of the fast envelope modulation
  double detail_low_hz = 6.0;
  double detail_high_hz = 20.0;
  double smoothing_cutoff_hz = 3.0;  // -3 dB point of domain X's envelope smoother
  double heldout_fraction = 0.1;
  double peak = 0.5;
  double noise_level = 0.01;  // std of the white background noise added after peak scaling
  friend bool operator==(const ToyDomainSpec&, const ToyDomainSpec&) = default;

  void validate() const {
    auto fail = [](const std::string& why) { throw std::invalid_argument("toy spec: " + why); };
    if (harmonics == 0) fail("harmonics must be at least 1");
    if (utterances < 2) fail("need at least 2 utterances per domain");
    if (!(seconds > 0.0) || sample_rate == 0) fail("duration and sample rate must be positive");
    if (!(f0_min > 0.0) || !(f0_max >= f0_min)) fail("need 0 < f0_min <= f0_max");
    if (f0_max * static_cast<double>(harmonics) >= 0.5 * sample_rate) {
      fail("highest harmonic reaches the Nyquist frequency");
    }
    if (!(detail_level >= 0.0) || detail_level > 4.0) fail("detail_level must be in [0, 4]");
    if (!(detail_low_hz > 0.0) || !(detail_high_hz >= detail_low_hz)) fail("bad detail band");
    if (!(smoothing_cutoff_hz > 0.0)) fail("smoothing cutoff must be positive");
    if (!(heldout_fraction > 0.0) || heldout_fraction >= 1.0) fail("heldout_fraction must be in (0, 1)");
    if (!(peak > 0.0) || peak >= 1.0) fail("peak must be in (0, 1)");
    if (!(noise_level >= 0.0) || noise_level > 0.1) fail("noise_level must be in [0, 0.1]");
  }

  std::size_t heldout_count() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(heldout_fraction * utterances)));
  }
};

/// Domain gap measured at generation time, on the 16-bit quantized signals.
struct ToyGap {
  double ms_distance = 0.0;  // all utterances of X vs all of Y, first 1000 bins
  double ms_distance_heldout = 0.0;
  double detail_band_x = 0.0;  // mean log10 MS over the detail band
  double detail_band_y = 0.0;
  std::size_t detail_lo = 0, detail_hi = 0;  // bin range
};

struct ToyCorpora {
  DomainCorpus x;
  DomainCorpus y;
  ToyGap gap;
};

namespace detail {

// Gaussian smoothing with -3 dB at cutoff_hz, applied to a sequence sampled at rate_hz.
inline std::vector<double> gaussian_smooth(const std::vector<double>& x, double cutoff_hz, double rate_hz) {
  const double sigma = std::sqrt(std::log(2.0)) / (2.0 * std::numbers::pi * cutoff_hz) * rate_hz;
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
  double norm = 0.0;
  for (std::ptrdiff_t i = -half; i <= half; ++i) {
    const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
    k[static_cast<std::size_t>(i + half)] = v;
    norm += v;
  }
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> out(x.size());
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::ptrdiff_t i = -half; i <= half; ++i) {
      std::ptrdiff_t j = t + i;
      j = j < 0 ? -j : (j >= n ? 2 * (n - 1) - j : j);  // mirror at the edges
      j = std::clamp<std::ptrdiff_t>(j, 0, n - 1);
      acc += k[static_cast<std::size_t>(i + half)] * x[static_cast<std::size_t>(j)];
    }
    out[static_cast<std::size_t>(t)] = acc / norm;
  }
  return out;
}

// Band-limited modulation in [-1, 1]: mean of four sinusoids in [lo, hi] Hz.
inline std::vector<double> fast_modulation(Rng& rng, std::size_t n, double rate, double lo, double hi) {
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < 4; ++i) {
    const double f = rng.uniform(lo, hi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t t = 0; t < n; ++t) {
      out[t] += 0.25 * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / rate + phase);
    }
  }
  return out;
}

/// One utterance: harmonic tone whose per-harmonic envelopes carry a slow
/// contour times exp(detail_level * fast modulation). With `smooth` set,
/// the envelopes are low-pass filtered before synthesis.
inline Waveform toy_utterance(const ToyDomainSpec& spec, Rng& rng, bool smooth) {
  const std::size_t n = static_cast<std::size_t>(std::lround(spec.seconds * spec.sample_rate));
  constexpr std::size_t hop = 50;  // envelope control-rate decimation
  const std::size_t ctrl = n / hop + 2;
  const double ctrl_rate = static_cast<double>(spec.sample_rate) / hop;
  const double two_pi = 2.0 * std::numbers::pi;

  const double f0 = rng.uniform(spec.f0_min, spec.f0_max);
  const double vib_rate = rng.uniform(0.5, 2.0);
  const double vib_phase = rng.uniform(0.0, two_pi);
  const double slow_rate = rng.uniform(0.5, 2.0);
  const double slow_phase = rng.uniform(0.0, two_pi);
  const std::vector<double> common =
      fast_modulation(rng, ctrl, ctrl_rate, spec.detail_low_hz, spec.detail_high_hz);

  std::vector<std::vector<double>> env(spec.harmonics);
  std::vector<double> amp(spec.harmonics);
  for (std::size_t h = 0; h < spec.harmonics; ++h) {
    amp[h] = rng.uniform(0.6, 1.0) / static_cast<double>(h + 1);
    const double tilt_phase = rng.uniform(0.0, two_pi);
    const std::vector<double> own =
        fast_modulation(rng, ctrl, ctrl_rate, spec.detail_low_hz, spec.detail_high_hz);
    env[h].resize(ctrl);
    for (std::size_t t = 0; t < ctrl; ++t) {
      const double s = static_cast<double>(t) / ctrl_rate;
      const double slow = 1.0 + 0.2 * std::sin(two_pi * slow_rate * s + slow_phase + 0.3 * tilt_phase);
      env[h][t] = slow * std::exp(spec.detail_level * (common[t] + own[t]));
    }
    if (smooth) env[h] = gaussian_smooth(env[h], spec.smoothing_cutoff_hz, ctrl_rate);
  }

  Waveform w;
  w.sample_rate = spec.sample_rate;
  w.samples.assign(n, 0.0);
  std::vector<double> phase(spec.harmonics);
  for (std::size_t h = 0; h < spec.harmonics; ++h) phase[h] = rng.uniform(0.0, two_pi);
  double inst_phase = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double s = static_cast<double>(t) / spec.sample_rate;
    const double f = f0 * (1.0 + 0.02 * std::sin(two_pi * vib_rate * s + vib_phase));
    inst_phase += two_pi * f / spec.sample_rate;
    const double pos = static_cast<double>(t) / hop;
    const std::size_t i0 = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i0);
    double acc = 0.0;
    for (std::size_t h = 0; h < spec.harmonics; ++h) {
      const double e = env[h][i0] * (1.0 - frac) + env[h][i0 + 1] * frac;
      acc += amp[h] * e * std::sin(static_cast<double>(h + 1) * inst_phase + phase[h]);
    }
    w.samples[t] = acc;
  }
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : w.samples) v *= spec.peak / peak;
  }
  // A recording-like floor in both domains, so the spectral valleys are not
  // pure quantization noise.
  if (spec.noise_level > 0.0) {
    for (double& v : w.samples) v += spec.noise_level * rng.normal();
  }
  return quantized(w);
}

inline ModulationSpectrum average_ms(const std::vector<const Waveform*>& wavs) {
  std::vector<ModulationSpectrum> all;
  all.reserve(wavs.size());
  for (const Waveform* w : wavs) all.push_back(modulation_spectrum(extract_mel_cepstrum(*w)));
  return average_modulation_spectrum(all);
}

}  // namespace detail

/// Average modulation spectrum (default mel-cepstrum and 8192-point settings)
/// of a set of waveforms.
inline ModulationSpectrum average_modulation_spectrum_of(const std::vector<Waveform>& wavs) {
  std::vector<const Waveform*> ptrs;
  for (const auto& w : wavs) ptrs.push_back(&w);
  return detail::average_ms(ptrs);
}

inline std::vector<const Waveform*> all_waveforms(const DomainCorpus& c) {
  std::vector<const Waveform*> out;
  for (const auto& w : c.train) out.push_back(&w);
  for (const auto& w : c.heldout) out.push_back(&w);
  return out;
}

inline std::vector<const Waveform*> heldout_waveforms(const DomainCorpus& c) {
  std::vector<const Waveform*> out;
  for (const auto& w : c.heldout) out.push_back(&w);
  return out;
}

/// Two unpaired corpora drawn from independent streams. The last
/// heldout_fraction of each domain's utterances form its held-out split.
inline ToyCorpora make_toy_domains(const ToyDomainSpec& spec) {
  spec.validate();
  ToyCorpora out;
  out.x.domain = Domain::X;
  out.y.domain = Domain::Y;
  Rng rx(spec.seed * 2 + 1);
  Rng ry(spec.seed * 2 + 2);
  const std::size_t held = spec.heldout_count();
  for (std::size_t i = 0; i < spec.utterances; ++i) {
    Waveform wx = detail::toy_utterance(spec, rx, true);
    Waveform wy = detail::toy_utterance(spec, ry, false);
    const bool is_held = i + held >= spec.utterances;
    (is_held ? out.x.heldout : out.x.train).push_back(std::move(wx));
    (is_held ? out.y.heldout : out.y.train).push_back(std::move(wy));
  }
  out.x.refresh_stats();
  out.y.refresh_stats();

  const ModulationSpectrum mx = detail::average_ms(all_waveforms(out.x));
  const ModulationSpectrum my = detail::average_ms(all_waveforms(out.y));
  out.gap.ms_distance = ms_distance(mx, my, 1000);
  out.gap.ms_distance_heldout = ms_distance(detail::average_ms(heldout_waveforms(out.x)),
                                            detail::average_ms(heldout_waveforms(out.y)), 1000);
  const double shift = frame_shift_samples(spec.sample_rate, 0.005) / double(spec.sample_rate);
  out.gap.detail_lo = modulation_bin(spec.detail_low_hz, shift, mx.fft_size);
  out.gap.detail_hi = std::min(modulation_bin(spec.detail_high_hz, shift, mx.fft_size), mx.bins());
  out.gap.detail_band_x = band_mean(mx, out.gap.detail_lo, out.gap.detail_hi);
  out.gap.detail_band_y = band_mean(my, out.gap.detail_lo, out.gap.detail_hi);
  return out;
}

/// Aligned (corrupted, clean) corpora for the conditional baseline: clean
/// utterances are unsmoothed toy speech; the corrupted copy adds white noise of
/// the given std before quantization. Both splits keep the same order.
inline std::pair<DomainCorpus, DomainCorpus> make_toy_pairs(const ToyDomainSpec& spec, double corruption) {
  spec.validate();
  if (!(corruption > 0.0)) throw std::invalid_argument("toy pairs: corruption std must be positive");
  DomainCorpus noisy, clean;
  noisy.domain = Domain::X;
  clean.domain = Domain::Y;
  Rng rs(spec.seed * 2 + 2);
  Rng rn(spec.seed * 2 + 3);
  const std::size_t held = spec.heldout_count();
  for (std::size_t i = 0; i < spec.utterances; ++i) {
    Waveform c = detail::toy_utterance(spec, rs, false);
    Waveform n = c;
    for (double& v : n.samples) v += corruption * rn.normal();
    const bool is_held = i + held >= spec.utterances;
    (is_held ? noisy.heldout : noisy.train).push_back(quantized(n));
    (is_held ? clean.heldout : clean.train).push_back(std::move(c));
  }
  noisy.refresh_stats();
  clean.refresh_stats();
  return {std::move(noisy), std::move(clean)};
}

}  // namespace s2n
