#pragma once

// Spectral analysis for evaluation: FFT, mel-cepstrum, modulation spectrum,
// global variance, and waveform normalization.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdio>
#include <memory>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2n/wav.hpp"

namespace s2n {

using cplx = std::complex<double>;

/// Forward DFT of a real sequence of fixed length n, returning bins 0..n/2.
/// Not thread-safe: each instance owns its work buffers.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw std::invalid_argument("fft size must be positive");
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  /// Input shorter than n is zero-padded.
  std::vector<cplx> forward(std::span<const double> x) {
    forward_in_place(x);
    std::vector<cplx> y(bins());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = {out_[k][0], out_[k][1]};
    return y;
  }

  /// |X_k|^2 for k = 0..n/2.
  std::vector<double> power(std::span<const double> x) {
    forward_in_place(x);
    std::vector<double> p(bins());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    return p;
  }

 private:
  void forward_in_place(std::span<const double> x) {
    if (x.size() > n_) throw std::invalid_argument("fft input longer than transform size");
    std::copy(x.begin(), x.end(), in_);
    std::fill(in_ + x.size(), in_ + n_, 0.0);
    fftw_execute(plan_);
  }

  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

/// Complex forward DFT, X_k = sum_t x_t exp(-2 pi i k t / n).
inline std::vector<cplx> fft(const std::vector<cplx>& x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  const fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = x[i].real();
    buf[i][1] = x[i].imag();
  }
  fftw_execute(plan);
  std::vector<cplx> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = {buf[i][0], buf[i][1]};
  fftw_destroy_plan(plan);
  fftw_free(buf);
  return y;
}

// ---------------------------------------------------------------------------
// Frequency warping

/// First-order all-pass frequency warping of a normalized angular frequency in [0, pi].
inline double warp_frequency(double omega, double alpha) {
  return omega + 2.0 * std::atan(alpha * std::sin(omega) / (1.0 - alpha * std::cos(omega)));
}

inline double unwarp_frequency(double warped, double alpha) {
  return warp_frequency(warped, -alpha);
}

// ---------------------------------------------------------------------------
// Mel-cepstrum

struct MelCepstrumOptions {
  std::size_t order = 40;  // coefficients per frame, c0 included
  std::size_t frame_length = 1024;
  double frame_shift_seconds = 0.005;
  double alpha = 0.455;
  double power_floor = 1e-10;
};

/// T x D coefficient matrix, row-major by frame.
struct FeatureSequence {
  std::size_t dims = 0;
  double frame_shift = 0.005;  // seconds
  std::vector<double> values;
  bool too_short = false;  // input shorter than one frame

  std::size_t frames() const { return dims == 0 ? 0 : values.size() / dims; }
  double at(std::size_t t, std::size_t d) const { return values[t * dims + d]; }
  double& at(std::size_t t, std::size_t d) { return values[t * dims + d]; }
  std::vector<double> trajectory(std::size_t d) const {
    std::vector<double> out(frames());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = at(t, d);
    return out;
  }
};

inline std::size_t frame_shift_samples(std::uint32_t sample_rate, double seconds) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(sample_rate * seconds)));
}

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

/// Cepstral analysis of one frame's log power spectrum (bins 0..N/2) on the
/// warped frequency axis: log S(w~) ~ c0 + 2 sum_m c_m cos(m w~).
class WarpedCepstrum {
 public:
  WarpedCepstrum(std::size_t bins, std::size_t order, double alpha) : bins_(bins), order_(order) {
    if (bins < 2) throw std::invalid_argument("cepstrum needs at least two spectral bins");
    const double last = static_cast<double>(bins - 1);
    lo_.resize(bins);
    frac_.resize(bins);
    for (std::size_t j = 0; j < bins; ++j) {
      const double omega = unwarp_frequency(std::numbers::pi * j / last, alpha);
      const double pos = std::clamp(omega / std::numbers::pi * last, 0.0, last);
      lo_[j] = std::min(static_cast<std::size_t>(pos), bins - 2);
      frac_[j] = pos - static_cast<double>(lo_[j]);
    }
    basis_.resize(order * bins);
    for (std::size_t m = 0; m < order; ++m) {
      for (std::size_t j = 0; j < bins; ++j) {
        const double trap = (j == 0 || j == bins - 1) ? 0.5 : 1.0;
        basis_[m * bins + j] = trap * std::cos(std::numbers::pi * m * j / last) / last;
      }
    }
  }

  void apply(std::span<const double> log_spectrum, double* out) const {
    std::vector<double> warped(bins_);
    for (std::size_t j = 0; j < bins_; ++j) {
      warped[j] = log_spectrum[lo_[j]] * (1.0 - frac_[j]) + log_spectrum[lo_[j] + 1] * frac_[j];
    }
    for (std::size_t m = 0; m < order_; ++m) {
      double acc = 0.0;
      const double* b = basis_.data() + m * bins_;
      for (std::size_t j = 0; j < bins_; ++j) acc += b[j] * warped[j];
      out[m] = acc;
    }
  }

 private:
  std::size_t bins_, order_;
  std::vector<std::size_t> lo_;
  std::vector<double> frac_;
  std::vector<double> basis_;
};

/// Log envelope reconstructed from cepstral coefficients at warped frequency w~.
inline double cepstral_envelope(std::span<const double> c, double warped_omega) {
  double acc = c.empty() ? 0.0 : c[0];
  for (std::size_t m = 1; m < c.size(); ++m) acc += 2.0 * c[m] * std::cos(m * warped_omega);
  return acc;
}

/// Frames of frame_length samples every frame_shift; T = floor((len - L) / shift) + 1.
inline FeatureSequence extract_mel_cepstrum(const Waveform& w, const MelCepstrumOptions& opt = {}) {
  if (opt.order == 0 || opt.frame_length < 4) {
    throw std::invalid_argument("mel-cepstrum: order and frame length must be positive");
  }
  FeatureSequence seq;
  seq.dims = opt.order;
  seq.frame_shift = opt.frame_shift_seconds;
  const std::size_t len = opt.frame_length;
  const std::size_t shift = frame_shift_samples(w.sample_rate, opt.frame_shift_seconds);
  if (w.samples.size() < len) {
    seq.too_short = true;
    return seq;
  }
  const std::size_t frames = (w.samples.size() - len) / shift + 1;
  seq.values.resize(frames * opt.order);
  const std::vector<double> window = hann_window(len);
  RealFft fft(len);
  const WarpedCepstrum cep(fft.bins(), opt.order, opt.alpha);
  std::vector<double> frame(len);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = w.samples.data() + t * shift;
    for (std::size_t i = 0; i < len; ++i) frame[i] = src[i] * window[i];
    std::vector<double> p = fft.power(frame);
    for (double& v : p) v = std::log(std::max(v, opt.power_floor));
    cep.apply(p, seq.values.data() + t * opt.order);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Modulation spectrum

struct ModulationSpectrum {
  std::size_t fft_size = 8192;
  std::size_t dims = 0;
  bool mean_removed = true;
  double floor = 1e-12;
  std::vector<double> values;  // dims x bins, log10 power

  std::size_t bins() const noexcept { return fft_size / 2 + 1; }
  double at(std::size_t d, std::size_t k) const { return values[d * bins() + k]; }
  double& at(std::size_t d, std::size_t k) { return values[d * bins() + k]; }
  friend bool operator==(const ModulationSpectrum&, const ModulationSpectrum&) = default;
};

inline constexpr double kModulationFloor = 1e-12;

/// |DFT|^2 of each (optionally mean-removed) coefficient trajectory, zero-padded
/// to fft_size; dims x (fft_size/2 + 1), linear scale.
inline std::vector<double> modulation_power(const FeatureSequence& seq, std::size_t fft_size,
                                            bool remove_mean) {
  const std::size_t t_len = seq.frames();
  if (t_len == 0) throw std::invalid_argument("modulation spectrum: empty feature sequence");
  if (fft_size < t_len) {
    throw std::invalid_argument("modulation spectrum: fft size " + std::to_string(fft_size) +
                                " is shorter than the sequence (" + std::to_string(t_len) +
                                " frames)");
  }
  RealFft fft(fft_size);
  std::vector<double> out;
  out.reserve(seq.dims * fft.bins());
  for (std::size_t d = 0; d < seq.dims; ++d) {
    std::vector<double> x = seq.trajectory(d);
    if (remove_mean) {
      double m = 0.0;
      for (double v : x) m += v;
      m /= static_cast<double>(x.size());
      for (double& v : x) v -= m;
    }
    const std::vector<double> p = fft.power(x);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline ModulationSpectrum modulation_spectrum(const FeatureSequence& seq, std::size_t fft_size = 8192,
                                              bool remove_mean = true) {
  ModulationSpectrum ms;
  ms.fft_size = fft_size;
  ms.dims = seq.dims;
  ms.mean_removed = remove_mean;
  ms.floor = kModulationFloor;
  ms.values = modulation_power(seq, fft_size, remove_mean);
  for (double& v : ms.values) v = std::log10(std::max(v, kModulationFloor));
  return ms;
}

inline void require_same_layout(const ModulationSpectrum& a, const ModulationSpectrum& b,
                                const char* what) {
  if (a.dims != b.dims || a.fft_size != b.fft_size) {
    throw std::invalid_argument(std::string(what) + ": modulation spectra differ in shape (" +
                                std::to_string(a.dims) + "x" + std::to_string(a.fft_size) +
                                " vs " + std::to_string(b.dims) + "x" +
                                std::to_string(b.fft_size) + ")");
  }
}

/// Arithmetic mean in the log-power domain.
inline ModulationSpectrum average_modulation_spectrum(const std::vector<ModulationSpectrum>& all) {
  if (all.empty()) throw std::invalid_argument("average modulation spectrum: no utterances");
  ModulationSpectrum avg = all.front();
  std::fill(avg.values.begin(), avg.values.end(), 0.0);
  for (const auto& ms : all) {
    require_same_layout(avg, ms, "average modulation spectrum");
    for (std::size_t i = 0; i < avg.values.size(); ++i) avg.values[i] += ms.values[i];
  }
  for (double& v : avg.values) v /= static_cast<double>(all.size());
  return avg;
}

/// Bins [0, k) of every dimension, dims x k row-major.
inline std::vector<double> first_k_bins(const ModulationSpectrum& ms, std::size_t k = 1000) {
  if (k > ms.bins()) {
    throw std::invalid_argument("first_k_bins: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(ms.bins()) + " bins");
  }
  std::vector<double> out;
  out.reserve(ms.dims * k);
  for (std::size_t d = 0; d < ms.dims; ++d) {
    for (std::size_t b = 0; b < k; ++b) out.push_back(ms.at(d, b));
  }
  return out;
}

/// Per-dimension RMS difference over the first k bins, averaged over dimensions.
inline double ms_distance(const ModulationSpectrum& a, const ModulationSpectrum& b, std::size_t k = 1000) {
  require_same_layout(a, b, "ms_distance");
  if (k == 0 || k > a.bins()) {
    throw std::invalid_argument("ms_distance: k=" + std::to_string(k) + " outside 1.." +
                                std::to_string(a.bins()));
  }
  if (a.dims == 0) throw std::invalid_argument("ms_distance: no dimensions");
  double total = 0.0;
  for (std::size_t d = 0; d < a.dims; ++d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double diff = a.at(d, i) - b.at(d, i);
      acc += diff * diff;
    }
    total += std::sqrt(acc / static_cast<double>(k));
  }
  return total / static_cast<double>(a.dims);
}

/// Mean over dims of the average log power in bins [lo, hi).
inline double band_mean(const ModulationSpectrum& ms, std::size_t lo, std::size_t hi) {
  if (lo >= hi || hi > ms.bins()) throw std::invalid_argument("band_mean: bad bin range");
  double acc = 0.0;
  for (std::size_t d = 0; d < ms.dims; ++d) {
    for (std::size_t k = lo; k < hi; ++k) acc += ms.at(d, k);
  }
  return acc / static_cast<double>(ms.dims * (hi - lo));
}

/// Modulation-spectrum bin nearest a modulation frequency in Hz.
inline std::size_t modulation_bin(double hz, double frame_shift_seconds, std::size_t fft_size) {
  return static_cast<std::size_t>(std::lround(hz * frame_shift_seconds * static_cast<double>(fft_size)));
}

/// Tab-separated (coefficient, bin, log10 power) table over the first k bins.
inline void write_modulation_table(std::ostream& out, const ModulationSpectrum& ms, std::size_t k) {
  k = std::min(k, ms.bins());
  out << "# fft_size=" << ms.fft_size << " mean_removed=" << (ms.mean_removed ? 1 : 0)
      << " floor=" << ms.floor << "\n";
  out << "coefficient\tbin\tlog_power\n";
  char buf[64];
  for (std::size_t d = 0; d < ms.dims; ++d) {
    for (std::size_t b = 0; b < k; ++b) {
      std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.9g\n", d, b, ms.at(d, b));
      out << buf;
    }
  }
}

// ---------------------------------------------------------------------------
// Global variance

/// Population variance of each coefficient over frames.
inline std::vector<double> global_variance(const FeatureSequence& seq) {
  const std::size_t t_len = seq.frames();
  if (t_len < 2) throw std::invalid_argument("global variance needs at least two frames");
  std::vector<double> gv(seq.dims);
  for (std::size_t d = 0; d < seq.dims; ++d) {
    double m = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) m += seq.at(t, d);
    m /= static_cast<double>(t_len);
    double v = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) v += (seq.at(t, d) - m) * (seq.at(t, d) - m);
    gv[d] = v / static_cast<double>(t_len);
  }
  return gv;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Mean and population standard deviation over every sample of every waveform.
inline NormStats compute_stats(const std::vector<const Waveform*>& corpus) {
  std::size_t n = 0;
  double sum = 0.0;
  for (const Waveform* w : corpus) {
    for (double x : w->samples) sum += x;
    n += w->samples.size();
  }
  if (n == 0) throw std::invalid_argument("normalization stats: corpus has no samples");
  const double mean = sum / static_cast<double>(n);
  double var = 0.0;
  for (const Waveform* w : corpus) {
    for (double x : w->samples) var += (x - mean) * (x - mean);
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (!(sd > 0.0)) throw std::invalid_argument("normalization stats: corpus is silent (std = 0)");
  return {mean, sd};
}

inline NormStats compute_stats(const std::vector<Waveform>& corpus) {
  std::vector<const Waveform*> ptrs;
  for (const auto& w : corpus) ptrs.push_back(&w);
  return compute_stats(ptrs);
}

inline void check_stats(const NormStats& s) {
  if (!(s.std > 0.0) || !std::isfinite(s.std) || !std::isfinite(s.mean)) {
    throw std::invalid_argument("normalization stats: std must be positive and finite");
  }
}

inline Waveform normalize(Waveform w, const NormStats& s) {
  check_stats(s);
  for (double& x : w.samples) x = (x - s.mean) / s.std;
  return w;
}

inline Waveform denormalize(Waveform w, const NormStats& s) {
  check_stats(s);
  for (double& x : w.samples) x = x * s.std + s.mean;
  return w;
}

}  // namespace s2n
