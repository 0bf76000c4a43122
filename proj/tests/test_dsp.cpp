#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "s2n/dsp.hpp"
#include "s2n/random.hpp"

using namespace s2n;
using Catch::Approx;

namespace {

constexpr double kPi = std::numbers::pi;

// O(N^2) oracle, accumulated in long double.
std::vector<std::complex<long double>> brute_dft(const std::vector<cplx>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<long double>> y(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<long double> acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const long double a = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>((k * t) % n) / n;
      acc += std::complex<long double>(x[t].real(), x[t].imag()) * std::complex<long double>(std::cos(a), std::sin(a));
    }
    y[k] = acc;
  }
  return y;
}

double max_rel_error(const std::vector<cplx>& got, const std::vector<std::complex<long double>>& want) {
  long double scale = 0, err = 0;
  for (std::size_t k = 0; k < got.size(); ++k) {
    scale = std::max(scale, std::abs(want[k]));
    err = std::max(err, std::abs(std::complex<long double>(got[k].real(), got[k].imag()) - want[k]));
  }
  return static_cast<double>(err / scale);
}

FeatureSequence sequence(const std::vector<std::vector<double>>& trajectories) {
  FeatureSequence s;
  s.dims = trajectories.size();
  const std::size_t t_len = trajectories.front().size();
  s.values.resize(t_len * s.dims);
  for (std::size_t d = 0; d < s.dims; ++d) {
    for (std::size_t t = 0; t < t_len; ++t) s.at(t, d) = trajectories[d][t];
  }
  return s;
}

Waveform tone(double hz, std::size_t n, double amp = 0.5, std::uint32_t rate = 22050) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2 * kPi * hz * i / rate);
  return w;
}

ModulationSpectrum random_ms(Rng& rng, std::size_t dims, std::size_t fft) {
  ModulationSpectrum m;
  m.fft_size = fft;
  m.dims = dims;
  m.values.resize(dims * m.bins());
  for (auto& v : m.values) v = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("fft agrees with a direct DFT", "[dsp][fft]") {
  Rng rng(1);
  for (std::size_t n : {1u, 2u, 3u, 7u, 16u, 100u, 255u, 512u, 1000u, 1024u}) {
    std::vector<cplx> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    INFO("n = " << n);
    CHECK(max_rel_error(fft(x), brute_dft(x)) < 1e-9);

    std::vector<double> real(n);
    std::vector<cplx> as_complex(n);
    for (std::size_t i = 0; i < n; ++i) as_complex[i] = real[i] = rng.normal();
    RealFft rf(n);
    const auto half = rf.forward(real);
    auto full = brute_dft(as_complex);
    full.resize(n / 2 + 1);
    CHECK(max_rel_error(half, full) < 1e-9);
  }
}

TEST_CASE("mel-cepstrum extraction", "[dsp][mcep]") {
  SECTION("frame count law") {
    Rng rng(2);
    Waveform w;
    w.sample_rate = 22050;
    w.samples.resize(10000);
    for (auto& v : w.samples) v = 0.1 * rng.normal();
    const FeatureSequence s = extract_mel_cepstrum(w);
    const std::size_t shift = 110;  // 5 ms at 22.05 kHz
    CHECK(frame_shift_samples(22050, 0.005) == shift);
    CHECK(s.frames() == (10000 - 1024) / shift + 1);
    CHECK(s.dims == 40);
    for (double v : s.values) REQUIRE(std::isfinite(v));
    CHECK(extract_mel_cepstrum(w).values == s.values);
  }

  SECTION("silence gives identical frames") {
    Waveform w;
    w.sample_rate = 22050;
    w.samples.assign(3000, 0.0);
    const FeatureSequence s = extract_mel_cepstrum(w);
    REQUIRE(s.frames() > 1);
    for (std::size_t t = 1; t < s.frames(); ++t) {
      for (std::size_t d = 0; d < s.dims; ++d) REQUIRE(s.at(t, d) == s.at(0, d));
    }
  }

  SECTION("too-short input is flagged") {
    const FeatureSequence s = extract_mel_cepstrum(tone(440, 1000));
    CHECK(s.too_short);
    CHECK(s.frames() == 0);
  }

  SECTION("c0 follows frame energy") {
    Rng rng(9);
    Waveform quiet;
    quiet.sample_rate = 22050;
    quiet.samples.resize(2048);
    for (auto& v : quiet.samples) v = 0.01 * rng.normal();
    Waveform loud = quiet;
    for (auto& v : loud.samples) v *= 50;
    // 50x amplitude is 2 ln 50 nats more log power in every bin.
    CHECK(extract_mel_cepstrum(loud).at(0, 0) - extract_mel_cepstrum(quiet).at(0, 0) ==
          Approx(2 * std::log(50.0)).epsilon(1e-9));
  }

  SECTION("a 1 kHz tone peaks where the DFT oracle puts it on the warped axis") {
    const Waveform w = tone(1000, 1024);
    const MelCepstrumOptions opt;
    const FeatureSequence s = extract_mel_cepstrum(w, opt);
    REQUIRE(s.frames() == 1);

    // Oracle: peak bin of the windowed frame's direct DFT, mapped through the warp.
    const auto win = hann_window(1024);
    std::vector<cplx> frame(1024);
    for (std::size_t i = 0; i < 1024; ++i) frame[i] = w.samples[i] * win[i];
    const auto spec = brute_dft(frame);
    std::size_t peak = 0;
    for (std::size_t k = 1; k <= 512; ++k) {
      if (std::abs(spec[k]) > std::abs(spec[peak])) peak = k;
    }
    const double expected = warp_frequency(2 * kPi * peak / 1024.0, opt.alpha);

    std::vector<double> c(s.values.begin(), s.values.end());
    double best = 0, best_val = -1e300;
    for (int j = 0; j <= 4000; ++j) {
      const double om = kPi * j / 4000.0;
      const double v = cepstral_envelope(c, om);
      if (v > best_val) {
        best_val = v;
        best = om;
      }
    }
    // Resolution of a 40-term cosine series is about pi / 40.
    CHECK(std::abs(best - expected) < kPi / 40);
  }

  SECTION("warp inverse") {
    for (double om : {0.0, 0.3, 1.0, 2.5, kPi}) CHECK(unwarp_frequency(warp_frequency(om, 0.455), 0.455) == Approx(om).margin(1e-12));
  }
}

TEST_CASE("modulation spectrum", "[dsp][ms]") {
  SECTION("constant sequence without mean removal puts all power at bin 0") {
    // Unpadded, so the box does not spread into a sinc.
    const ModulationSpectrum ms = modulation_spectrum(sequence({std::vector<double>(512, 2.0)}), 512, false);
    CHECK(ms.at(0, 0) == Approx(std::log10(1024.0 * 1024.0)).epsilon(1e-12));
    for (std::size_t k = 1; k < ms.bins(); ++k) REQUIRE(ms.at(0, k) <= std::log10(1e-12) + 1e-9);
  }

  SECTION("cosine trajectory peaks at k * fft / T") {
    const std::size_t fft = 8192;
    for (std::size_t t_len : {256u, 512u, 1024u}) {
      for (std::size_t k : {1u, 5u, 17u, 60u}) {
        std::vector<double> x(t_len);
        for (std::size_t t = 0; t < t_len; ++t) x[t] = std::cos(2 * kPi * k * t / t_len);
        const ModulationSpectrum ms = modulation_spectrum(sequence({x}), fft);
        const std::size_t step = fft / t_len, want = k * step;
        INFO("T=" << t_len << " k=" << k);
        // On the unpadded DFT grid the cosine occupies a single bin of magnitude T/2.
        std::size_t peak = 0;
        for (std::size_t b = step; b < ms.bins(); b += step) {
          if (ms.at(0, b) > ms.at(0, peak)) peak = b;
        }
        CHECK(peak == want);
        CHECK(ms.at(0, want) == Approx(std::log10(t_len * t_len / 4.0)).epsilon(1e-9));
        for (std::size_t b = 0; b < ms.bins(); b += step) {
          if (b != want) REQUIRE(ms.at(0, b) < ms.at(0, want) - 12);
        }
        // Between grid points the negative-frequency image can tilt the
        // interpolated lobe, but its maximum stays inside the main lobe.
        std::size_t fine = 0;
        for (std::size_t b = 1; b < ms.bins(); ++b) {
          if (ms.at(0, b) > ms.at(0, fine)) fine = b;
        }
        CHECK(fine + step > want);
        CHECK(fine < want + step);
      }
    }
  }

  SECTION("Parseval over the padded transform") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t t_len = 50 + 37 * trial;
      std::vector<double> x(t_len);
      for (auto& v : x) v = rng.normal();
      const std::size_t fft = 2048;
      const auto p = modulation_power(sequence({x}), fft, false);
      double spectral = p.front() + p.back();
      for (std::size_t k = 1; k + 1 < p.size(); ++k) spectral += 2 * p[k];
      double energy = 0;
      for (double v : x) energy += v * v;
      CHECK(spectral == Approx(fft * energy).epsilon(1e-6));
    }
  }

  SECTION("doubling the transform keeps the original bins at even indices") {
    Rng rng(4);
    std::vector<double> x(300);
    for (auto& v : x) v = rng.normal();
    const auto a = modulation_spectrum(sequence({x}), 1024);
    const auto b = modulation_spectrum(sequence({x}), 2048);
    for (std::size_t k = 0; k < a.bins(); ++k) REQUIRE(b.at(0, 2 * k) == Approx(a.at(0, k)).margin(1e-9));
  }

  SECTION("low-pass filtering does not raise the high band") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> x(400), y(400);
      for (auto& v : x) v = rng.normal();
      for (std::size_t t = 0; t < x.size(); ++t) {
        double acc = 0;
        int n = 0;
        for (int j = -4; j <= 4; ++j) {
          const auto i = static_cast<std::ptrdiff_t>(t) + j;
          if (i >= 0 && i < 400) {
            acc += x[i];
            ++n;
          }
        }
        y[t] = acc / n;
      }
      const auto mx = modulation_spectrum(sequence({x}), 8192);
      const auto my = modulation_spectrum(sequence({y}), 8192);
      // A 9-tap box passes little above a fifth of the band.
      CHECK(band_mean(my, 2000, 4097) < band_mean(mx, 2000, 4097));
      CHECK(global_variance(sequence({y}))[0] < global_variance(sequence({x}))[0]);
    }
  }

  SECTION("sequences longer than the transform are rejected") {
    CHECK_THROWS_AS(modulation_spectrum(sequence({std::vector<double>(600, 1.0)}), 512), std::invalid_argument);
  }
}

TEST_CASE("modulation spectrum averaging and distance", "[dsp][distance]") {
  Rng rng(6);
  const ModulationSpectrum a = random_ms(rng, 3, 8192);

  CHECK(average_modulation_spectrum({a}) == a);
  CHECK(average_modulation_spectrum({a, a}) == a);
  CHECK(first_k_bins(a).size() == 3000);
  CHECK(first_k_bins(a, 1000)[1000] == a.at(1, 0));
  CHECK_THROWS_AS(average_modulation_spectrum({a, random_ms(rng, 2, 8192)}), std::invalid_argument);
  CHECK_THROWS_AS(first_k_bins(a, 5000), std::invalid_argument);

  CHECK(ms_distance(a, a) == 0.0);
  ModulationSpectrum b = a;
  for (auto& v : b.values) v += 1.0;
  CHECK(ms_distance(a, b) == Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(ms_distance(a, random_ms(rng, 3, 4096)), std::invalid_argument);

  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_ms(rng, 2, 2048), y = random_ms(rng, 2, 2048), z = random_ms(rng, 2, 2048);
    CHECK(ms_distance(x, z, 1000) <= ms_distance(x, y, 1000) + ms_distance(y, z, 1000) + 1e-12);
  }

  SECTION("band geometry") {
    CHECK(modulation_bin(10.0, 0.005, 8192) == 410);
    CHECK(band_mean(b, 0, 10) == Approx(band_mean(a, 0, 10) + 1.0).epsilon(1e-12));
  }
}

TEST_CASE("global variance", "[dsp][gv]") {
  CHECK(global_variance(sequence({{3, 3, 3}}))[0] == 0.0);
  CHECK(global_variance(sequence({{0, 2}}))[0] == 1.0);
  CHECK_THROWS_AS(global_variance(sequence({{1}})), std::invalid_argument);
}

TEST_CASE("normalization", "[dsp][norm]") {
  Waveform w;
  w.sample_rate = 22050;
  w.samples = {1, 3};
  const NormStats s = compute_stats(std::vector<Waveform>{w});
  CHECK(s.mean == 2.0);
  CHECK(s.std == 1.0);
  CHECK(normalize(w, s).samples == std::vector<double>{-1, 1});

  Rng rng(7);
  std::vector<Waveform> corpus(3);
  for (auto& c : corpus) {
    c.sample_rate = 22050;
    c.samples.resize(2000);
    for (auto& v : c.samples) v = 0.3 + 0.05 * rng.normal();
  }
  const NormStats cs = compute_stats(corpus);
  std::vector<Waveform> normed;
  for (const auto& c : corpus) normed.push_back(normalize(c, cs));
  const NormStats after = compute_stats(normed);
  CHECK(std::abs(after.mean) < 1e-6);
  CHECK(std::abs(after.std * after.std - 1.0) < 1e-6);
  for (std::size_t i = 0; i < 2000; ++i) REQUIRE(std::abs(denormalize(normed[0], cs).samples[i] - corpus[0].samples[i]) < 1e-6);

  Waveform silent;
  silent.sample_rate = 22050;
  silent.samples.assign(10, 0.25);
  CHECK_THROWS_AS(compute_stats(std::vector<Waveform>{silent}), std::invalid_argument);
  CHECK_THROWS_AS(normalize(w, NormStats{0, 0}), std::invalid_argument);
}

TEST_CASE("wav round trip", "[dsp][wav]") {
  Waveform sq;
  sq.sample_rate = 22050;
  for (int i = 0; i < 400; ++i) sq.samples.push_back((i / 50) % 2 ? -1.0 : 32767.0 / 32768.0);
  std::size_t clipped = 1;
  const std::string bytes = encode_wav(sq, &clipped);
  CHECK(clipped == 0);
  const Waveform back = parse_wav(std::vector<unsigned char>(bytes.begin(), bytes.end()));
  CHECK(back.sample_rate == 22050);
  REQUIRE(back.size() == sq.size());
  for (std::size_t i = 0; i < sq.size(); ++i) REQUIRE(std::abs(back.samples[i] - sq.samples[i]) <= 1.0 / 32768);

  SECTION("full scale +1 clips and is counted") {
    Waveform w;
    w.sample_rate = 16000;
    w.samples = {1.0, 0.0, -1.5};
    encode_wav(w, &clipped);
    CHECK(clipped == 2);
  }

  SECTION("malformed files are rejected with a reason") {
    std::vector<unsigned char> b(bytes.begin(), bytes.end());
    std::vector<unsigned char> cut(b.begin(), b.end() - 10);
    CHECK_THROWS_WITH(parse_wav(cut), Catch::Matchers::ContainsSubstring("truncated"));
    std::vector<unsigned char> stereo = b;
    stereo[22] = 2;
    CHECK_THROWS_WITH(parse_wav(stereo), Catch::Matchers::ContainsSubstring("mono"));
    std::vector<unsigned char> bits8 = b;
    bits8[34] = 8;
    CHECK_THROWS_WITH(parse_wav(bits8), Catch::Matchers::ContainsSubstring("16-bit"));
    std::vector<unsigned char> junk = b;
    junk[0] = 'X';
    CHECK_THROWS_WITH(parse_wav(junk), Catch::Matchers::ContainsSubstring("RIFF"));
  }
}
