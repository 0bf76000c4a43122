#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "s2n/dataio.hpp"

using namespace s2n;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("s2n_dataio_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Waveform ramp(std::size_t n, std::uint32_t rate = 22050, double scale = 1e-4) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = scale * static_cast<double>(i % 5000) - 0.25;
  return w;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

DomainCorpus corpus_of(std::vector<Waveform> train, Domain d = Domain::X) {
  DomainCorpus c;
  c.domain = d;
  c.train = std::move(train);
  c.refresh_stats();
  return c;
}

// Independent recomputation of the recorded gap: per-utterance MS, plain
// averaging, and the RMS-over-bins distance written out longhand.
double oracle_gap(const std::vector<const Waveform*>& a, const std::vector<const Waveform*>& b, std::size_t k) {
  auto avg = [](const std::vector<const Waveform*>& ws) {
    std::vector<double> acc;
    std::size_t dims = 0, bins = 0;
    for (const Waveform* w : ws) {
      const ModulationSpectrum m = modulation_spectrum(extract_mel_cepstrum(*w), 8192, true);
      dims = m.dims;
      bins = m.bins();
      if (acc.empty()) acc.assign(m.values.size(), 0.0);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.values[i];
    }
    for (double& v : acc) v /= static_cast<double>(ws.size());
    return std::make_tuple(acc, dims, bins);
  };
  const auto [va, dims, bins] = avg(a);
  const auto vb = std::get<0>(avg(b));
  double total = 0;
  for (std::size_t d = 0; d < dims; ++d) {
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) s += std::pow(va[d * bins + i] - vb[d * bins + i], 2);
    total += std::sqrt(s / k);
  }
  return total / dims;
}

}  // namespace

TEST_CASE("manifest and corpus loading", "[dataio][manifest]") {
  TempDir dir("manifest");
  write_wav(ramp(5000), (dir.path / "a.wav").string());
  write_wav(ramp(6000), (dir.path / "b.wav").string());
  write_wav(ramp(6000, 16000), (dir.path / "c16k.wav").string());

  SECTION("two files make a corpus of two") {
    write_text(dir.path / "m.tsv", "path\tdomain\tsplit\na.wav\tX\ttrain\nb.wav\tX\theldout\n");
    const DomainCorpus c = load_corpus((dir.path / "m.tsv").string(), Domain::X);
    CHECK(c.size() == 2);
    CHECK(c.train.size() == 1);
    CHECK(c.heldout.size() == 1);
    CHECK(c.sample_rate() == 22050);
  }

  SECTION("stats come from the train split only") {
    write_text(dir.path / "m.tsv", "a.wav\tX\ttrain\nb.wav\tX\theldout\n");
    const DomainCorpus c = load_corpus((dir.path / "m.tsv").string(), Domain::X);
    const NormStats want = compute_stats(std::vector<Waveform>{read_wav((dir.path / "a.wav").string())});
    CHECK(c.stats == want);
  }

  SECTION("mixed sample rates name both rates") {
    write_text(dir.path / "m.tsv", "a.wav\tX\ttrain\nc16k.wav\tX\ttrain\n");
    CHECK_THROWS_WITH(load_corpus((dir.path / "m.tsv").string(), Domain::X),
                      Catch::Matchers::ContainsSubstring("22050") && Catch::Matchers::ContainsSubstring("16000"));
    write_text(dir.path / "m.tsv", "a.wav\tX\ttrain\nc16k.wav\tY\ttrain\n");
    CHECK_THROWS_WITH(load_corpora((dir.path / "m.tsv").string()),
                      Catch::Matchers::ContainsSubstring("22050") && Catch::Matchers::ContainsSubstring("16000"));
  }

  SECTION("missing files, empty train split and bad rows are rejected") {
    write_text(dir.path / "m.tsv", "nope.wav\tX\ttrain\n");
    CHECK_THROWS_WITH(load_corpus((dir.path / "m.tsv").string(), Domain::X), Catch::Matchers::ContainsSubstring("nope.wav"));
    write_text(dir.path / "m.tsv", "a.wav\tX\theldout\n");
    CHECK_THROWS_WITH(load_corpus((dir.path / "m.tsv").string(), Domain::X), Catch::Matchers::ContainsSubstring("empty"));
    write_text(dir.path / "m.tsv", "a.wav\tZ\ttrain\n");
    CHECK_THROWS_AS(load_corpus((dir.path / "m.tsv").string(), Domain::X), DataError);
    write_text(dir.path / "m.tsv", "a.wav\tX\n");
    CHECK_THROWS_WITH(load_corpus((dir.path / "m.tsv").string(), Domain::X), Catch::Matchers::ContainsSubstring(":1:"));
  }

  SECTION("manifest round trip") {
    const std::vector<ManifestEntry> rows{{"a.wav", Domain::X, false}, {"sub/b.wav", Domain::Y, true}};
    std::stringstream ss;
    write_manifest(ss, rows);
    const auto back = parse_manifest(ss, "mem");
    REQUIRE(back.size() == 2);
    CHECK(back[1].path == "sub/b.wav");
    CHECK(back[1].domain == Domain::Y);
    CHECK(back[1].heldout);
  }
}

TEST_CASE("unpaired batch sampling", "[dataio][sampling]") {
  const DomainCorpus x = corpus_of({ramp(5000), ramp(7000)});
  DomainCorpus y = corpus_of({ramp(4200, 22050, 3e-5), ramp(9000, 22050, 3e-5)}, Domain::Y);

  SECTION("shapes") {
    Rng rng(1);
    const auto [bx, by] = sample_unpaired_batch(x, y, 32, 4096, rng);
    CHECK(bx.shape() == Shape{32, 1, 4096});
    CHECK(by.shape() == Shape{32, 1, 4096});
  }

  SECTION("same stream state gives identical batches") {
    Rng a(9), b(9);
    const auto [ax, ay] = sample_unpaired_batch(x, y, 4, 1024, a);
    const auto [bx, by] = sample_unpaired_batch(x, y, 4, 1024, b);
    CHECK(ax == bx);
    CHECK(ay == by);
  }

  SECTION("crops are normalized with their own domain's stats") {
    Rng rng(2);
    const Crop c = draw_crop(x, 1024, rng);
    Rng again(2);
    const Tensor<float> b = sample_batch(x, 1, 1024, again);
    for (std::size_t i = 0; i < 1024; ++i) {
      REQUIRE(b[i] == static_cast<float>((x.train[c.utterance].samples[c.offset + i] - x.stats.mean) / x.stats.std));
    }
  }

  SECTION("segment longer than the shortest waveform is rejected") {
    Rng rng(3);
    CHECK_THROWS_WITH(sample_batch(y, 2, 4201, rng), Catch::Matchers::ContainsSubstring("4200"));
    CHECK_NOTHROW(sample_batch(y, 2, 4200, rng));
  }

  SECTION("offsets pass a chi-square uniformity test") {
    const DomainCorpus one = corpus_of({ramp(4096 + 999)});
    Rng rng(4);
    std::vector<double> counts(10, 0.0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[draw_crop(one, 4096, rng).offset / 100] += 1;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - draws / 10.0) * (c - draws / 10.0) / (draws / 10.0);
    CHECK(chi2 < 21.666);  // 1% critical value, 9 degrees of freedom
    // start, middle and end regions are all reached
    CHECK(counts.front() > 0);
    CHECK(counts[5] > 0);
    CHECK(counts.back() > 0);
  }
}

TEST_CASE("toy domains", "[dataio][toy]") {
  ToyDomainSpec small;
  small.utterances = 12;
  small.seconds = 0.5;

  SECTION("same seed gives bit-identical corpora") {
    const ToyCorpora a = make_toy_domains(small), b = make_toy_domains(small);
    for (std::size_t i = 0; i < a.x.train.size(); ++i) {
      REQUIRE(a.x.train[i].samples == b.x.train[i].samples);
      REQUIRE(a.y.train[i].samples == b.y.train[i].samples);
    }
    CHECK(a.gap.ms_distance == b.gap.ms_distance);
    ToyDomainSpec other = small;
    other.seed = 2;
    CHECK(make_toy_domains(other).x.train[0].samples != a.x.train[0].samples);
  }

  SECTION("domains are unpaired and split disjointly") {
    const ToyCorpora t = make_toy_domains(small);
    CHECK(t.x.train.size() + t.x.heldout.size() == 12);
    CHECK(t.x.heldout.size() == small.heldout_count());
    CHECK(t.x.train[0].samples != t.y.train[0].samples);
    CHECK(t.x.stats == compute_stats(t.x.train));
    ToyDomainSpec quiet = small;
    quiet.noise_level = 0;
    for (const auto& w : make_toy_domains(quiet).y.train) {
      double peak = 0;
      for (double v : w.samples) peak = std::max(peak, std::abs(v));
      CHECK(peak == Approx(0.5).margin(1.0 / 32768));
    }
  }

  SECTION("smoothing cannot add detail-band power") {
    // Paired draws: the same stream with and without the envelope smoother.
    for (double level : {0.0, 1.0}) {
      ToyDomainSpec spec = small;
      spec.detail_level = level;
      for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        Rng a(seed), b(seed);
        const Waveform smooth = detail::toy_utterance(spec, a, true);
        const Waveform raw = detail::toy_utterance(spec, b, false);
        const double bx = band_mean(modulation_spectrum(extract_mel_cepstrum(smooth)), 245, 817);
        const double by = band_mean(modulation_spectrum(extract_mel_cepstrum(raw)), 245, 817);
        INFO("level " << level << " seed " << seed);
        CHECK(bx <= by + 1e-3);
        if (level > 0) CHECK(bx < by);
      }
    }
  }

  SECTION("degenerate specs are rejected") {
    ToyDomainSpec bad = small;
    bad.harmonics = 0;
    CHECK_THROWS_AS(make_toy_domains(bad), std::invalid_argument);
    bad = small;
    bad.f0_max = 2000;
    CHECK_THROWS_AS(make_toy_domains(bad), std::invalid_argument);
    bad = small;
    bad.noise_level = -0.01;
    CHECK_THROWS_AS(make_toy_domains(bad), std::invalid_argument);
  }
}

TEST_CASE("default toy domain gap", "[dataio][toy][gap]") {
  const ToyCorpora t = make_toy_domains(ToyDomainSpec{});
  CHECK(t.x.size() == 200);
  CHECK(t.y.size() == 200);
  CHECK(t.gap.detail_band_y > t.gap.detail_band_x);
  CHECK(t.gap.detail_lo == 245);  // 6 Hz at 110-sample shift, 8192 points
  CHECK(t.gap.detail_hi == 817);  // 20 Hz

  // Frozen at generation for seed 1.
  CHECK(t.gap.ms_distance == Approx(0.22611629960947247).epsilon(1e-12));
  CHECK(t.gap.ms_distance_heldout == Approx(0.28414074586214166).epsilon(1e-12));
  CHECK(t.gap.detail_band_x == Approx(-0.062459790189797186).epsilon(1e-12));
  CHECK(t.gap.detail_band_y == Approx(0.21911628076987916).epsilon(1e-12));

  CHECK(oracle_gap(heldout_waveforms(t.x), heldout_waveforms(t.y), 1000) ==
        Approx(t.gap.ms_distance_heldout).epsilon(1e-12));
}

TEST_CASE("aligned pairs for the conditional baseline", "[dataio][pairs]") {
  ToyDomainSpec spec;
  spec.utterances = 6;
  spec.seconds = 0.5;
  const auto [noisy, clean] = make_toy_pairs(spec, 0.05);
  REQUIRE(noisy.train.size() == clean.train.size());
  REQUIRE(noisy.heldout.size() == clean.heldout.size());

  SECTION("the corruption is additive noise of the requested size") {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t u = 0; u < clean.train.size(); ++u) {
      REQUIRE(noisy.train[u].size() == clean.train[u].size());
      for (std::size_t i = 0; i < clean.train[u].size(); ++i) {
        const double d = noisy.train[u].samples[i] - clean.train[u].samples[i];
        acc += d * d;
        ++n;
      }
    }
    // 16-bit rounding adds about 1e-5 of std on top
    CHECK(std::sqrt(acc / static_cast<double>(n)) == Approx(0.05).epsilon(0.03));
  }

  SECTION("both sides draw the same crop") {
    DomainCorpus twin = clean;
    twin.domain = Domain::X;
    Rng r1(4), r2(4);
    const auto [a, b] = sample_paired_batch(twin, clean, 5, 1000, r1);
    CHECK(a == b);
    // the stream advances exactly as for one unpaired draw
    sample_batch(twin, 5, 1000, r2);
    CHECK(r1 == r2);
  }

  SECTION("unequal lengths are refused") {
    DomainCorpus cut = clean;
    cut.train[2].samples.pop_back();
    Rng rng(1);
    CHECK_THROWS_AS(sample_paired_batch(noisy, cut, 2, 100, rng), DataError);
    CHECK_THROWS_AS(make_toy_pairs(spec, 0.0), std::invalid_argument);
  }
}
