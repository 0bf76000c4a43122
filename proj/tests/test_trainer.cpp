#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <vector>

#include "s2n/trainer.hpp"

using namespace s2n;
using Catch::Approx;

namespace {

GeneratorSpec tiny_generator() {
  GeneratorSpec s;
  s.downsample = {{8, 6, 4}, {4, 8, 2}};
  s.residual = {{3, 8}};
  s.upsample = {{3, 6, 2}, {3, 4, 4}};
  s.output_kernel = 5;
  return s;
}

DiscriminatorSpec tiny_discriminator(std::size_t width) {
  return DiscriminatorSpec{1, width, {{7, 6, 4}, {5, 8, 4}}};
}

TrainingConfig tiny_config(std::uint64_t iters = 8) {
  TrainingConfig c;
  c.batch_size = 2;
  c.segment_length = 256;
  c.total_iters = iters;
  c.lr_hold_iters = iters / 2;
  c.lr_decay_iters = iters - iters / 2;
  c.lambda_id_hold_iters = 2;
  c.lambda_id_decay_iters = 2;
  return c;
}

ToyCorpora tiny_toy() {
  ToyDomainSpec s;
  s.utterances = 6;
  s.seconds = 0.25;
  return make_toy_domains(s);
}

template <class Net>
std::vector<Tensor<float>> snapshot(const Net& n) {
  std::vector<Tensor<float>> out;
  for (const auto& p : n.parameters().all()) out.push_back(p.value);
  return out;
}

bool same(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i].shape() == b[i].shape()) ||
        std::memcmp(a[i].data().data(), b[i].data().data(), a[i].size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

Tensor<float> offset_batch(Rng& rng, Shape s, double dc) {
  Tensor<float> t(s);
  for (auto& v : t.data()) v = static_cast<float>(dc + 0.1 * rng.normal());
  return t;
}

std::string trace_of(CycleGanState& s, const ToyCorpora& toy, const TrainingConfig& cfg, std::uint64_t stop = 0) {
  std::ostringstream out;
  TrainCallbacks cb;
  cb.stop_after = stop;
  cb.on_step = [&](std::uint64_t it, const LossReport& r) { out << trace_row(it, r, cfg); };
  train(s, toy.x, toy.y, cfg, cb);
  return out.str();
}

}  // namespace

TEST_CASE("adam update", "[trainer][adam]") {
  const AdamHyper h{0.1, 0.5, 0.99, 1e-8};

  SECTION("first step moves by about -lr * sign(g)") {
    Tensor<double> p = Tensor<double>::scalar(0.0);
    AdamMoments<double> m;
    adam_step(p, Tensor<double>::scalar(1.0), m, 1, h);
    // m = 0.5, v = 0.01; corrected: m/0.5 = 1, v/0.01 = 1; step = 0.1 * 1 / (1 + 1e-8).
    CHECK(p[0] == Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(m.m[0] == 0.5);
    CHECK(m.v[0] == Approx(0.01).epsilon(1e-15));
  }

  SECTION("zero learning rate leaves parameters unchanged") {
    Tensor<double> p = Tensor<double>::vector({0.3, -0.7});
    const Tensor<double> before = p;
    AdamMoments<double> m;
    for (std::uint64_t t = 1; t <= 5; ++t) adam_step(p, Tensor<double>::vector({1.0, -2.0}), m, t, AdamHyper{0.0});
    CHECK(p == before);
  }

  SECTION("zero gradient decays the moments and keeps parameters") {
    Tensor<double> p = Tensor<double>::vector({0.3});
    AdamMoments<double> m{Tensor<double>::vector({0.4}), Tensor<double>::vector({0.2})};
    adam_step(p, Tensor<double>::vector({0.0}), m, 3, AdamHyper{0.0, 0.5, 0.99});
    CHECK(m.m[0] == Approx(0.2));
    CHECK(m.v[0] == Approx(0.198));
    CHECK(p[0] == 0.3);
  }

  SECTION("shape mismatch is rejected") {
    Tensor<double> p(Shape{1, 1, 3});
    AdamMoments<double> m;
    CHECK_THROWS_AS(adam_step(p, Tensor<double>(Shape{1, 1, 2}), m, 1, h), ShapeError);
  }
}

TEST_CASE("schedules", "[trainer][schedule]") {
  CHECK(lr_at(0, 0.0002, 250000, 250000) == 0.0002);
  CHECK(lr_at(375000, 0.0002, 250000, 250000) == Approx(0.0001).epsilon(1e-12));
  CHECK(lr_at(500000, 0.0002, 250000, 250000) == 0.0);
  CHECK(lambda_id_at(0, 5, 20000, 20000) == 5.0);
  CHECK(lambda_id_at(30000, 5, 20000, 20000) == Approx(2.5).epsilon(1e-12));
  CHECK(lambda_id_at(40000, 5, 20000, 20000) == 0.0);

  SECTION("continuous and non-increasing") {
    double prev = lr_at(0, 1.0, 100, 50);
    for (std::uint64_t t = 1; t <= 200; ++t) {
      const double v = lr_at(t, 1.0, 100, 50);
      CHECK(v <= prev);
      CHECK(prev - v <= 1.0 / 50 + 1e-15);
      prev = v;
    }
  }

  SECTION("desk preset scales the published schedule") {
    const TrainingConfig d = TrainingConfig::desk();
    CHECK(d.total_iters == 5000);
    CHECK(d.lr_hold_iters == 2500);
    CHECK(d.lambda_id_hold_iters + d.lambda_id_decay_iters == 800);  // 8% of the run each way, like 40k of 500k
    CHECK(d.lambda_id(0) == 5.0);
    CHECK(d.lambda_id(800) == 0.0);
    CHECK(d.lr_generator == 2 * d.lr_discriminator);
    CHECK(d.beta1 == 0.5);
  }

  SECTION("config validation") {
    TrainingConfig c = TrainingConfig::desk();
    c.lr_hold_iters = 100;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainingConfig::desk();
    c.beta2 = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainingConfig::desk();
    c.lr_generator = -1e-4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
}

TEST_CASE("train_step", "[trainer][step]") {
  Rng rng(1);
  TrainingConfig cfg = tiny_config();
  CycleGanState s(tiny_generator(), tiny_discriminator(256), 3);
  const Shape bs{2, 1, 256};

  SECTION("iteration advances by one") {
    train_step(s, offset_batch(rng, bs, 0.5), offset_batch(rng, bs, -0.5), cfg);
    CHECK(s.iteration == 1);
    train_step(s, offset_batch(rng, bs, 0.5), offset_batch(rng, bs, -0.5), cfg);
    CHECK(s.iteration == 2);
  }

  SECTION("report total matches the weighted sum") {
    const LossReport r = train_step(s, offset_batch(rng, bs, 0.5), offset_batch(rng, bs, -0.5), cfg);
    CHECK(r.total == Approx(full_objective(r, cfg.lambda_cyc, cfg.lambda_id(0)).total).epsilon(1e-6));
    for (double v : {r.adversarial_g_xy, r.adversarial_g_yx, r.disc_x, r.disc_y, r.cycle, r.identity}) CHECK(v >= 0.0);
  }

  SECTION("zero rates and weights make the step a pure evaluation") {
    cfg.lambda_cyc = 0;
    cfg.lambda_id_initial = 0;
    cfg.lr_generator = 0;
    cfg.lr_discriminator = 0;
    const auto g1 = snapshot(s.g_xy), g2 = snapshot(s.g_yx), d1 = snapshot(s.d_x), d2 = snapshot(s.d_y);
    train_step(s, offset_batch(rng, bs, 0.5), offset_batch(rng, bs, -0.5), cfg);
    CHECK(same(g1, snapshot(s.g_xy)));
    CHECK(same(g2, snapshot(s.g_yx)));
    CHECK(same(d1, snapshot(s.d_x)));
    CHECK(same(d2, snapshot(s.d_y)));
  }

  SECTION("each update touches only its own networks") {
    TrainingConfig only_d = cfg;
    only_d.lr_generator = 0;
    const auto g1 = snapshot(s.g_xy), g2 = snapshot(s.g_yx), d1 = snapshot(s.d_x);
    train_step(s, offset_batch(rng, bs, 0.5), offset_batch(rng, bs, -0.5), only_d);
    CHECK(same(g1, snapshot(s.g_xy)));
    CHECK(same(g2, snapshot(s.g_yx)));
    CHECK_FALSE(same(d1, snapshot(s.d_x)));

    TrainingConfig only_g = cfg;
    only_g.lr_discriminator = 0;
    const auto d1b = snapshot(s.d_x), d2b = snapshot(s.d_y), g1b = snapshot(s.g_xy);
    train_step(s, offset_batch(rng, bs, 0.5), offset_batch(rng, bs, -0.5), only_g);
    CHECK(same(d1b, snapshot(s.d_x)));
    CHECK(same(d2b, snapshot(s.d_y)));
    CHECK_FALSE(same(g1b, snapshot(s.g_xy)));
  }

  SECTION("discriminator losses fall on separable domains") {
    cfg.lambda_cyc = 0;
    cfg.lambda_id_initial = 0;
    cfg.lr_generator = 0;
    cfg.total_iters = cfg.lr_hold_iters = 1000;
    cfg.lr_decay_iters = 0;
    const Tensor<float> bx = offset_batch(rng, bs, 0.5), by = offset_batch(rng, bs, -0.5);
    std::vector<double> dx, dy;
    for (int i = 0; i < 50; ++i) {
      const LossReport r = train_step(s, bx, by, cfg);
      dx.push_back(r.disc_x);
      dy.push_back(r.disc_y);
    }
    for (std::size_t i = 1; i < dx.size(); ++i) {
      INFO("step " << i);
      CHECK(dx[i] < dx[i - 1]);
      CHECK(dy[i] < dy[i - 1]);
    }
  }

  SECTION("NaN aborts with the first offending component") {
    s.d_y.parameters().find("fc.b")->value.fill(std::nanf(""));
    CHECK_THROWS_WITH(train_step(s, offset_batch(rng, bs, 0.5), offset_batch(rng, bs, -0.5), cfg),
                      Catch::Matchers::ContainsSubstring("disc_y"));
  }

  SECTION("wrong batch shape is rejected") {
    CHECK_THROWS_AS(train_step(s, Tensor<float>(Shape{2, 1, 128}), offset_batch(rng, bs, 0), cfg), ShapeError);
  }
}

TEST_CASE("training loop determinism and resume", "[trainer][determinism]") {
  const ToyCorpora toy = tiny_toy();
  const TrainingConfig cfg = tiny_config(8);

  CycleGanState a(tiny_generator(), tiny_discriminator(256), cfg.seed);
  CycleGanState b(tiny_generator(), tiny_discriminator(256), cfg.seed);
  const std::string ta = trace_of(a, toy, cfg);
  CHECK(ta == trace_of(b, toy, cfg));
  CHECK(a.iteration == 8);

  SECTION("resume from a checkpoint reproduces the uninterrupted run") {
    CycleGanState first(tiny_generator(), tiny_discriminator(256), cfg.seed);
    const std::string head = trace_of(first, toy, cfg, 4);
    const std::string bytes = encode_checkpoint(make_checkpoint(first, toy.x.stats, toy.y.stats, "cfg"));

    CycleGanState resumed(tiny_generator(), tiny_discriminator(256), 999);
    restore_checkpoint(resumed, decode_checkpoint(bytes));
    CHECK(resumed.iteration == 4);
    CHECK(resumed.rng == first.rng);
    CHECK(resumed.g_xy.parameters() == first.g_xy.parameters());
    CHECK(head + trace_of(resumed, toy, cfg) == ta);
  }

  SECTION("checkpoint keeps moments, stats and stream") {
    const CheckpointData c = decode_checkpoint(encode_checkpoint(make_checkpoint(a, toy.x.stats, toy.y.stats, "cfg")));
    CycleGanState back(tiny_generator(), tiny_discriminator(256), 5);
    restore_checkpoint(back, c);
    CHECK(back.d_y.parameters() == a.d_y.parameters());
    for (std::size_t i = 0; i < a.opt_g_yx.moments().size(); ++i) {
      CHECK(back.opt_g_yx.moments()[i].m == a.opt_g_yx.moments()[i].m);
      CHECK(back.opt_g_yx.moments()[i].v == a.opt_g_yx.moments()[i].v);
    }
    CHECK(checkpoint_stats(c, Domain::X).mean == toy.x.stats.mean);
    CHECK(checkpoint_stats(c, Domain::X).std == toy.x.stats.std);
    CHECK(checkpoint_stats(c, Domain::Y).std == toy.y.stats.std);
  }

  SECTION("a checkpoint for another architecture leaves the state untouched") {
    const CheckpointData c = make_checkpoint(a, toy.x.stats, toy.y.stats, "cfg");
    CycleGanState other(GeneratorSpec::compact(), tiny_discriminator(256), 2);
    const auto before = snapshot(other.g_xy);
    const std::uint64_t it = other.iteration;
    CHECK_THROWS_AS(restore_checkpoint(other, c), CheckpointError);
    CHECK(same(before, snapshot(other.g_xy)));
    CHECK(other.iteration == it);
  }
}

TEST_CASE("loss trace format", "[trainer][trace]") {
  std::ostringstream out;
  write_trace_header(out, TrainingConfig::paper());
  const std::string h = out.str();
  CHECK(h.find("# lr_generator=0.0002\n") != std::string::npos);
  CHECK(h.find("# lr_discriminator=0.0001\n") != std::string::npos);
  CHECK(h.find("# lr_hold_iters=250000\n") != std::string::npos);
  CHECK(h.find("# lr_decay_iters=250000\n") != std::string::npos);
  CHECK(h.find("# lambda_cyc=10\n") != std::string::npos);
  CHECK(h.find("# beta1=0.5\n# beta2=0.99\n") != std::string::npos);
  CHECK(h.find("# batch_size=32\n") != std::string::npos);

  LossReport r;
  r.total = 1.5;
  const std::string row = trace_row(1, r, TrainingConfig::paper());
  CHECK(row == "1\t0\t0\t0\t0\t0\t0\t1.5\t0.0002\t0.0001\t5\n");
}

TEST_CASE("conversion", "[trainer][convert]") {
  Rng rng(8);
  Waveform w;
  w.samples.resize(5000);
  for (auto& v : w.samples) v = 0.3 * rng.normal();
  const NormStats sx{0.01, 0.2}, sy{-0.02, 0.1};

  SECTION("identity preset round-trips within normalization tolerance") {
    const auto id = Generator<float>::identity(GeneratorSpec::identity());
    const Waveform out = convert_waveform(id, w, sx, sx);
    REQUIRE(out.size() == w.size());
    for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(std::abs(out.samples[i] - w.samples[i]) < 1e-4);
  }

  SECTION("any length converts to the same length") {
    const Generator<float> g(GeneratorSpec::compact(), 1);
    for (std::size_t n : {1u, 63u, 22050u, 88200u}) {
      Waveform in = w;
      in.samples.resize(n, 0.1);
      const Waveform out = convert_waveform(g, in, sx, sy);
      CHECK(out.size() == n);
      CHECK(out.sample_rate == in.sample_rate);
    }
  }

  SECTION("padding does not leak into the kept samples' length or rate") {
    const Generator<float> g(GeneratorSpec::compact(), 1);
    Waveform in = w;
    in.sample_rate = 16000;
    CHECK(convert_waveform(g, in, sx, sy).sample_rate == 16000);
  }
}

TEST_CASE("held-out cycle reconstruction", "[trainer][heldout]") {
  const ToyCorpora toy = tiny_toy();
  CycleGanState s(GeneratorSpec::identity(), tiny_discriminator(256), 1);
  s.g_xy = Generator<float>::identity(GeneratorSpec::identity());
  s.g_yx = Generator<float>::identity(GeneratorSpec::identity());
  CHECK(heldout_cycle_l1(s, toy.x, toy.y) == 0.0);
  CycleGanState r(tiny_generator(), tiny_discriminator(256), 1);
  CHECK(heldout_cycle_l1(r, toy.x, toy.y) > 0.0);
}

TEST_CASE("conditional baseline training", "[trainer][segan]") {
  ToyDomainSpec spec;
  spec.utterances = 6;
  spec.seconds = 0.5;
  const auto [noisy, clean] = make_toy_pairs(spec, 0.05);
  SeganGeneratorSpec gen;
  gen.encoder = {{4, 4, 2}, {4, 8, 2}};
  gen.noise_channels = 2;
  TrainingConfig cfg;
  cfg.batch_size = 2;
  cfg.segment_length = 256;
  cfg.total_iters = cfg.lr_hold_iters = 30;
  cfg.lr_decay_iters = 0;
  cfg.lr_generator = 1e-3;
  SeganState s(gen, DiscriminatorSpec{1, 256, {{5, 4, 4}}}, 3);
  const double before = segan_heldout_l1(s, noisy, clean);
  CHECK(segan_heldout_l1(s, noisy, clean) == before);
  CHECK_THROWS_AS(segan_train_step(s, Tensor<float>(Shape{2, 1, 256}), Tensor<float>(Shape{2, 1, 256}), cfg),
                  std::invalid_argument);
  cfg.lambda_segan = 100.0;
  for (int i = 0; i < 30; ++i) {
    auto [a, b] = sample_paired_batch(noisy, clean, cfg.batch_size, cfg.segment_length, s.rng);
    const SeganReport r = segan_train_step(s, a, b, cfg);
    CHECK(r.total == Approx(r.adversarial + 100.0 * r.l1).epsilon(1e-5));
  }
  CHECK(s.iteration == 30);
  CHECK(segan_heldout_l1(s, noisy, clean) < before);
}
