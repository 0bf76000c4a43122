#include <catch_amalgamated.hpp>

#include <cstring>
#include <vector>

#include "s2n/losses.hpp"
#include "s2n/nn.hpp"

using namespace s2n;

namespace {

template <class T>
Tensor<T> random_tensor(Rng& rng, Shape s, double scale = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(scale * rng.normal());
  return t;
}

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <class T>
void randomize(ParameterSet<T>& ps, Rng& rng, double scale) {
  for (auto& p : ps.all()) {
    for (auto& v : p.value.data()) v = static_cast<T>(scale * rng.normal());
  }
}

// Parameter count of a gated block, by hand: two (out, in, k) kernels, two
// bias vectors, instance-norm gain and bias.
std::size_t gated_block_total(std::size_t in, std::size_t out, std::size_t k) {
  return out * in * k * 2 + out * 2 + out * 2;
}

std::size_t generator_total(const GeneratorSpec& s) {
  std::size_t n = 0, ch = s.input_channels;
  for (const auto& d : s.downsample) {
    n += gated_block_total(ch, d.channels, d.kernel);
    ch = d.channels;
  }
  for (const auto& r : s.residual) n += gated_block_total(ch, r.channels, r.kernel);
  for (const auto& u : s.upsample) {
    n += gated_block_total(ch, u.channels * u.factor, u.kernel);
    ch = u.channels;
  }
  return n + s.input_channels * ch * s.output_kernel + s.input_channels;
}

// Small specs keep the gradient tests fast while covering every block type.
GeneratorSpec small_generator() {
  GeneratorSpec s;
  s.downsample = {{8, 6, 2}, {5, 8, 2}};
  s.residual = {{3, 8}, {3, 8}};
  s.upsample = {{3, 6, 2}, {3, 4, 2}};
  s.output_kernel = 5;
  return s;
}

}  // namespace

TEST_CASE("generator construction", "[nn][generator]") {
  SECTION("default desk spec preserves length 4096") {
    Generator<float> gen(GeneratorSpec::desk(), 1);
    Rng rng(1);
    const Tensor<float> y = gen.apply(random_tensor<float>(rng, {1, 1, 4096}));
    CHECK(y.shape() == Shape{1, 1, 4096});
  }

  SECTION("same seed gives bit-identical parameters") {
    Generator<float> a(GeneratorSpec::compact(), 7), b(GeneratorSpec::compact(), 7), c(GeneratorSpec::compact(), 8);
    CHECK(a.parameters() == b.parameters());
    CHECK_FALSE(a.parameters() == c.parameters());
  }

  SECTION("parameter counts") {
    CHECK(gated_conv_parameter_count(1, 4, 3) == 32);
    GeneratorSpec one;
    one.downsample = {{3, 4, 1}};
    one.upsample = {};
    one.output_kernel = 1;
    Generator<double> gen(one, 0);
    std::size_t conv = 0;
    for (const char* name : {"down0.w", "down0.v", "down0.b", "down0.c"}) conv += gen.parameters().find(name)->value.size();
    CHECK(conv == 32);
    for (const auto& spec : {GeneratorSpec::desk(), GeneratorSpec::compact(), small_generator()}) {
      CHECK(Generator<float>(spec, 3).parameter_count() == generator_total(spec));
    }
    CHECK(Generator<float>(GeneratorSpec::compact(), 1).parameter_count() == 98493);
  }

  SECTION("stride and shuffle products must agree") {
    GeneratorSpec bad = GeneratorSpec::desk();
    bad.upsample.pop_back();
    CHECK_THROWS_AS(Generator<float>(bad, 1), SpecError);
    GeneratorSpec res = GeneratorSpec::desk();
    res.residual[1].channels = 32;
    CHECK_THROWS_AS(Generator<float>(res, 1), SpecError);
  }
}

TEST_CASE("generator forward", "[nn][generator]") {
  Generator<float> gen(GeneratorSpec::compact(), 2);
  Rng rng(2);

  SECTION("arbitrary lengths keep their shape") {
    for (std::size_t w : {1024u, 4096u, 16384u}) {
      CHECK(gen.apply(random_tensor<float>(rng, {1, 1, w})).shape() == Shape{1, 1, w});
    }
  }

  SECTION("indivisible width names the divisor") {
    CHECK_THROWS_WITH(gen.apply(Tensor<float>(Shape{1, 1, 1000})), Catch::Matchers::ContainsSubstring("64"));
  }

  SECTION("deterministic") {
    const Tensor<float> x = random_tensor<float>(rng, {2, 1, 4096});
    CHECK(bit_equal(gen.apply(x), gen.apply(x)));
  }

  SECTION("zeroed output layer emits its bias") {
    Generator<float> z(GeneratorSpec::compact(), 3);
    z.parameters().find("out.w")->value.fill(0.0f);
    z.parameters().find("out.b")->value.fill(0.375f);
    for (int trial = 0; trial < 3; ++trial) {
      const Tensor<float> y = z.apply(random_tensor<float>(rng, {1, 1, 1024}));
      for (float v : y.data()) REQUIRE(v == 0.375f);
    }
  }

  SECTION("round trip through two generators keeps the shape") {
    Generator<float> back(GeneratorSpec::compact(), 4);
    const Tensor<float> x = random_tensor<float>(rng, {3, 1, 2048});
    CHECK(back.apply(gen.apply(x)).shape() == x.shape());
  }

  SECTION("identity preset passes input through") {
    const auto id = Generator<double>::identity(GeneratorSpec::identity());
    const Tensor<double> x = random_tensor<double>(rng, {2, 1, 100});
    CHECK(bit_equal(id.apply(x), x));
  }
}

TEST_CASE("discriminator", "[nn][discriminator]") {
  Rng rng(4);
  Discriminator<float> d(DiscriminatorSpec::desk(4096), 5);
  Graph<float> g(false);

  SECTION("scores lie strictly inside (0, 1)") {
    for (double scale : {1e-3, 1.0, 1e3, 1e6}) {
      const Tensor<float> s = g.value(d.forward(g, g.constant(random_tensor<float>(rng, {4, 1, 4096}, scale)), false));
      for (float v : s.data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
      }
    }
  }

  SECTION("all-zero parameters score exactly one half") {
    Discriminator<double> z(DiscriminatorSpec::desk(256), 1);
    for (auto& p : z.parameters().all()) p.value.fill(0.0);
    Graph<double> h(false);
    const Tensor<double> s = h.value(z.forward(h, h.constant(random_tensor<double>(rng, {3, 1, 256})), false));
    for (double v : s.data()) CHECK(v == 0.5);
  }

  SECTION("one score per batch item") {
    const Tensor<float> s = g.value(d.forward(g, g.constant(random_tensor<float>(rng, {32, 1, 4096})), false));
    CHECK(s.size() == 32);
  }

  SECTION("wrong width is rejected") {
    CHECK_THROWS_AS(d.forward(g, g.constant(Tensor<float>(Shape{1, 1, 2048})), false), ShapeError);
  }
}

TEST_CASE("conditional encoder-decoder generator", "[nn][segan]") {
  Rng rng(6);
  SeganGenerator<float> gen(SeganGeneratorSpec::desk(), 9);
  randomize(gen.parameters(), rng, 0.3);
  Graph<float> g(false);
  auto run = [&](const Tensor<float>& x, const Tensor<float>& z) {
    return g.value(gen.forward(g, g.constant(x), g.constant(z), false));
  };

  CHECK(gen.decoder_input_channels() == 64 + 16);

  SECTION("fixed z gives a deterministic output") {
    const Tensor<float> x = random_tensor<float>(rng, {1, 1, 1024});
    Rng za(1), zb(1);
    const Tensor<float> z1 = random_tensor<float>(za, gen.noise_shape(x.shape()));
    const Tensor<float> z2 = random_tensor<float>(zb, gen.noise_shape(x.shape()));
    CHECK(bit_equal(run(x, z1), run(x, z2)));
  }

  SECTION("output length equals input length") {
    for (std::size_t w : {1024u, 2048u}) {
      const Tensor<float> x = random_tensor<float>(rng, {2, 1, w});
      CHECK(run(x, random_tensor<float>(rng, gen.noise_shape(x.shape()))).shape() == x.shape());
    }
  }

  SECTION("different noise gives different outputs") {
    const Tensor<float> x = random_tensor<float>(rng, {1, 1, 1024});
    const Tensor<float> a = run(x, random_tensor<float>(rng, gen.noise_shape(x.shape())));
    const Tensor<float> b = run(x, random_tensor<float>(rng, gen.noise_shape(x.shape())));
    CHECK_FALSE(bit_equal(a, b));
  }

  SECTION("noise shape mismatch is rejected") {
    const Tensor<float> x = random_tensor<float>(rng, {1, 1, 1024});
    CHECK_THROWS_AS(run(x, Tensor<float>(Shape{1, 16, 32})), ShapeError);
    CHECK_THROWS_AS(run(x, Tensor<float>(Shape{1, 8, 64})), ShapeError);
  }
}

TEST_CASE("every parameter receives gradient", "[nn][gradient-flow]") {
  const DiscriminatorSpec dspec{1, 256, {{7, 6, 4}, {5, 8, 4}}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 100);
    Generator<double> gxy(small_generator(), seed * 2 + 1), gyx(small_generator(), seed * 2 + 2);
    Discriminator<double> dy(dspec, seed + 50);
    Graph<double> g;
    const Var x = g.constant(random_tensor<double>(rng, {2, 1, 256}));
    const Var fake = gxy.forward(g, x, true);
    const Var rt = gyx.forward(g, fake, true);
    const Var loss = add(g, lsgan_generator_loss(g, dy.forward(g, fake, true)), cycle_consistency_loss(g, x, rt, x, rt));
    g.backward(loss);
    for (auto* ps : {&gxy.parameters(), &gyx.parameters(), &dy.parameters()}) {
      for (const auto& p : ps->all()) {
        bool any = false;
        for (double v : p.grad.data()) any = any || v != 0.0;
        INFO("seed " << seed << " parameter " << p.name);
        CHECK(any);
      }
    }

    SeganGeneratorSpec sspec;
    sspec.encoder = {{4, 4, 2}, {4, 6, 2}};
    sspec.noise_channels = 3;
    SeganGenerator<double> sg(sspec, seed + 7);
    Graph<double> h;
    const Var noisy = h.constant(random_tensor<double>(rng, {2, 1, 64}));
    const Var z = h.constant(random_tensor<double>(rng, sg.noise_shape({2, 1, 64})));
    const Var out = sg.forward(h, noisy, z, true);
    h.backward(l1_distance(h, out, h.constant(random_tensor<double>(rng, {2, 1, 64}))));
    for (const auto& p : sg.parameters().all()) {
      bool any = false;
      for (double v : p.grad.data()) any = any || v != 0.0;
      INFO("seed " << seed << " parameter " << p.name);
      CHECK(any);
    }
  }
}
