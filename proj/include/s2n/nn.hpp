#pragma once

// Gated fully-convolutional generator and discriminator networks, plus the
// encoder/decoder baseline generator conditioned on a noise code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2n/graph.hpp"
#include "s2n/ops.hpp"
#include "s2n/random.hpp"
#include "s2n/tensor.hpp"

namespace s2n {

/// Raised for architecture descriptions that violate their invariants.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConvBlockSpec {
  std::size_t kernel = 3;
  std::size_t channels = 1;
  std::size_t stride = 1;
  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

struct ResidualBlockSpec {
  std::size_t kernel = 3;
  std::size_t channels = 1;
  friend bool operator==(const ResidualBlockSpec&, const ResidualBlockSpec&) = default;
};

struct UpsampleBlockSpec {
  std::size_t kernel = 5;
  std::size_t channels = 1;  // after the pixel shuffle
  std::size_t factor = 2;
  friend bool operator==(const UpsampleBlockSpec&, const UpsampleBlockSpec&) = default;
};

/// Padding that maps width W to W / stride for any W divisible by stride.
inline std::size_t same_padding(std::size_t kernel, std::size_t stride) {
  return stride == 1 ? kernel / 2 : (kernel - stride + 1) / 2;
}

inline void check_block(const ConvBlockSpec& b, const std::string& where) {
  if (b.kernel == 0 || b.channels == 0 || b.stride == 0) {
    throw SpecError(where + ": kernel, channels and stride must be positive");
  }
  if (b.stride == 1 && b.kernel % 2 == 0) {
    throw SpecError(where + ": stride-1 blocks need an odd kernel, got " + std::to_string(b.kernel));
  }
  if (b.kernel < b.stride) {
    throw SpecError(where + ": kernel " + std::to_string(b.kernel) + " shorter than stride " +
                    std::to_string(b.stride));
  }
}

struct GeneratorSpec {
  std::size_t input_channels = 1;
  std::vector<ConvBlockSpec> downsample;
  std::vector<ResidualBlockSpec> residual;
  std::vector<UpsampleBlockSpec> upsample;
  std::size_t output_kernel = 15;
  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;

  /// Input widths must be a multiple of this.
  std::size_t length_divisor() const {
    std::size_t d = 1;
    for (const auto& b : downsample) d *= b.stride;
    return d;
  }

  void validate() const {
    if (input_channels == 0) throw SpecError("generator: input_channels must be positive");
    std::size_t down = 1;
    std::size_t up = 1;
    std::size_t channels = input_channels;
    for (std::size_t i = 0; i < downsample.size(); ++i) {
      check_block(downsample[i], "generator downsample block " + std::to_string(i));
      down *= downsample[i].stride;
      channels = downsample[i].channels;
    }
    for (std::size_t i = 0; i < residual.size(); ++i) {
      const auto& r = residual[i];
      if (r.kernel % 2 == 0 || r.kernel == 0) {
        throw SpecError("generator residual block " + std::to_string(i) + ": kernel must be odd");
      }
      if (r.channels != channels) {
        throw SpecError("generator residual block " + std::to_string(i) + ": channels " +
                        std::to_string(r.channels) + " differ from incoming " +
                        std::to_string(channels));
      }
    }
    for (std::size_t i = 0; i < upsample.size(); ++i) {
      const auto& u = upsample[i];
      if (u.kernel % 2 == 0 || u.channels == 0 || u.factor == 0) {
        throw SpecError("generator upsample block " + std::to_string(i) +
                        ": needs odd kernel and positive channels/factor");
      }
      up *= u.factor;
      channels = u.channels;
    }
    if (down != up) {
      throw SpecError("generator: downsample stride product " + std::to_string(down) +
                      " differs from upsample factor product " + std::to_string(up));
    }
    if (output_kernel % 2 == 0) throw SpecError("generator: output kernel must be odd");
  }

  /// Desk-scale default: two stride-2 gated downsamplers, three residual blocks,
  /// two pixel-shuffle upsamplers.
  static GeneratorSpec desk() {
    GeneratorSpec s;
    s.downsample = {{15, 32, 2}, {5, 64, 2}};
    s.residual = {{3, 64}, {3, 64}, {3, 64}};
    s.upsample = {{5, 32, 2}, {5, 16, 2}};
    s.output_kernel = 15;
    return s;
  }

  /// Roughly 100k parameters concentrated at 1/64 resolution, for single-core
  /// training budgets: three stride-4 gated downsamplers, three residual
  /// blocks, three pixel-shuffle upsamplers with r=4.
  static GeneratorSpec compact() {
    GeneratorSpec s;
    s.downsample = {{16, 16, 4}, {8, 32, 4}, {8, 48, 4}};
    s.residual = {{3, 48}, {3, 48}, {3, 48}};
    s.upsample = {{3, 16, 4}, {3, 8, 4}, {3, 4, 4}};
    s.output_kernel = 15;
    return s;
  }

  /// No hidden blocks; with identity initialization the network passes input through.
  static GeneratorSpec identity(std::size_t kernel = 15) {
    GeneratorSpec s;
    s.output_kernel = kernel;
    return s;
  }
};

struct DiscriminatorSpec {
  std::size_t input_channels = 1;
  std::size_t input_width = 4096;
  std::vector<ConvBlockSpec> blocks;
  friend bool operator==(const DiscriminatorSpec&, const DiscriminatorSpec&) = default;

  std::size_t head_features() const {
    std::size_t w = input_width;
    for (const auto& b : blocks) w /= b.stride;
    return w * (blocks.empty() ? input_channels : blocks.back().channels);
  }

  void validate() const {
    if (input_channels == 0 || input_width == 0) {
      throw SpecError("discriminator: input channels and width must be positive");
    }
    std::size_t w = input_width;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      check_block(blocks[i], "discriminator block " + std::to_string(i));
      if (w % blocks[i].stride != 0) {
        throw SpecError("discriminator: width " + std::to_string(w) + " at block " +
                        std::to_string(i) + " not divisible by stride " +
                        std::to_string(blocks[i].stride));
      }
      w /= blocks[i].stride;
    }
  }

  static DiscriminatorSpec desk(std::size_t width = 4096) {
    DiscriminatorSpec s;
    s.input_width = width;
    s.blocks = {{15, 16, 4}, {5, 32, 4}, {5, 32, 4}};
    return s;
  }
};

struct SeganGeneratorSpec {
  std::vector<ConvBlockSpec> encoder;  // every stride must be 2, kernels even
  std::size_t noise_channels = 8;
  bool skip_connections = true;
  double leak = 0.3;
  friend bool operator==(const SeganGeneratorSpec&, const SeganGeneratorSpec&) = default;

  std::size_t length_divisor() const { return std::size_t{1} << encoder.size(); }
  std::size_t code_channels() const { return encoder.empty() ? 1 : encoder.back().channels; }

  void validate() const {
    if (encoder.empty()) throw SpecError("segan generator: encoder must have at least one layer");
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      const auto& e = encoder[i];
      if (e.stride != 2 || e.kernel < 2 || e.kernel % 2 != 0 || e.channels == 0) {
        throw SpecError("segan encoder layer " + std::to_string(i) +
                        ": needs stride 2, an even kernel >= 2 and positive channels");
      }
    }
  }

  static SeganGeneratorSpec desk() {
    SeganGeneratorSpec s;
    s.encoder = {{8, 16, 2}, {8, 32, 2}, {8, 32, 2}, {8, 64, 2}};
    s.noise_channels = 16;
    return s;
  }
};

namespace detail {

template <class T>
Tensor<T> gaussian(Rng& rng, Shape s, double stddev) {
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

}  // namespace detail

/// Ordered parameter collection shared by all networks.
template <class T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    params_.push_back(Parameter<T>{std::move(name), std::move(value), {}});
    return params_.size() - 1;
  }

  std::vector<Parameter<T>>& all() noexcept { return params_; }
  const std::vector<Parameter<T>>& all() const noexcept { return params_; }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Records every parameter on g: trainable ones collect gradients, frozen
  /// ones enter as constants.
  std::vector<Var> bind(Graph<T>& g, bool trainable) {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (auto& p : params_) vars.push_back(trainable ? g.parameter(p) : g.constant(p.value));
    return vars;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> params_;
};

inline std::size_t gated_conv_parameter_count(std::size_t in, std::size_t out, std::size_t kernel) {
  return 2 * out * in * kernel + 2 * out;
}

/// Convolution pair (linear and gate paths), GLU, instance normalization.
struct GatedBlock {
  std::size_t w, v, b, c, gain, beta;
  std::size_t stride, padding;

  template <class T>
  static GatedBlock create(ParameterSet<T>& ps, Rng& rng, const std::string& name,
                           std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(in * kernel));
    GatedBlock blk{};
    blk.w = ps.add(name + ".w", detail::gaussian<T>(rng, {out, in, kernel}, sd));
    blk.v = ps.add(name + ".v", detail::gaussian<T>(rng, {out, in, kernel}, sd));
    blk.b = ps.add(name + ".b", Tensor<T>(Shape{1, 1, out}));
    blk.c = ps.add(name + ".c", Tensor<T>(Shape{1, 1, out}));
    blk.gain = ps.add(name + ".in_gain", Tensor<T>(Shape{1, 1, out}, T{1}));
    blk.beta = ps.add(name + ".in_bias", Tensor<T>(Shape{1, 1, out}));
    blk.stride = stride;
    blk.padding = same_padding(kernel, stride);
    return blk;
  }

  template <class T>
  Var operator()(Graph<T>& g, const std::vector<Var>& p, Var h) const {
    const Var lin = conv1d(g, h, p[w], p[b], stride, padding);
    const Var gate = conv1d(g, h, p[v], p[c], stride, padding);
    return instance_norm(g, glu(g, lin, gate), p[gain], p[beta], T(1e-5));
  }
};

/// Length-preserving waveform-to-waveform mapping.
template <class T>
class Generator {
 public:
  Generator() = default;

  Generator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    std::size_t ch = spec_.input_channels;
    for (std::size_t i = 0; i < spec_.downsample.size(); ++i) {
      const auto& d = spec_.downsample[i];
      down_.push_back(GatedBlock::create(params_, rng, "down" + std::to_string(i), ch, d.channels,
                                         d.kernel, d.stride));
      ch = d.channels;
    }
    for (std::size_t i = 0; i < spec_.residual.size(); ++i) {
      const auto& r = spec_.residual[i];
      res_.push_back(GatedBlock::create(params_, rng, "res" + std::to_string(i), ch, r.channels,
                                        r.kernel, 1));
    }
    for (std::size_t i = 0; i < spec_.upsample.size(); ++i) {
      const auto& u = spec_.upsample[i];
      up_.push_back(GatedBlock::create(params_, rng, "up" + std::to_string(i), ch,
                                       u.channels * u.factor, u.kernel, 1));
      ch = u.channels;
    }
    const double sd = 1.0 / std::sqrt(static_cast<double>(ch * spec_.output_kernel));
    out_w_ = params_.add("out.w", detail::gaussian<T>(rng, {spec_.input_channels, ch, spec_.output_kernel}, sd));
    out_b_ = params_.add("out.b", Tensor<T>(Shape{1, 1, spec_.input_channels}));
  }

  /// Generator whose output layer is a centred unit impulse. Passes input
  /// through unchanged when the spec has no hidden blocks.
  static Generator identity(const GeneratorSpec& spec) {
    Generator gen(spec, 0);
    Tensor<T>& w = gen.params_[gen.out_w_].value;
    w.fill(T{0});
    for (std::size_t c = 0; c < std::min(w.shape().batch, w.shape().channels); ++c) {
      w(c, c, spec.output_kernel / 2) = T{1};
    }
    return gen;
  }

  const GeneratorSpec& spec() const noexcept { return spec_; }
  ParameterSet<T>& parameters() noexcept { return params_; }
  const ParameterSet<T>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  Var forward(Graph<T>& g, const std::vector<Var>& p, Var x) const {
    const Shape xs = g.value(x).shape();
    if (xs.channels != spec_.input_channels) {
      throw ShapeError("generator: input " + xs.str() + " needs " +
                       std::to_string(spec_.input_channels) + " channel(s)");
    }
    const std::size_t div = spec_.length_divisor();
    if (xs.width == 0 || xs.width % div != 0) {
      throw ShapeError("generator: input width " + std::to_string(xs.width) +
                       " must be a positive multiple of " + std::to_string(div));
    }
    Var h = x;
    for (const auto& blk : down_) h = blk(g, p, h);
    for (const auto& blk : res_) h = add(g, h, blk(g, p, h));
    for (std::size_t i = 0; i < up_.size(); ++i) {
      h = pixel_shuffle_1d(g, up_[i](g, p, h), spec_.upsample[i].factor);
    }
    return conv1d(g, h, p[out_w_], p[out_b_], 1, spec_.output_kernel / 2);
  }

  Var forward(Graph<T>& g, Var x, bool trainable) {
    return forward(g, params_.bind(g, trainable), x);
  }

  /// Forward pass without recording.
  Tensor<T> apply(const Tensor<T>& x) const {
    Graph<T> g(false);
    auto p = const_cast<ParameterSet<T>&>(params_).bind(g, false);
    return g.value(forward(g, p, g.constant(x)));
  }

 private:
  GeneratorSpec spec_;
  ParameterSet<T> params_;
  std::vector<GatedBlock> down_, res_, up_;
  std::size_t out_w_ = 0, out_b_ = 0;
};

/// Gated convolutional classifier with a fully connected sigmoid head; one
/// score in (0, 1) per batch item.
template <class T>
class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    std::size_t ch = spec_.input_channels;
    for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
      const auto& b = spec_.blocks[i];
      blocks_.push_back(GatedBlock::create(params_, rng, "block" + std::to_string(i), ch,
                                           b.channels, b.kernel, b.stride));
      ch = b.channels;
    }
    const std::size_t f = spec_.head_features();
    fc_w_ = params_.add("fc.w", detail::gaussian<T>(rng, {1, 1, f}, 1.0 / std::sqrt(double(f))));
    fc_b_ = params_.add("fc.b", Tensor<T>(Shape{1, 1, 1}));
  }

  const DiscriminatorSpec& spec() const noexcept { return spec_; }
  ParameterSet<T>& parameters() noexcept { return params_; }
  const ParameterSet<T>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  Var forward(Graph<T>& g, const std::vector<Var>& p, Var x) const {
    const Shape xs = g.value(x).shape();
    if (xs.width != spec_.input_width || xs.channels != spec_.input_channels) {
      throw ShapeError("discriminator: input " + xs.str() + " does not match expected (B, " +
                       std::to_string(spec_.input_channels) + ", " +
                       std::to_string(spec_.input_width) + ")");
    }
    Var h = x;
    for (const auto& blk : blocks_) h = blk(g, p, h);
    return sigmoid(g, linear(g, h, p[fc_w_], p[fc_b_]));
  }

  Var forward(Graph<T>& g, Var x, bool trainable) {
    return forward(g, params_.bind(g, trainable), x);
  }

 private:
  DiscriminatorSpec spec_;
  ParameterSet<T> params_;
  std::vector<GatedBlock> blocks_;
  std::size_t fc_w_ = 0, fc_b_ = 0;
};

/// Encoder/decoder generator: strided convolutions encode the noisy input to a
/// code, the noise code z is concatenated to it, and transposed convolutions
/// decode back to the input length.
template <class T>
class SeganGenerator {
 public:
  SeganGenerator() = default;

  SeganGenerator(const SeganGeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    std::size_t ch = 1;
    for (std::size_t i = 0; i < spec_.encoder.size(); ++i) {
      const auto& e = spec_.encoder[i];
      const double sd = 1.0 / std::sqrt(static_cast<double>(ch * e.kernel));
      enc_.push_back({params_.add("enc" + std::to_string(i) + ".w",
                                  detail::gaussian<T>(rng, {e.channels, ch, e.kernel}, sd)),
                      params_.add("enc" + std::to_string(i) + ".b", Tensor<T>(Shape{1, 1, e.channels})),
                      e.kernel});
      ch = e.channels;
    }
    ch += spec_.noise_channels;
    for (std::size_t j = spec_.encoder.size(); j-- > 0;) {
      const std::size_t out = j > 0 ? spec_.encoder[j - 1].channels : 1;
      const std::size_t k = spec_.encoder[j].kernel;
      // Transposed weights are (in, out, K); the fan-in seen by an output sample is in*K/2.
      const double sd = 1.0 / std::sqrt(static_cast<double>(ch * k) / 2.0);
      dec_.push_back({params_.add("dec" + std::to_string(j) + ".w",
                                  detail::gaussian<T>(rng, {ch, out, k}, sd)),
                      params_.add("dec" + std::to_string(j) + ".b", Tensor<T>(Shape{1, 1, out})),
                      k});
      ch = out + ((j > 0 && spec_.skip_connections) ? spec_.encoder[j - 1].channels : 0);
    }
  }

  const SeganGeneratorSpec& spec() const noexcept { return spec_; }
  ParameterSet<T>& parameters() noexcept { return params_; }
  const ParameterSet<T>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  /// Shape the noise code must have for an input of the given shape.
  Shape noise_shape(const Shape& input) const {
    return Shape{input.batch, spec_.noise_channels, input.width / spec_.length_divisor()};
  }

  /// Decoder input channels: code channels plus noise channels.
  std::size_t decoder_input_channels() const {
    return spec_.code_channels() + spec_.noise_channels;
  }

  Var forward(Graph<T>& g, const std::vector<Var>& p, Var x_noisy, Var z) const {
    const Shape xs = g.value(x_noisy).shape();
    const std::size_t div = spec_.length_divisor();
    if (xs.channels != 1 || xs.width == 0 || xs.width % div != 0) {
      throw ShapeError("segan generator: input " + xs.str() +
                       " must be mono with width a positive multiple of " + std::to_string(div));
    }
    const Shape zs = g.value(z).shape();
    if (!(zs == noise_shape(xs))) {
      throw ShapeError("segan generator: noise shape " + zs.str() + " does not match expected " +
                       noise_shape(xs).str());
    }
    const T leak = static_cast<T>(spec_.leak);
    std::vector<Var> skips;
    Var h = x_noisy;
    for (const auto& e : enc_) {
      skips.push_back(h);
      h = leaky_relu(g, conv1d(g, h, p[e.w], p[e.b], 2, (e.kernel - 2) / 2), leak);
    }
    h = concat_channels(g, h, z);
    for (std::size_t n = 0; n < dec_.size(); ++n) {
      const auto& d = dec_[n];
      h = conv1d_transposed(g, h, p[d.w], p[d.b], 2, (d.kernel - 2) / 2);
      const std::size_t layer = dec_.size() - 1 - n;
      if (layer > 0) {
        h = leaky_relu(g, h, leak);
        if (spec_.skip_connections) h = concat_channels(g, h, skips[layer]);
      }
    }
    return h;
  }

  Var forward(Graph<T>& g, Var x_noisy, Var z, bool trainable) {
    return forward(g, params_.bind(g, trainable), x_noisy, z);
  }

 private:
  struct Layer {
    std::size_t w, b, kernel;
  };
  SeganGeneratorSpec spec_;
  ParameterSet<T> params_;
  std::vector<Layer> enc_, dec_;
};

}  // namespace s2n
