#pragma once

// Run configuration: architecture, schedule, data source and output layout,
// read from and written to YAML. Missing keys take the preset's value; unknown
// keys are errors.

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "s2n/dataio.hpp"
#include "s2n/nn.hpp"
#include "s2n/trainer.hpp"

namespace s2n {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Preset { desk, paper };

inline const char* preset_name(Preset p) { return p == Preset::desk ? "desk" : "paper"; }

inline Preset parse_preset(const std::string& s) {
  if (s == "desk") return Preset::desk;
  if (s == "paper") return Preset::paper;
  throw ConfigError("preset: expected desk or paper, got '" + s + "'");
}

struct RunConfig {
  Preset preset = Preset::desk;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  TrainingConfig training;
  std::optional<std::string> manifest;  // when unset, train on the toy domains
  ToyDomainSpec toy;
  std::string output_dir = "runs/desk";
  std::uint64_t checkpoint_interval = 500;
  std::uint64_t eval_interval = 500;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  static RunConfig defaults(Preset p) {
    RunConfig c;
    c.preset = p;
    if (p == Preset::desk) {
      c.generator = GeneratorSpec::compact();
      c.training = TrainingConfig::desk();
    } else {
      c.generator = GeneratorSpec::desk();
      c.training = TrainingConfig::paper();
      c.output_dir = "runs/paper";
      c.checkpoint_interval = 10000;
      c.eval_interval = 10000;
    }
    c.discriminator = DiscriminatorSpec::desk(c.training.segment_length);
    return c;
  }

  void validate() const {
    try {
      generator.validate();
      discriminator.validate();
      training.validate();
      if (!manifest) toy.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (discriminator.input_width != training.segment_length) {
      throw ConfigError("discriminator.input_width (" + std::to_string(discriminator.input_width) +
                        ") must equal training.segment_length (" +
                        std::to_string(training.segment_length) + ")");
    }
    if (discriminator.input_channels != 1 || generator.input_channels != 1) {
      throw ConfigError("generator and discriminator take one input channel (raw waveform)");
    }
    if (training.segment_length % generator.length_divisor() != 0) {
      throw ConfigError("training.segment_length must be a multiple of the generator's length divisor " +
                        std::to_string(generator.length_divisor()));
    }
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  }
};

/// Command-line overrides applied after the file.
struct ConfigOverrides {
  std::optional<Preset> preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> iters;
  std::optional<std::string> output_dir;
};

/// Sets the run length, keeping the schedule's shape: learning rates hold for
/// the first half and decay over the second; the identity-weight phases scale
/// with the run length.
inline void rescale_schedule(TrainingConfig& t, std::uint64_t iters) {
  if (iters == 0) throw ConfigError("--iters must be positive");
  const double f = static_cast<double>(iters) / static_cast<double>(t.total_iters);
  t.lambda_id_hold_iters = static_cast<std::uint64_t>(std::llround(t.lambda_id_hold_iters * f));
  t.lambda_id_decay_iters = static_cast<std::uint64_t>(std::llround(t.lambda_id_decay_iters * f));
  t.total_iters = iters;
  t.lr_hold_iters = iters / 2;
  t.lr_decay_iters = iters - iters / 2;
}

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline void reject_unknown(const YAML::Node& map, const std::string& where,
                           std::initializer_list<const char*> known) {
  if (!map.IsMap()) throw ConfigError((where.empty() ? "document" : where) + ": expected a mapping");
  for (const auto& kv : map) {
    const std::string key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key '" + join_path(where, key) + "'");
  }
}

inline std::string scalar(const YAML::Node& n, const std::string& where) {
  if (!n.IsScalar()) throw ConfigError(where + ": expected a scalar value");
  return n.Scalar();
}

template <class U>
void read_uint(const YAML::Node& map, const char* key, const std::string& where, U& out) {
  const YAML::Node n = map[key];
  if (!n) return;
  const std::string path = join_path(where, key);
  const std::string s = scalar(n, path);
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() ||
      v > static_cast<std::uint64_t>(std::numeric_limits<U>::max())) {
    throw ConfigError(path + ": expected a non-negative integer, got '" + s + "'");
  }
  out = static_cast<U>(v);
}

inline double parse_real(const std::string& s, const std::string& path) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(path + ": expected a finite number, got '" + s + "'");
  }
  return v;
}

inline void read_real(const YAML::Node& map, const char* key, const std::string& where, double& out) {
  const YAML::Node n = map[key];
  if (n) out = parse_real(scalar(n, join_path(where, key)), join_path(where, key));
}

inline void read_string(const YAML::Node& map, const char* key, const std::string& where, std::string& out) {
  const YAML::Node n = map[key];
  if (n) out = scalar(n, join_path(where, key));
}

template <class Block, class Fn>
void read_list(const YAML::Node& map, const char* key, const std::string& where, std::vector<Block>& out,
               Fn read_one) {
  const YAML::Node n = map[key];
  if (!n) return;
  const std::string path = join_path(where, key);
  if (!n.IsSequence()) throw ConfigError(path + ": expected a list");
  out.clear();
  for (std::size_t i = 0; i < n.size(); ++i) {
    Block b;
    read_one(n[i], path + "[" + std::to_string(i) + "]", b);
    out.push_back(b);
  }
}

// Block entries carry no defaults of their own: every field must be given.
inline void require_keys(const YAML::Node& n, const std::string& where, std::initializer_list<const char*> keys) {
  reject_unknown(n, where, keys);
  for (const char* k : keys) {
    if (!n[k]) throw ConfigError(where + ": missing key '" + k + "'");
  }
}

inline void read_conv_block(const YAML::Node& n, const std::string& where, ConvBlockSpec& b) {
  require_keys(n, where, {"kernel", "channels", "stride"});
  read_uint(n, "kernel", where, b.kernel);
  read_uint(n, "channels", where, b.channels);
  read_uint(n, "stride", where, b.stride);
}

inline void read_generator(const YAML::Node& n, GeneratorSpec& g) {
  const std::string w = "generator";
  reject_unknown(n, w, {"input_channels", "downsample", "residual", "upsample", "output_kernel"});
  read_uint(n, "input_channels", w, g.input_channels);
  read_list(n, "downsample", w, g.downsample, read_conv_block);
  read_list(n, "residual", w, g.residual, [](const YAML::Node& b, const std::string& p, ResidualBlockSpec& r) {
    require_keys(b, p, {"kernel", "channels"});
    read_uint(b, "kernel", p, r.kernel);
    read_uint(b, "channels", p, r.channels);
  });
  read_list(n, "upsample", w, g.upsample, [](const YAML::Node& b, const std::string& p, UpsampleBlockSpec& u) {
    require_keys(b, p, {"kernel", "channels", "factor"});
    read_uint(b, "kernel", p, u.kernel);
    read_uint(b, "channels", p, u.channels);
    read_uint(b, "factor", p, u.factor);
  });
  read_uint(n, "output_kernel", w, g.output_kernel);
}

inline void read_discriminator(const YAML::Node& n, DiscriminatorSpec& d) {
  const std::string w = "discriminator";
  reject_unknown(n, w, {"input_channels", "input_width", "blocks"});
  read_uint(n, "input_channels", w, d.input_channels);
  read_uint(n, "input_width", w, d.input_width);
  read_list(n, "blocks", w, d.blocks, read_conv_block);
}

inline void read_training(const YAML::Node& n, TrainingConfig& t) {
  const std::string w = "training";
  reject_unknown(n, w,
                 {"lambda_cyc", "lambda_id_initial", "lambda_id_hold_iters", "lambda_id_decay_iters",
                  "lr_discriminator", "lr_generator", "beta1", "beta2", "batch_size", "segment_length",
                  "total_iters", "lr_hold_iters", "lr_decay_iters", "seed", "lambda_segan"});
  read_real(n, "lambda_cyc", w, t.lambda_cyc);
  read_real(n, "lambda_id_initial", w, t.lambda_id_initial);
  read_uint(n, "lambda_id_hold_iters", w, t.lambda_id_hold_iters);
  read_uint(n, "lambda_id_decay_iters", w, t.lambda_id_decay_iters);
  read_real(n, "lr_discriminator", w, t.lr_discriminator);
  read_real(n, "lr_generator", w, t.lr_generator);
  read_real(n, "beta1", w, t.beta1);
  read_real(n, "beta2", w, t.beta2);
  read_uint(n, "batch_size", w, t.batch_size);
  read_uint(n, "segment_length", w, t.segment_length);
  read_uint(n, "total_iters", w, t.total_iters);
  read_uint(n, "lr_hold_iters", w, t.lr_hold_iters);
  read_uint(n, "lr_decay_iters", w, t.lr_decay_iters);
  read_uint(n, "seed", w, t.seed);
  if (const YAML::Node s = n["lambda_segan"]) {
    if (s.IsNull()) {
      t.lambda_segan.reset();
    } else {
      t.lambda_segan = parse_real(scalar(s, "training.lambda_segan"), "training.lambda_segan");
    }
  }
}

inline void read_toy(const YAML::Node& n, ToyDomainSpec& s) {
  const std::string w = "data.toy";
  reject_unknown(n, w,
                 {"seed", "utterances", "seconds", "sample_rate", "f0_min", "f0_max", "harmonics",
                  "detail_level", "detail_low_hz", "detail_high_hz", "smoothing_cutoff_hz",
                  "heldout_fraction", "peak", "noise_level"});
  read_uint(n, "seed", w, s.seed);
  read_uint(n, "utterances", w, s.utterances);
  read_real(n, "seconds", w, s.seconds);
  read_uint(n, "sample_rate", w, s.sample_rate);
  read_real(n, "f0_min", w, s.f0_min);
  read_real(n, "f0_max", w, s.f0_max);
  read_uint(n, "harmonics", w, s.harmonics);
  read_real(n, "detail_level", w, s.detail_level);
  read_real(n, "detail_low_hz", w, s.detail_low_hz);
  read_real(n, "detail_high_hz", w, s.detail_high_hz);
  read_real(n, "smoothing_cutoff_hz", w, s.smoothing_cutoff_hz);
  read_real(n, "heldout_fraction", w, s.heldout_fraction);
  read_real(n, "peak", w, s.peak);
  read_real(n, "noise_level", w, s.noise_level);
}

inline void read_data(const YAML::Node& n, RunConfig& c) {
  reject_unknown(n, "data", {"manifest", "toy"});
  if (n["manifest"] && n["toy"]) throw ConfigError("data: give either manifest or toy, not both");
  if (n["manifest"]) {
    std::string m;
    read_string(n, "manifest", "data", m);
    if (m.empty()) throw ConfigError("data.manifest: empty path");
    c.manifest = m;
  }
  if (const YAML::Node t = n["toy"]) {
    c.manifest.reset();
    read_toy(t, c.toy);
  }
}

}  // namespace detail

/// Parses YAML text on top of the preset's defaults. The preset is taken from
/// `override_preset` if given, else the document's `preset` key, else desk.
inline RunConfig parse_run_config(const std::string& text, std::optional<Preset> override_preset = {},
                                  const std::string& what = "config") {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
  try {
    if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    detail::reject_unknown(root, "",
                           {"preset", "generator", "discriminator", "training", "data", "output_dir",
                            "checkpoint_interval", "eval_interval"});
    Preset p = Preset::desk;
    if (root["preset"]) p = parse_preset(detail::scalar(root["preset"], "preset"));
    if (override_preset) p = *override_preset;
    RunConfig c = RunConfig::defaults(p);
    if (root["generator"]) detail::read_generator(root["generator"], c.generator);
    if (root["training"]) detail::read_training(root["training"], c.training);
    // The discriminator width follows the segment length unless given.
    c.discriminator.input_width = c.training.segment_length;
    if (root["discriminator"]) detail::read_discriminator(root["discriminator"], c.discriminator);
    if (root["data"]) detail::read_data(root["data"], c);
    detail::read_string(root, "output_dir", "", c.output_dir);
    detail::read_uint(root, "checkpoint_interval", "", c.checkpoint_interval);
    detail::read_uint(root, "eval_interval", "", c.eval_interval);
    c.validate();
    return c;
  } catch (const ConfigError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path, std::optional<Preset> override_preset = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), override_preset, path);
}

inline void apply_overrides(RunConfig& c, const ConfigOverrides& o) {
  if (o.seed) c.training.seed = *o.seed;
  if (o.iters) rescale_schedule(c.training, *o.iters);
  if (o.output_dir) c.output_dir = *o.output_dir;
  c.validate();
}

/// Every field, in a form parse_run_config reads back to an equal RunConfig.
inline std::string emit_run_config(const RunConfig& c) {
  YAML::Emitter e;
  auto real = [&](const char* k, double v) { e << YAML::Key << k << YAML::Value << format_real(v); };
  auto uint = [&](const char* k, std::uint64_t v) { e << YAML::Key << k << YAML::Value << v; };
  auto conv_blocks = [&](const char* k, const std::vector<ConvBlockSpec>& bs) {
    e << YAML::Key << k << YAML::Value << YAML::BeginSeq;
    for (const auto& b : bs) {
      e << YAML::Flow << YAML::BeginMap;
      uint("kernel", b.kernel);
      uint("channels", b.channels);
      uint("stride", b.stride);
      e << YAML::EndMap;
    }
    e << YAML::EndSeq;
  };
  e << YAML::BeginMap;
  e << YAML::Key << "preset" << YAML::Value << preset_name(c.preset);

  e << YAML::Key << "generator" << YAML::Value << YAML::BeginMap;
  uint("input_channels", c.generator.input_channels);
  conv_blocks("downsample", c.generator.downsample);
  e << YAML::Key << "residual" << YAML::Value << YAML::BeginSeq;
  for (const auto& r : c.generator.residual) {
    e << YAML::Flow << YAML::BeginMap;
    uint("kernel", r.kernel);
    uint("channels", r.channels);
    e << YAML::EndMap;
  }
  e << YAML::EndSeq;
  e << YAML::Key << "upsample" << YAML::Value << YAML::BeginSeq;
  for (const auto& u : c.generator.upsample) {
    e << YAML::Flow << YAML::BeginMap;
    uint("kernel", u.kernel);
    uint("channels", u.channels);
    uint("factor", u.factor);
    e << YAML::EndMap;
  }
  e << YAML::EndSeq;
  uint("output_kernel", c.generator.output_kernel);
  e << YAML::EndMap;

  e << YAML::Key << "discriminator" << YAML::Value << YAML::BeginMap;
  uint("input_channels", c.discriminator.input_channels);
  uint("input_width", c.discriminator.input_width);
  conv_blocks("blocks", c.discriminator.blocks);
  e << YAML::EndMap;

  const TrainingConfig& t = c.training;
  e << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  real("lambda_cyc", t.lambda_cyc);
  real("lambda_id_initial", t.lambda_id_initial);
  uint("lambda_id_hold_iters", t.lambda_id_hold_iters);
  uint("lambda_id_decay_iters", t.lambda_id_decay_iters);
  real("lr_discriminator", t.lr_discriminator);
  real("lr_generator", t.lr_generator);
  real("beta1", t.beta1);
  real("beta2", t.beta2);
  uint("batch_size", t.batch_size);
  uint("segment_length", t.segment_length);
  uint("total_iters", t.total_iters);
  uint("lr_hold_iters", t.lr_hold_iters);
  uint("lr_decay_iters", t.lr_decay_iters);
  uint("seed", t.seed);
  if (t.lambda_segan) real("lambda_segan", *t.lambda_segan);
  e << YAML::EndMap;

  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  if (c.manifest) {
    e << YAML::Key << "manifest" << YAML::Value << YAML::DoubleQuoted << *c.manifest;
  } else {
    const ToyDomainSpec& s = c.toy;
    e << YAML::Key << "toy" << YAML::Value << YAML::BeginMap;
    uint("seed", s.seed);
    uint("utterances", s.utterances);
    real("seconds", s.seconds);
    uint("sample_rate", s.sample_rate);
    real("f0_min", s.f0_min);
    real("f0_max", s.f0_max);
    uint("harmonics", s.harmonics);
    real("detail_level", s.detail_level);
    real("detail_low_hz", s.detail_low_hz);
    real("detail_high_hz", s.detail_high_hz);
    real("smoothing_cutoff_hz", s.smoothing_cutoff_hz);
    real("heldout_fraction", s.heldout_fraction);
    real("peak", s.peak);
    real("noise_level", s.noise_level);
    e << YAML::EndMap;
  }
  e << YAML::EndMap;

  e << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << c.output_dir;
  uint("checkpoint_interval", c.checkpoint_interval);
  uint("eval_interval", c.eval_interval);
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace s2n
