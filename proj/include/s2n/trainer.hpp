#pragma once

// Cycle-consistent adversarial training of two generators and two
// discriminators, and the conditional encoder/decoder baseline.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2n/checkpoint.hpp"
#include "s2n/dataio.hpp"
#include "s2n/losses.hpp"
#include "s2n/nn.hpp"
#include "s2n/optim.hpp"
#include "s2n/random.hpp"

namespace s2n {

/// Raised when a loss component becomes NaN; names the first offender.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingConfig {
  double lambda_cyc = 10.0;
  double lambda_id_initial = 5.0;
  std::uint64_t lambda_id_hold_iters = 400;
  std::uint64_t lambda_id_decay_iters = 400;
  double lr_discriminator = 1e-4;
  double lr_generator = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  std::size_t batch_size = 8;
  std::size_t segment_length = 4096;
  std::uint64_t total_iters = 5000;
  std::uint64_t lr_hold_iters = 2500;
  std::uint64_t lr_decay_iters = 2500;
  std::uint64_t seed = 1;
  std::optional<double> lambda_segan;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;

  void validate() const {
    auto fail = [](const std::string& why) { throw std::invalid_argument("training config: " + why); };
    for (double v : {lambda_cyc, lambda_id_initial, lr_discriminator, lr_generator}) {
      if (!(v >= 0.0) || !std::isfinite(v)) fail("rates and weights must be finite and >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      fail("beta1 and beta2 must lie in [0, 1)");
    }
    if (batch_size == 0 || segment_length == 0) fail("batch_size and segment_length must be positive");
    if (lr_hold_iters + lr_decay_iters != total_iters) {
      fail("lr_hold_iters + lr_decay_iters (" + std::to_string(lr_hold_iters) + " + " +
           std::to_string(lr_decay_iters) + ") must equal total_iters (" +
           std::to_string(total_iters) + ")");
    }
    if (lambda_segan && !(*lambda_segan >= 0.0)) fail("lambda_segan must be >= 0");
  }

  /// The published schedule: 500k iterations, batch 32.
  static TrainingConfig paper() {
    TrainingConfig c;
    c.lambda_id_hold_iters = 20000;
    c.lambda_id_decay_iters = 20000;
    c.batch_size = 32;
    c.total_iters = 500000;
    c.lr_hold_iters = 250000;
    c.lr_decay_iters = 250000;
    return c;
  }

  /// Same shape of schedule over 5k iterations, batch 8. Rates are ten times
  /// the published ones (same 2:1 ratio): at 1e-4 the small discriminator does
  /// not separate the toy domains within the budget.
  static TrainingConfig desk() {
    TrainingConfig c;
    c.lr_generator = 2e-3;
    c.lr_discriminator = 1e-3;
    return c;
  }

  double lr_g(std::uint64_t iter) const { return lr_at(iter, lr_generator, lr_hold_iters, lr_decay_iters); }
  double lr_d(std::uint64_t iter) const {
    return lr_at(iter, lr_discriminator, lr_hold_iters, lr_decay_iters);
  }
  double lambda_id(std::uint64_t iter) const {
    return lambda_id_at(iter, lambda_id_initial, lambda_id_hold_iters, lambda_id_decay_iters);
  }
};

/// Parameters, optimizer moments, iteration counter and random stream.
struct CycleGanState {
  Generator<float> g_xy, g_yx;
  Discriminator<float> d_x, d_y;
  Adam<float> opt_g_xy, opt_g_yx, opt_d_x, opt_d_y;
  std::uint64_t iteration = 0;
  Rng rng;

  CycleGanState() = default;

  /// Networks initialized from seed-derived streams; the data stream is Rng(seed).
  CycleGanState(const GeneratorSpec& gen, const DiscriminatorSpec& disc, std::uint64_t seed)
      : g_xy(gen, seed * 8 + 1),
        g_yx(gen, seed * 8 + 2),
        d_x(disc, seed * 8 + 3),
        d_y(disc, seed * 8 + 4),
        rng(seed) {
    reset_optimizers();
  }

  void reset_optimizers() {
    opt_g_xy = Adam<float>(g_xy.parameters().all());
    opt_g_yx = Adam<float>(g_yx.parameters().all());
    opt_d_x = Adam<float>(d_x.parameters().all());
    opt_d_y = Adam<float>(d_y.parameters().all());
  }
};

namespace detail {

inline void check_finite(double v, const char* name, std::uint64_t iter) {
  if (std::isnan(v)) {
    throw TrainingError("NaN in " + std::string(name) + " at iteration " + std::to_string(iter));
  }
}

inline void check_batch(const Tensor<float>& b, const TrainingConfig& cfg, const char* which) {
  const Shape want{cfg.batch_size, 1, cfg.segment_length};
  if (!(b.shape() == want)) {
    throw ShapeError(std::string("train_step: ") + which + " batch " + b.shape().str() +
                     " does not match " + want.str());
  }
}

}  // namespace detail

/// One iteration: both discriminators on detached generator outputs, then both
/// generators jointly on the full objective against the updated discriminators.
inline LossReport train_step(CycleGanState& s, const Tensor<float>& batch_x, const Tensor<float>& batch_y,
                             const TrainingConfig& cfg) {
  detail::check_batch(batch_x, cfg, "x");
  detail::check_batch(batch_y, cfg, "y");
  const std::uint64_t t = s.iteration;
  const AdamHyper hg{cfg.lr_g(t), cfg.beta1, cfg.beta2, 1e-8};
  const AdamHyper hd{cfg.lr_d(t), cfg.beta1, cfg.beta2, 1e-8};
  const double lambda_id = cfg.lambda_id(t);
  LossReport rep;

  Graph<float> g;
  const auto pxy = s.g_xy.parameters().bind(g, true);
  const auto pyx = s.g_yx.parameters().bind(g, true);
  const Var x = g.constant(batch_x);
  const Var y = g.constant(batch_y);
  const Var fake_y = s.g_xy.forward(g, pxy, x);
  const Var fake_x = s.g_yx.forward(g, pyx, y);

  {
    Graph<float> gd;
    const auto pdx = s.d_x.parameters().bind(gd, true);
    const auto pdy = s.d_y.parameters().bind(gd, true);
    const Var loss_x = lsgan_discriminator_loss(gd, s.d_x.forward(gd, pdx, gd.constant(batch_x)),
                                                s.d_x.forward(gd, pdx, gd.constant(g.value(fake_x))));
    const Var loss_y = lsgan_discriminator_loss(gd, s.d_y.forward(gd, pdy, gd.constant(batch_y)),
                                                s.d_y.forward(gd, pdy, gd.constant(g.value(fake_y))));
    rep.disc_x = gd.value(loss_x)[0];
    rep.disc_y = gd.value(loss_y)[0];
    detail::check_finite(rep.disc_x, "disc_x", t);
    detail::check_finite(rep.disc_y, "disc_y", t);
    s.d_x.parameters().zero_grad();
    s.d_y.parameters().zero_grad();
    gd.backward(add(gd, loss_x, loss_y));
    s.opt_d_x.step(s.d_x.parameters().all(), t + 1, hd);
    s.opt_d_y.step(s.d_y.parameters().all(), t + 1, hd);
  }

  const auto pdx = s.d_x.parameters().bind(g, false);
  const auto pdy = s.d_y.parameters().bind(g, false);
  const Var adv_xy = lsgan_generator_loss(g, s.d_y.forward(g, pdy, fake_y));
  const Var adv_yx = lsgan_generator_loss(g, s.d_x.forward(g, pdx, fake_x));
  const Var x_rt = s.g_yx.forward(g, pyx, fake_y);
  const Var y_rt = s.g_xy.forward(g, pxy, fake_x);
  const Var cycle = cycle_consistency_loss(g, x, x_rt, y, y_rt);
  Var identity;
  if (lambda_id > 0.0) {
    identity = identity_mapping_loss(g, x, s.g_yx.forward(g, pyx, x), y, s.g_xy.forward(g, pxy, y));
    rep.identity = g.value(identity)[0];
  } else {
    Graph<float> ge(false);
    const auto exy = s.g_xy.parameters().bind(ge, false);
    const auto eyx = s.g_yx.parameters().bind(ge, false);
    const Var cx = ge.constant(batch_x);
    const Var cy = ge.constant(batch_y);
    rep.identity = ge.value(identity_mapping_loss(ge, cx, s.g_yx.forward(ge, eyx, cx), cy,
                                                  s.g_xy.forward(ge, exy, cy)))[0];
  }
  const Var total = full_objective(g, adv_xy, adv_yx, cycle, identity, static_cast<float>(cfg.lambda_cyc),
                                   static_cast<float>(lambda_id));
  rep.adversarial_g_xy = g.value(adv_xy)[0];
  rep.adversarial_g_yx = g.value(adv_yx)[0];
  rep.cycle = g.value(cycle)[0];
  rep.total = g.value(total)[0];
  detail::check_finite(rep.adversarial_g_xy, "adversarial_g_xy", t);
  detail::check_finite(rep.adversarial_g_yx, "adversarial_g_yx", t);
  detail::check_finite(rep.cycle, "cycle", t);
  detail::check_finite(rep.identity, "identity", t);
  detail::check_finite(rep.total, "total", t);

  s.g_xy.parameters().zero_grad();
  s.g_yx.parameters().zero_grad();
  g.backward(total);
  s.opt_g_xy.step(s.g_xy.parameters().all(), t + 1, hg);
  s.opt_g_yx.step(s.g_yx.parameters().all(), t + 1, hg);
  ++s.iteration;
  return rep;
}

// ---------------------------------------------------------------------------
// Loss trace

/// Shortest text that reads back to exactly `v`; plain decimal unless that is
/// unwieldy (0.0001 rather than 1e-04).
inline std::string format_real(double v) {
  char buf[400];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  if (r.ec == std::errc() && r.ptr - buf <= 24) return std::string(buf, r.ptr);
  r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline void write_trace_header(std::ostream& out, const TrainingConfig& c) {
  out << "# lr_generator=" << format_real(c.lr_generator) << "\n"
      << "# lr_discriminator=" << format_real(c.lr_discriminator) << "\n"
      << "# lr_hold_iters=" << c.lr_hold_iters << "\n"
      << "# lr_decay_iters=" << c.lr_decay_iters << "\n"
      << "# lambda_cyc=" << format_real(c.lambda_cyc) << "\n"
      << "# lambda_id_initial=" << format_real(c.lambda_id_initial) << "\n"
      << "# lambda_id_hold_iters=" << c.lambda_id_hold_iters << "\n"
      << "# lambda_id_decay_iters=" << c.lambda_id_decay_iters << "\n"
      << "# beta1=" << format_real(c.beta1) << "\n"
      << "# beta2=" << format_real(c.beta2) << "\n"
      << "# batch_size=" << c.batch_size << "\n"
      << "# segment_length=" << c.segment_length << "\n"
      << "# total_iters=" << c.total_iters << "\n"
      << "# seed=" << c.seed << "\n"
      << "iteration\tadversarial_g_xy\tadversarial_g_yx\tdisc_x\tdisc_y\tcycle\tidentity\ttotal"
         "\tlr_g\tlr_d\tlambda_id\n";
}

/// One row; `iteration` is the number of completed steps.
inline std::string trace_row(std::uint64_t iteration, const LossReport& r, const TrainingConfig& c) {
  const std::uint64_t t = iteration - 1;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n",
                static_cast<unsigned long long>(iteration), r.adversarial_g_xy, r.adversarial_g_yx,
                r.disc_x, r.disc_y, r.cycle, r.identity, r.total, c.lr_g(t), c.lr_d(t), c.lambda_id(t));
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion

namespace detail {

inline NamedArray to_array(const std::string& name, const Tensor<float>& t) {
  return {name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

template <class Net>
void export_network(std::vector<NamedArray>& out, const std::string& prefix, const Net& net,
                    const Adam<float>* opt) {
  const auto& ps = net.parameters().all();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out.push_back(to_array(prefix + "." + ps[i].name, ps[i].value));
    if (opt != nullptr) {
      out.push_back(to_array(prefix + "." + ps[i].name + ".adam_m", opt->moments()[i].m));
      out.push_back(to_array(prefix + "." + ps[i].name + ".adam_v", opt->moments()[i].v));
    }
  }
}

// Resolves and shape-checks every array first; assigns only when all exist.
struct PendingCopy {
  Tensor<float>* dst;
  const NamedArray* src;
};

inline void plan_copy(std::vector<PendingCopy>& plan, const CheckpointData& c, const std::string& name,
                      Tensor<float>& dst) {
  const NamedArray* a = c.find(name);
  if (a == nullptr) throw CheckpointError("checkpoint is missing array " + name);
  if (!(a->shape == dst.shape())) {
    throw CheckpointError("checkpoint array " + name + " has shape " + a->shape.str() +
                          ", model expects " + dst.shape().str());
  }
  plan.push_back({&dst, a});
}

template <class Net>
void plan_network(std::vector<PendingCopy>& plan, const CheckpointData& c, const std::string& prefix,
                  Net& net, Adam<float>* opt) {
  auto& ps = net.parameters().all();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    plan_copy(plan, c, prefix + "." + ps[i].name, ps[i].value);
    if (opt != nullptr) {
      plan_copy(plan, c, prefix + "." + ps[i].name + ".adam_m", opt->moments()[i].m);
      plan_copy(plan, c, prefix + "." + ps[i].name + ".adam_v", opt->moments()[i].v);
    }
  }
}

inline void apply_plan(const std::vector<PendingCopy>& plan) {
  for (const auto& p : plan) std::copy(p.src->data.begin(), p.src->data.end(), p.dst->data().begin());
}

// A double split into three floats (hi + mid + lo), so stats survive the f32
// container exactly for any normal value.
inline NamedArray stats_array(const std::string& name, const NormStats& s) {
  auto split = [](double v, std::vector<float>& out) {
    const float hi = static_cast<float>(v);
    const double r = v - static_cast<double>(hi);
    const float mid = static_cast<float>(r);
    out.push_back(hi);
    out.push_back(mid);
    out.push_back(static_cast<float>(r - static_cast<double>(mid)));
  };
  NamedArray a{name, Shape{1, 1, 6}, {}};
  split(s.mean, a.data);
  split(s.std, a.data);
  return a;
}

inline NormStats stats_from_array(const NamedArray& a) {
  if (a.data.size() != 6) throw CheckpointError("normalization array " + a.name + " must hold 6 values");
  auto join = [&](std::size_t i) {
    return static_cast<double>(a.data[i]) + static_cast<double>(a.data[i + 1]) + static_cast<double>(a.data[i + 2]);
  };
  return {join(0), join(3)};
}

}  // namespace detail

/// Snapshot of a training state plus the per-domain normalization statistics.
inline CheckpointData make_checkpoint(const CycleGanState& s, const NormStats& norm_x,
                                      const NormStats& norm_y, const std::string& config_text) {
  CheckpointData c;
  c.config_text = config_text;
  c.iteration = s.iteration;
  c.rng_state = s.rng.state();
  detail::export_network(c.arrays, "g_xy", s.g_xy, &s.opt_g_xy);
  detail::export_network(c.arrays, "g_yx", s.g_yx, &s.opt_g_yx);
  detail::export_network(c.arrays, "d_x", s.d_x, &s.opt_d_x);
  detail::export_network(c.arrays, "d_y", s.d_y, &s.opt_d_y);
  c.arrays.push_back(detail::stats_array("norm.x", norm_x));
  c.arrays.push_back(detail::stats_array("norm.y", norm_y));
  return c;
}

/// Overwrites `s` (already built with the checkpoint's architecture) from `c`.
/// Either every array is restored or `s` is left untouched.
inline void restore_checkpoint(CycleGanState& s, const CheckpointData& c) {
  std::vector<detail::PendingCopy> plan;
  detail::plan_network(plan, c, "g_xy", s.g_xy, &s.opt_g_xy);
  detail::plan_network(plan, c, "g_yx", s.g_yx, &s.opt_g_yx);
  detail::plan_network(plan, c, "d_x", s.d_x, &s.opt_d_x);
  detail::plan_network(plan, c, "d_y", s.d_y, &s.opt_d_y);
  Rng rng;
  rng.set_state(c.rng_state);
  detail::apply_plan(plan);
  s.rng = rng;
  s.iteration = c.iteration;
}

/// Restores one generator's parameters (no optimizer state), e.g. for conversion.
inline void restore_generator(Generator<float>& g, const CheckpointData& c, const std::string& prefix) {
  std::vector<detail::PendingCopy> plan;
  detail::plan_network(plan, c, prefix, g, static_cast<Adam<float>*>(nullptr));
  detail::apply_plan(plan);
}

inline NormStats checkpoint_stats(const CheckpointData& c, Domain d) {
  const std::string name = d == Domain::X ? "norm.x" : "norm.y";
  const NamedArray* a = c.find(name);
  if (a == nullptr) throw CheckpointError("checkpoint is missing array " + name);
  return detail::stats_from_array(*a);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainCallbacks {
  std::function<void(std::uint64_t iteration, const LossReport&)> on_step;
  std::uint64_t checkpoint_interval = 0;  // 0 disables
  std::function<void(const CycleGanState&)> on_checkpoint;
  std::uint64_t stop_after = 0;  // stop once this many iterations are complete; 0 = total_iters
};

/// Runs from s.iteration to cfg.total_iters, drawing batches from s.rng.
inline void train(CycleGanState& s, const DomainCorpus& cx, const DomainCorpus& cy, const TrainingConfig& cfg,
                  const TrainCallbacks& cb = {}) {
  cfg.validate();
  retain_tensor_memory();
  const std::uint64_t end = cb.stop_after == 0 ? cfg.total_iters : std::min(cb.stop_after, cfg.total_iters);
  while (s.iteration < end) {
    auto [bx, by] = sample_unpaired_batch(cx, cy, cfg.batch_size, cfg.segment_length, s.rng);
    const LossReport r = train_step(s, bx, by, cfg);
    if (cb.on_step) cb.on_step(s.iteration, r);
    if (cb.checkpoint_interval != 0 && s.iteration % cb.checkpoint_interval == 0 && cb.on_checkpoint) {
      cb.on_checkpoint(s);
    }
  }
}

// ---------------------------------------------------------------------------
// Conversion

/// Applies a generator to a raw waveform: normalize with the source stats,
/// right-pad to a multiple of the generator's length divisor, convert, trim,
/// denormalize with the target stats.
inline Waveform convert_waveform(const Generator<float>& g, const Waveform& in, const NormStats& source,
                                 const NormStats& target) {
  check_stats(source);
  check_stats(target);
  const std::size_t div = g.spec().length_divisor();
  const std::size_t n = in.size();
  const std::size_t padded = std::max<std::size_t>(div, (n + div - 1) / div * div);
  Tensor<float> x(Shape{1, 1, padded});
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>((in.samples[i] - source.mean) / source.std);
  const Tensor<float> y = g.apply(x);
  Waveform out;
  out.sample_rate = in.sample_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<double>(y[i]) * target.std + target.mean;
  return out;
}

/// Mean |G_yx(G_xy(x)) - x| over held-out utterances in the normalized domain
/// (and the symmetric y term), each utterance processed at full length.
inline double heldout_cycle_l1(const CycleGanState& s, const DomainCorpus& cx, const DomainCorpus& cy) {
  auto one_side = [](const Generator<float>& there, const Generator<float>& back, const DomainCorpus& c) {
    double acc = 0.0;
    std::size_t count = 0;
    const std::size_t div = there.spec().length_divisor();
    for (const auto& w : c.heldout) {
      const std::size_t n = w.size() / div * div;
      Tensor<float> x(Shape{1, 1, n});
      for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>((w.samples[i] - c.stats.mean) / c.stats.std);
      const Tensor<float> rt = back.apply(there.apply(x));
      for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(rt[i]) - x[i]);
      count += n;
    }
    return acc / static_cast<double>(count);
  };
  return one_side(s.g_xy, s.g_yx, cx) + one_side(s.g_yx, s.g_xy, cy);
}

// ---------------------------------------------------------------------------
// Conditional baseline

struct SeganState {
  SeganGenerator<float> g;
  Discriminator<float> d;  // sees (candidate, noisy) as two channels
  Adam<float> opt_g, opt_d;
  std::uint64_t iteration = 0;
  Rng rng;

  SeganState() = default;
  SeganState(const SeganGeneratorSpec& gen, DiscriminatorSpec disc, std::uint64_t seed)
      : g(gen, seed * 8 + 5), rng(seed) {
    disc.input_channels = 2;
    d = Discriminator<float>(disc, seed * 8 + 6);
    opt_g = Adam<float>(g.parameters().all());
    opt_d = Adam<float>(d.parameters().all());
  }
};

struct SeganReport {
  double disc = 0.0;
  double adversarial = 0.0;
  double l1 = 0.0;
  double total = 0.0;
};

inline Tensor<float> gaussian_noise(Rng& rng, Shape s) {
  Tensor<float> z(s);
  for (auto& v : z.data()) v = static_cast<float>(rng.normal());
  return z;
}

/// One discriminator update on (clean, noisy) vs (G(noisy, z), noisy), then one
/// generator update on the LSGAN term plus lambda_segan * L1 to the clean target.
inline SeganReport segan_train_step(SeganState& s, const Tensor<float>& noisy, const Tensor<float>& clean,
                                    const TrainingConfig& cfg) {
  if (!cfg.lambda_segan) throw std::invalid_argument("segan training requires lambda_segan");
  require_same_shape(noisy.shape(), clean.shape(), "segan_train_step");
  const std::uint64_t t = s.iteration;
  const AdamHyper hg{cfg.lr_g(t), cfg.beta1, cfg.beta2, 1e-8};
  const AdamHyper hd{cfg.lr_d(t), cfg.beta1, cfg.beta2, 1e-8};
  SeganReport rep;

  Graph<float> g;
  const auto pg = s.g.parameters().bind(g, true);
  const Var xn = g.constant(noisy);
  const Var z = g.constant(gaussian_noise(s.rng, s.g.noise_shape(noisy.shape())));
  const Var out = s.g.forward(g, pg, xn, z);

  {
    Graph<float> gd;
    const auto pd = s.d.parameters().bind(gd, true);
    const Var n = gd.constant(noisy);
    const Var real = s.d.forward(gd, pd, concat_channels(gd, gd.constant(clean), n));
    const Var fake = s.d.forward(gd, pd, concat_channels(gd, gd.constant(g.value(out)), n));
    const Var loss = lsgan_discriminator_loss(gd, real, fake);
    rep.disc = gd.value(loss)[0];
    detail::check_finite(rep.disc, "disc", t);
    s.d.parameters().zero_grad();
    gd.backward(loss);
    s.opt_d.step(s.d.parameters().all(), t + 1, hd);
  }

  const auto pd = s.d.parameters().bind(g, false);
  const Var score = s.d.forward(g, pd, concat_channels(g, out, xn));
  const Var target = g.constant(clean);
  const Var loss = segan_generator_loss(g, score, out, target, static_cast<float>(*cfg.lambda_segan));
  rep.adversarial = g.value(lsgan_generator_loss(g, score))[0];
  rep.l1 = g.value(l1_distance(g, out, target))[0];
  rep.total = g.value(loss)[0];
  detail::check_finite(rep.total, "segan generator loss", t);
  s.g.parameters().zero_grad();
  g.backward(loss);
  s.opt_g.step(s.g.parameters().all(), t + 1, hg);
  ++s.iteration;
  return rep;
}

/// Mean |G(noisy, z) - clean| over held-out pairs in the clean normalized
/// domain, each utterance trimmed to a multiple of the length divisor. The
/// noise code comes from Rng(seed) so repeated calls are comparable.
inline double segan_heldout_l1(const SeganState& s, const DomainCorpus& noisy, const DomainCorpus& clean,
                               std::uint64_t seed = 0) {
  if (noisy.heldout.size() != clean.heldout.size() || noisy.heldout.empty()) {
    throw DataError("segan evaluation needs equally sized, non-empty held-out splits");
  }
  Rng rng(seed);
  const std::size_t div = s.g.spec().length_divisor();
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t u = 0; u < noisy.heldout.size(); ++u) {
    const Waveform& xn = noisy.heldout[u];
    const Waveform& xc = clean.heldout[u];
    const std::size_t n = std::min(xn.size(), xc.size()) / div * div;
    if (n == 0) continue;
    Tensor<float> x(Shape{1, 1, n});
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>((xn.samples[i] - noisy.stats.mean) / noisy.stats.std);
    Graph<float> g(false);
    auto p = const_cast<SeganGenerator<float>&>(s.g).parameters().bind(g, false);
    const Var z = g.constant(gaussian_noise(rng, s.g.noise_shape(x.shape())));
    const Tensor<float>& y = g.value(s.g.forward(g, p, g.constant(x), z));
    for (std::size_t i = 0; i < n; ++i) {
      acc += std::abs(static_cast<double>(y[i]) - (xc.samples[i] - clean.stats.mean) / clean.stats.std);
    }
    count += n;
  }
  return acc / static_cast<double>(count);
}

}  // namespace s2n
