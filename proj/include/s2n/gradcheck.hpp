#pragma once

// Finite-difference verification of the reverse-mode adjoints.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "s2n/graph.hpp"
#include "s2n/ops.hpp"
#include "s2n/random.hpp"

namespace s2n {

/// Operation under test: maps recorded inputs to an output of any shape.
using GradCheckOp = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

namespace detail {

// sum(v * r) for a fixed projection r, so every output element contributes.
inline Var project(Graph<double>& g, Var v, const Tensor<double>& r) {
  const Tensor<double>& x = g.value(v);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * r[i];
  return g.record(Tensor<double>::scalar(acc), {v},
                  [v, r](Graph<double>& gr, std::size_t self) {
                    const double gy = gr.grad(Var{self})[0];
                    Tensor<double>& gx = gr.grad(v);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * r[i];
                  },
                  "project");
}

inline double evaluate_projected(const GradCheckOp& op, const std::vector<Tensor<double>>& inputs,
                                 const Tensor<double>& r) {
  Graph<double> g(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  const Tensor<double>& y = g.value(op(g, vars));
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
  return acc;
}

}  // namespace detail

/// Max over all input elements of |analytic - central| / max(|analytic|, |central|, 1e-8).
/// The output is reduced to a scalar through a random projection drawn from `rng`.
inline double grad_check(const GradCheckOp& op, const std::vector<Tensor<double>>& inputs, Rng& rng,
                         double step = 1e-5) {
  Graph<double> g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.input(t, true));
  const Var out = op(g, vars);
  Tensor<double> r(g.value(out).shape());
  for (auto& v : r.data()) v = rng.uniform(-1.0, 1.0);
  g.backward(detail::project(g, out, r));

  double worst = 0.0;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    const Tensor<double> analytic =
        g.has_grad(vars[n]) ? g.grad(vars[n]) : Tensor<double>(inputs[n].shape());
    for (std::size_t i = 0; i < inputs[n].size(); ++i) {
      const double x0 = inputs[n][i];
      probe[n][i] = x0 + step;
      const double up = detail::evaluate_projected(op, probe, r);
      probe[n][i] = x0 - step;
      const double down = detail::evaluate_projected(op, probe, r);
      probe[n][i] = x0;
      const double central = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(central), 1e-8});
      worst = std::max(worst, std::abs(a - central) / denom);
    }
  }
  return worst;
}

/// One named entry of the standard suite: draws random inputs and runs grad_check.
struct GradCheckCase {
  std::string name;
  std::function<double(Rng&)> run;
};

namespace detail {

inline Tensor<double> random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for ops with a kink there.
inline Tensor<double> away_from_zero(Rng& rng, Shape s) {
  Tensor<double> t(s);
  for (auto& v : t.data()) {
    const double m = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

}  // namespace detail

/// Every differentiable operation of the tensor core, each drawing its own
/// random shapes and values.
inline std::vector<GradCheckCase> standard_grad_check_suite(double step = 1e-5) {
  using detail::pick;
  using detail::random_tensor;
  std::vector<GradCheckCase> cases;

  cases.push_back({"conv1d", [step](Rng& rng) {
                     const std::size_t b = pick(rng, 1, 2), ci = pick(rng, 1, 3),
                                       co = pick(rng, 1, 3), k = pick(rng, 1, 5),
                                       s = pick(rng, 1, 3), p = pick(rng, 0, 2);
                     const std::size_t w = std::max<std::size_t>(k, pick(rng, 4, 12));
                     auto op = [s, p](Graph<double>& g, const std::vector<Var>& v) {
                       return conv1d(g, v[0], v[1], v[2], s, p);
                     };
                     return grad_check(op,
                                       {random_tensor(rng, {b, ci, w}), random_tensor(rng, {co, ci, k}),
                                        random_tensor(rng, {1, 1, co})},
                                       rng, step);
                   }});
  cases.push_back({"conv1d_transposed", [step](Rng& rng) {
                     const std::size_t b = pick(rng, 1, 2), ci = pick(rng, 1, 3),
                                       co = pick(rng, 1, 3), k = pick(rng, 1, 5),
                                       s = pick(rng, 1, 3), w = pick(rng, 2, 8);
                     const std::size_t full = (w - 1) * s + k;
                     const std::size_t p = std::min<std::size_t>(pick(rng, 0, 2), (full - 1) / 2);
                     auto op = [s, p](Graph<double>& g, const std::vector<Var>& v) {
                       return conv1d_transposed(g, v[0], v[1], v[2], s, p);
                     };
                     return grad_check(op,
                                       {random_tensor(rng, {b, ci, w}), random_tensor(rng, {ci, co, k}),
                                        random_tensor(rng, {1, 1, co})},
                                       rng, step);
                   }});
  cases.push_back({"glu", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8)};
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) {
                       return glu(g, v[0], v[1]);
                     };
                     return grad_check(op, {random_tensor(rng, s, -3, 3), random_tensor(rng, s, -3, 3)},
                                       rng, step);
                   }});
  cases.push_back({"instance_norm", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 10)};
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) {
                       return instance_norm(g, v[0], v[1], v[2], 1e-5);
                     };
                     return grad_check(op,
                                       {random_tensor(rng, s), random_tensor(rng, {1, 1, s.channels}),
                                        random_tensor(rng, {1, 1, s.channels})},
                                       rng, step);
                   }});
  cases.push_back({"pixel_shuffle_1d", [step](Rng& rng) {
                     const std::size_t r = pick(rng, 1, 4);
                     const Shape s{pick(rng, 1, 2), r * pick(rng, 1, 3), pick(rng, 1, 6)};
                     auto op = [r](Graph<double>& g, const std::vector<Var>& v) {
                       return pixel_shuffle_1d(g, v[0], r);
                     };
                     return grad_check(op, {random_tensor(rng, s)}, rng, step);
                   }});
  cases.push_back({"linear", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 6)};
                     const std::size_t outs = pick(rng, 1, 3);
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) {
                       return linear(g, v[0], v[1], v[2]);
                     };
                     return grad_check(op,
                                       {random_tensor(rng, s),
                                        random_tensor(rng, {outs, 1, s.channels * s.width}),
                                        random_tensor(rng, {1, 1, outs})},
                                       rng, step);
                   }});
  cases.push_back({"sigmoid", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8)};
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) { return sigmoid(g, v[0]); };
                     return grad_check(op, {random_tensor(rng, s, -4, 4)}, rng, step);
                   }});
  cases.push_back({"leaky_relu", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8)};
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) {
                       return leaky_relu(g, v[0], 0.2);
                     };
                     return grad_check(op, {detail::away_from_zero(rng, s)}, rng, step);
                   }});
  cases.push_back({"concat_channels", [step](Rng& rng) {
                     const std::size_t b = pick(rng, 1, 2), w = pick(rng, 1, 6);
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) {
                       return concat_channels(g, v[0], v[1]);
                     };
                     return grad_check(op,
                                       {random_tensor(rng, {b, pick(rng, 1, 3), w}),
                                        random_tensor(rng, {b, pick(rng, 1, 3), w})},
                                       rng, step);
                   }});
  cases.push_back({"add_sub_scale", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8)};
                     const double f = rng.uniform(-2, 2);
                     auto op = [f](Graph<double>& g, const std::vector<Var>& v) {
                       return add_scalar(g, scale(g, sub(g, add(g, v[0], v[1]), scale(g, v[1], 0.25)), f), 0.5);
                     };
                     return grad_check(op, {random_tensor(rng, s), random_tensor(rng, s)}, rng, step);
                   }});
  cases.push_back({"abs_mean", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8)};
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) { return mean(g, abs(g, v[0])); };
                     return grad_check(op, {detail::away_from_zero(rng, s)}, rng, step);
                   }});
  cases.push_back({"square_sum", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8)};
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) { return sum(g, square(g, v[0])); };
                     return grad_check(op, {random_tensor(rng, s)}, rng, step);
                   }});
  cases.push_back({"log_clamp", [step](Rng& rng) {
                     const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 8)};
                     auto op = [](Graph<double>& g, const std::vector<Var>& v) {
                       return log(g, clamp(g, v[0], 1e-7, 1.0 - 1e-7));
                     };
                     return grad_check(op, {random_tensor(rng, s, 0.05, 0.95)}, rng, step);
                   }});
  return cases;
}

}  // namespace s2n
