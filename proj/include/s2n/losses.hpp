#pragma once

// Adversarial, cycle-consistency, identity-mapping and L1-regularized losses,
// each recorded on a Graph so gradients flow to whatever produced the inputs.

#include <cmath>
#include <stdexcept>
#include <string>

#include "s2n/graph.hpp"
#include "s2n/ops.hpp"

namespace s2n {

struct MinimaxLoss {
  Var discriminator;
  Var generator;
};

/// Reference cross-entropy GAN loss. Scores are clamped to [1e-7, 1 - 1e-7].
/// The generator term is mean(log(1 - D(G(z)))), which the generator minimizes.
template <class T>
MinimaxLoss gan_minimax_loss(Graph<T>& g, Var d_real, Var d_fake) {
  const T eps = T(1e-7);
  const Var real = clamp(g, d_real, eps, T{1} - eps);
  const Var fake = clamp(g, d_fake, eps, T{1} - eps);
  const Var log_real = mean(g, log(g, real));
  const Var log_not_fake = mean(g, log(g, add_scalar(g, scale(g, fake, T{-1}), T{1})));
  const Var d = scale(g, add(g, log_real, log_not_fake), T{-1});
  return {d, log_not_fake};
}

/// 0.5 * mean((d_real - 1)^2) + 0.5 * mean(d_fake^2)
template <class T>
Var lsgan_discriminator_loss(Graph<T>& g, Var d_real, Var d_fake) {
  const Var real = mean(g, square(g, add_scalar(g, d_real, T{-1})));
  const Var fake = mean(g, square(g, d_fake));
  return scale(g, add(g, real, fake), T(0.5));
}

/// 0.5 * mean((d_fake - 1)^2)
template <class T>
Var lsgan_generator_loss(Graph<T>& g, Var d_fake) {
  return scale(g, mean(g, square(g, add_scalar(g, d_fake, T{-1}))), T(0.5));
}

/// mean |a - b|
template <class T>
Var l1_distance(Graph<T>& g, Var a, Var b, const char* what = "l1_distance") {
  require_same_shape(g.value(a).shape(), g.value(b).shape(), what);
  return mean(g, abs(g, sub(g, a, b)));
}

/// mean |x - G_yx(G_xy(x))| + mean |y - G_xy(G_yx(y))|
template <class T>
Var cycle_consistency_loss(Graph<T>& g, Var x, Var x_roundtrip, Var y, Var y_roundtrip) {
  return add(g, l1_distance(g, x_roundtrip, x, "cycle loss (x)"),
             l1_distance(g, y_roundtrip, y, "cycle loss (y)"));
}

/// mean |G_yx(x) - x| + mean |G_xy(y) - y|
template <class T>
Var identity_mapping_loss(Graph<T>& g, Var x, Var g_yx_of_x, Var y, Var g_xy_of_y) {
  return add(g, l1_distance(g, g_yx_of_x, x, "identity loss (x)"),
             l1_distance(g, g_xy_of_y, y, "identity loss (y)"));
}

/// LSGAN generator term plus lambda * mean |g_out - target|.
template <class T>
Var segan_generator_loss(Graph<T>& g, Var d_fake, Var g_out, Var target, T lambda) {
  if (!(lambda >= T{0})) throw std::invalid_argument("segan loss: lambda must be non-negative");
  const Var adv = lsgan_generator_loss(g, d_fake);
  if (lambda == T{0}) return adv;
  return add(g, adv, scale(g, l1_distance(g, g_out, target, "segan loss"), lambda));
}

/// Loss components of one training iteration, as plain numbers.
struct LossReport {
  double adversarial_g_xy = 0.0;
  double adversarial_g_yx = 0.0;
  double disc_x = 0.0;
  double disc_y = 0.0;
  double cycle = 0.0;
  double identity = 0.0;
  double total = 0.0;
  friend bool operator==(const LossReport&, const LossReport&) = default;
};

inline void check_weights(double lambda_cyc, double lambda_id) {
  if (!(lambda_cyc >= 0.0) || !(lambda_id >= 0.0)) {
    throw std::invalid_argument("full objective: weights must be non-negative (lambda_cyc=" +
                                std::to_string(lambda_cyc) + ", lambda_id=" +
                                std::to_string(lambda_id) + ")");
  }
}

/// Fills `total` = adversarial terms + lambda_cyc * cycle + lambda_id * identity.
inline LossReport full_objective(LossReport components, double lambda_cyc, double lambda_id) {
  check_weights(lambda_cyc, lambda_id);
  components.total = components.adversarial_g_xy + components.adversarial_g_yx +
                     lambda_cyc * components.cycle + lambda_id * components.identity;
  return components;
}

/// Recorded form of the generator objective.
template <class T>
Var full_objective(Graph<T>& g, Var adv_xy, Var adv_yx, Var cycle, Var identity, T lambda_cyc,
                   T lambda_id) {
  check_weights(lambda_cyc, lambda_id);
  Var total = add(g, add(g, adv_xy, adv_yx), scale(g, cycle, lambda_cyc));
  if (identity.valid()) total = add(g, total, scale(g, identity, lambda_id));
  return total;
}

}  // namespace s2n
