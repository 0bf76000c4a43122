#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "s2n/graph.hpp"
#include "s2n/tensor.hpp"

namespace s2n {

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// First and second moment estimates of one parameter.
template <class T>
struct AdamMoments {
  Tensor<T> m;
  Tensor<T> v;
};

/// One bias-corrected Adam update; `step` counts from 1.
template <class T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamMoments<T>& mom, std::uint64_t step,
               const AdamHyper& h) {
  if (!(param.shape() == grad.shape())) {
    throw ShapeError("adam_step: gradient " + grad.shape().str() + " does not match parameter " +
                     param.shape().str());
  }
  if (mom.m.empty() && mom.v.empty()) {
    mom.m = Tensor<T>(param.shape());
    mom.v = Tensor<T>(param.shape());
  }
  if (!(mom.m.shape() == param.shape()) || !(mom.v.shape() == param.shape())) {
    throw ShapeError("adam_step: moments do not match parameter " + param.shape().str());
  }
  if (!(h.lr >= 0.0)) throw std::invalid_argument("adam_step: learning rate must be non-negative");
  if (step == 0) throw std::invalid_argument("adam_step: step counts from 1");

  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(step)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(step)));
  const T lr = static_cast<T>(h.lr);
  const T eps = static_cast<T>(h.eps);
  T* p = param.data().data();
  T* m = mom.m.data().data();
  T* v = mom.v.data().data();
  const T* g = grad.data().data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (T{1} - b1) * g[i];
    v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
    if (lr != T{0}) p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

/// Adam over a list of parameters, sharing the step counter.
template <class T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<Parameter<T>>& params) {
    moments_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      moments_[i].m = Tensor<T>(params[i].value.shape());
      moments_[i].v = Tensor<T>(params[i].value.shape());
    }
  }

  void step(std::vector<Parameter<T>>& params, std::uint64_t t, const AdamHyper& h) {
    if (params.size() != moments_.size()) {
      throw std::invalid_argument("Adam: parameter list changed size");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].grad.empty()) params[i].zero_grad();
      adam_step(params[i].value, params[i].grad, moments_[i], t, h);
    }
  }

  std::vector<AdamMoments<T>>& moments() noexcept { return moments_; }
  const std::vector<AdamMoments<T>>& moments() const noexcept { return moments_; }

 private:
  std::vector<AdamMoments<T>> moments_;
};

/// Constant for `hold` iterations, then linear to zero over `decay`.
inline double linear_decay(std::uint64_t iter, double base, std::uint64_t hold,
                           std::uint64_t decay) {
  if (iter < hold) return base;
  if (iter >= hold + decay) return 0.0;
  return base * (1.0 - static_cast<double>(iter - hold) / static_cast<double>(decay));
}

inline double lr_at(std::uint64_t iter, double base_lr, std::uint64_t hold, std::uint64_t decay) {
  return linear_decay(iter, base_lr, hold, decay);
}

inline double lambda_id_at(std::uint64_t iter, double initial, std::uint64_t hold,
                           std::uint64_t decay) {
  return linear_decay(iter, initial, hold, decay);
}

}  // namespace s2n
