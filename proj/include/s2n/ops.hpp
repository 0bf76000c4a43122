#pragma once

// Differentiable operations over Graph<T>. Every function records exactly one
// node and returns its handle.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2n/conv_kernels.hpp"
#include "s2n/graph.hpp"
#include "s2n/tensor.hpp"

namespace s2n {

namespace detail {

template <class T>
inline T stable_sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Branch-free exp for float (Cody-Waite reduction, degree-6 polynomial, about
// 2 ulp) so that loops over it vectorize. Inputs are clamped to [-87, 88].
inline float fast_exp(float x) {
  x = std::min(std::max(x, -87.0f), 88.0f);
  const float n = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;  // round to nearest
  const float r = (x - n * 0.693359375f) + n * 2.12194440e-4f;
  float p = 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t bits = (static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

// Logistic over a contiguous range. Double keeps the libm path for gradient checks.
inline void sigmoid_into(const float* x, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + fast_exp(-x[i]));
}
inline void sigmoid_into(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(x[i]);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_same_shape(av.shape(), bv.shape(), "add");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record(std::move(out), {a, b},
                  [a, b](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    for (Var in : {a, b}) {
                      if (!gr.requires_grad(in)) continue;
                      Tensor<T>& gi = gr.grad(in);
                      for (std::size_t i = 0; i < gy.size(); ++i) gi[i] += gy[i];
                    }
                  },
                  "add");
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_same_shape(av.shape(), bv.shape(), "sub");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.record(std::move(out), {a, b},
                  [a, b](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    if (gr.requires_grad(a)) {
                      Tensor<T>& ga = gr.grad(a);
                      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                    }
                    if (gr.requires_grad(b)) {
                      Tensor<T>& gb = gr.grad(b);
                      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
                    }
                  },
                  "sub");
}

template <class T>
Var scale(Graph<T>& g, Var a, T factor) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v *= factor;
  return g.record(std::move(out), {a},
                  [a, factor](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    Tensor<T>& ga = gr.grad(a);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += factor * gy[i];
                  },
                  "scale");
}

template <class T>
Var add_scalar(Graph<T>& g, Var a, T offset) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v += offset;
  return g.record(std::move(out), {a},
                  [a](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    Tensor<T>& ga = gr.grad(a);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                  },
                  "add_scalar");
}

template <class T>
Var abs(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v = std::abs(v);
  return g.record(std::move(out), {a},
                  [a](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    const Tensor<T>& x = gr.value(a);
                    Tensor<T>& ga = gr.grad(a);
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                      const T s = x[i] > T{0} ? T{1} : (x[i] < T{0} ? T{-1} : T{0});
                      ga[i] += s * gy[i];
                    }
                  },
                  "abs");
}

template <class T>
Var square(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v = v * v;
  return g.record(std::move(out), {a},
                  [a](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    const Tensor<T>& x = gr.value(a);
                    Tensor<T>& ga = gr.grad(a);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += T{2} * x[i] * gy[i];
                  },
                  "square");
}

template <class T>
Var log(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v = std::log(v);
  return g.record(std::move(out), {a},
                  [a](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    const Tensor<T>& x = gr.value(a);
                    Tensor<T>& ga = gr.grad(a);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / x[i];
                  },
                  "log");
}

/// Gradient passes where lo <= x <= hi and is zero outside.
template <class T>
Var clamp(Graph<T>& g, Var a, T lo, T hi) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v = std::min(std::max(v, lo), hi);
  return g.record(std::move(out), {a},
                  [a, lo, hi](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    const Tensor<T>& x = gr.value(a);
                    Tensor<T>& ga = gr.grad(a);
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                      if (x[i] >= lo && x[i] <= hi) ga[i] += gy[i];
                    }
                  },
                  "clamp");
}

/// Logistic function. Outputs are kept strictly inside (0, 1) even where the
/// exact value rounds to an endpoint in T.
template <class T>
Var sigmoid(Graph<T>& g, Var a) {
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T{1}, T{0});
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v = std::min(std::max(detail::stable_sigmoid(v), lo), hi);
  return g.record(std::move(out), {a},
                  [a](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    const Tensor<T>& s = gr.value(Var{self});
                    Tensor<T>& ga = gr.grad(a);
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                      ga[i] += gy[i] * s[i] * (T{1} - s[i]);
                    }
                  },
                  "sigmoid");
}

template <class T>
Var leaky_relu(Graph<T>& g, Var a, T slope) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v = v > T{0} ? v : slope * v;
  return g.record(std::move(out), {a},
                  [a, slope](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    const Tensor<T>& x = gr.value(a);
                    Tensor<T>& ga = gr.grad(a);
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                      ga[i] += x[i] > T{0} ? gy[i] : slope * gy[i];
                    }
                  },
                  "leaky_relu");
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var sum(Graph<T>& g, Var a) {
  const Tensor<T>& x = g.value(a);
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return g.record(Tensor<T>::scalar(static_cast<T>(acc)), {a},
                  [a](Graph<T>& gr, std::size_t self) {
                    const T gy = gr.grad(Var{self})[0];
                    Tensor<T>& ga = gr.grad(a);
                    for (auto& v : ga.data()) v += gy;
                  },
                  "sum");
}

template <class T>
Var mean(Graph<T>& g, Var a) {
  const Tensor<T>& x = g.value(a);
  const std::size_t n = x.size();
  detail::require(n > 0, "mean of an empty tensor");
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return g.record(Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {a},
                  [a, n](Graph<T>& gr, std::size_t self) {
                    const T gy = gr.grad(Var{self})[0] / static_cast<T>(n);
                    Tensor<T>& ga = gr.grad(a);
                    for (auto& v : ga.data()) v += gy;
                  },
                  "mean");
}

// ---------------------------------------------------------------------------
// Convolutions

/// input (B, Cin, W), weights (Cout, Cin, K), bias of Cout values or an
/// invalid Var for none. Zero padding on both sides.
template <class T>
Var conv1d(Graph<T>& g, Var input, Var weights, Var bias, std::size_t stride,
           std::size_t padding) {
  const Tensor<T>& x = g.value(input);
  const Tensor<T>& w = g.value(weights);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (xs.channels != ws.channels) {
    throw ShapeError("conv1d: input " + xs.str() + " has " + std::to_string(xs.channels) +
                     " channels but weights " + ws.str() + " expect " +
                     std::to_string(ws.channels));
  }
  detail::require(ws.width >= 1, "conv1d: kernel size must be >= 1");
  detail::require(stride >= 1, "conv1d: stride must be >= 1");
  if (xs.width + 2 * padding < ws.width) {
    throw ShapeError("conv1d: padded input width " + std::to_string(xs.width + 2 * padding) +
                     " of input " + xs.str() + " is smaller than kernel of weights " + ws.str());
  }
  const T* bptr = nullptr;
  if (bias.valid()) {
    const Tensor<T>& bv = g.value(bias);
    if (bv.size() != ws.batch) {
      throw ShapeError("conv1d: bias " + bv.shape().str() + " does not match weights " +
                       ws.str());
    }
    bptr = bv.data().data();
  }
  kernels::ConvGeometry geo{xs.batch, xs.channels, xs.width, ws.batch,
                            kernels::conv_output_width(xs.width, ws.width, stride, padding),
                            ws.width, stride, padding};
  Tensor<T> out(Shape{xs.batch, ws.batch, geo.out_width});
  kernels::conv_forward(x.data().data(), w.data().data(), bptr, out.data().data(), geo);

  return g.record(
      std::move(out), {input, weights, bias},
      [input, weights, bias, geo](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& gy = gr.grad(Var{self});
        if (gr.requires_grad(input)) {
          kernels::conv_input_grad(gy.data().data(), gr.value(weights).data().data(),
                                   gr.grad(input).data().data(), geo);
        }
        if (gr.requires_grad(weights)) {
          kernels::conv_weight_grad(gr.value(input).data().data(), gy.data().data(),
                                    gr.grad(weights).data().data(), geo);
        }
        if (bias.valid() && gr.requires_grad(bias)) {
          Tensor<T>& gb = gr.grad(bias);
          for (std::size_t b = 0; b < geo.batch; ++b) {
            for (std::size_t o = 0; o < geo.out_channels; ++o) {
              const T* row = gy.row(b, o);
              T s{0};
              for (std::size_t t = 0; t < geo.out_width; ++t) s += row[t];
              gb[o] += s;
            }
          }
        }
      },
      "conv1d");
}

/// Adjoint of conv1d with respect to its input. input (B, Cin, W), weights
/// (Cin, Cout, K); output width (W - 1) * stride - 2 * padding + K.
template <class T>
Var conv1d_transposed(Graph<T>& g, Var input, Var weights, Var bias, std::size_t stride,
                      std::size_t padding) {
  const Tensor<T>& x = g.value(input);
  const Tensor<T>& w = g.value(weights);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (xs.channels != ws.batch) {
    throw ShapeError("conv1d_transposed: input " + xs.str() + " has " +
                     std::to_string(xs.channels) + " channels but weights " + ws.str() +
                     " expect " + std::to_string(ws.batch));
  }
  detail::require(ws.width >= 1, "conv1d_transposed: kernel size must be >= 1");
  detail::require(stride >= 1, "conv1d_transposed: stride must be >= 1");
  detail::require(xs.width >= 1, "conv1d_transposed: empty input");
  const std::size_t full = (xs.width - 1) * stride + ws.width;
  if (full <= 2 * padding) {
    throw ShapeError("conv1d_transposed: padding " + std::to_string(padding) +
                     " leaves no output for input " + xs.str() + " and weights " + ws.str());
  }
  const std::size_t out_w = full - 2 * padding;
  // Geometry of the forward convolution this operation is the adjoint of.
  kernels::ConvGeometry geo{xs.batch, ws.channels, out_w, ws.batch, xs.width,
                            ws.width, stride, padding};
  Tensor<T> out(Shape{xs.batch, ws.channels, out_w});
  if (bias.valid()) {
    const Tensor<T>& bv = g.value(bias);
    if (bv.size() != ws.channels) {
      throw ShapeError("conv1d_transposed: bias " + bv.shape().str() +
                       " does not match weights " + ws.str());
    }
    for (std::size_t b = 0; b < xs.batch; ++b) {
      for (std::size_t c = 0; c < ws.channels; ++c) {
        std::fill(out.row(b, c), out.row(b, c) + out_w, bv[c]);
      }
    }
  }
  kernels::conv_input_grad(x.data().data(), w.data().data(), out.data().data(), geo);

  return g.record(
      std::move(out), {input, weights, bias},
      [input, weights, bias, geo](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& gy = gr.grad(Var{self});
        if (gr.requires_grad(input)) {
          Tensor<T>& gx = gr.grad(input);
          std::vector<T> tmp(gx.size());
          kernels::conv_forward(gy.data().data(), gr.value(weights).data().data(),
                                static_cast<const T*>(nullptr), tmp.data(), geo);
          for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        }
        if (gr.requires_grad(weights)) {
          kernels::conv_weight_grad(gy.data().data(), gr.value(input).data().data(),
                                    gr.grad(weights).data().data(), geo);
        }
        if (bias.valid() && gr.requires_grad(bias)) {
          Tensor<T>& gb = gr.grad(bias);
          for (std::size_t b = 0; b < geo.batch; ++b) {
            for (std::size_t c = 0; c < geo.in_channels; ++c) {
              const T* row = gy.row(b, c);
              T s{0};
              for (std::size_t t = 0; t < geo.in_width; ++t) s += row[t];
              gb[c] += s;
            }
          }
        }
      },
      "conv1d_transposed");
}

// ---------------------------------------------------------------------------
// Gating, normalization, rearrangement

/// linear * sigmoid(gate), elementwise.
template <class T>
Var glu(Graph<T>& g, Var linear, Var gate) {
  const Tensor<T>& a = g.value(linear);
  const Tensor<T>& z = g.value(gate);
  require_same_shape(a.shape(), z.shape(), "glu");
  Tensor<T> s(a.shape());
  detail::sigmoid_into(z.data().data(), s.data().data(), s.size());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s[i];
  return g.record(std::move(out), {linear, gate},
                  [linear, gate, s = std::move(s)](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    const Tensor<T>& av = gr.value(linear);
                    const std::size_t n = gy.size();
                    if (gr.requires_grad(linear)) {
                      T* ga = gr.grad(linear).data().data();
                      for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i] * s[i];
                    }
                    if (gr.requires_grad(gate)) {
                      T* gz = gr.grad(gate).data().data();
                      for (std::size_t i = 0; i < n; ++i) gz[i] += gy[i] * av[i] * s[i] * (T{1} - s[i]);
                    }
                  },
                  "glu");
}

/// Per (batch, channel) normalization over width followed by a per-channel
/// affine map.
template <class T>
Var instance_norm(Graph<T>& g, Var input, Var gain, Var bias, T epsilon) {
  const Tensor<T>& x = g.value(input);
  const Shape xs = x.shape();
  detail::require(epsilon > T{0}, "instance_norm: epsilon must be positive");
  if (g.value(gain).size() != xs.channels || g.value(bias).size() != xs.channels) {
    throw ShapeError("instance_norm: gain " + g.value(gain).shape().str() + " / bias " +
                     g.value(bias).shape().str() + " do not match input " + xs.str());
  }
  const Tensor<T>& gv = g.value(gain);
  const Tensor<T>& bv = g.value(bias);
  const std::size_t n = xs.width;
  Tensor<T> normalized(xs);
  std::vector<T> inv_std(xs.batch * xs.channels);
  Tensor<T> out(xs);
  for (std::size_t b = 0; b < xs.batch; ++b) {
    for (std::size_t c = 0; c < xs.channels; ++c) {
      const T* row = x.row(b, c);
      double m = 0.0;
      for (std::size_t t = 0; t < n; ++t) m += row[t];
      m /= static_cast<double>(n);
      double v = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double d = row[t] - m;
        v += d * d;
      }
      v /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(v + static_cast<double>(epsilon));
      inv_std[b * xs.channels + c] = static_cast<T>(is);
      T* xh = normalized.row(b, c);
      T* y = out.row(b, c);
      for (std::size_t t = 0; t < n; ++t) {
        xh[t] = static_cast<T>((row[t] - m) * is);
        y[t] = gv[c] * xh[t] + bv[c];
      }
    }
  }
  return g.record(
      std::move(out), {input, gain, bias},
      [input, gain, bias, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Graph<T>& gr, std::size_t self) {
        const Tensor<T>& gy = gr.grad(Var{self});
        const Shape s = gy.shape();
        const std::size_t n = s.width;
        const Tensor<T>& gv = gr.value(gain);
        const bool gx_on = gr.requires_grad(input);
        const bool gg_on = gr.requires_grad(gain);
        const bool gb_on = gr.requires_grad(bias);
        for (std::size_t b = 0; b < s.batch; ++b) {
          for (std::size_t c = 0; c < s.channels; ++c) {
            const T* dy = gy.row(b, c);
            const T* xh = normalized.row(b, c);
            double sum_dy = 0.0;
            double sum_dy_xh = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
              sum_dy += dy[t];
              sum_dy_xh += static_cast<double>(dy[t]) * xh[t];
            }
            if (gg_on) gr.grad(gain)[c] += static_cast<T>(sum_dy_xh);
            if (gb_on) gr.grad(bias)[c] += static_cast<T>(sum_dy);
            if (gx_on) {
              const double gamma = gv[c];
              const double is = inv_std[b * s.channels + c];
              const double m1 = gamma * sum_dy / static_cast<double>(n);
              const double m2 = gamma * sum_dy_xh / static_cast<double>(n);
              T* dx = gr.grad(input).row(b, c);
              for (std::size_t t = 0; t < n; ++t) {
                dx[t] += static_cast<T>(is * (gamma * dy[t] - m1 - xh[t] * m2));
              }
            }
          }
        }
      },
      "instance_norm");
}

/// (B, C*r, W) -> (B, C, W*r) with out[b, c, t*r + j] = in[b, c*r + j, t].
template <class T>
Var pixel_shuffle_1d(Graph<T>& g, Var input, std::size_t r) {
  const Tensor<T>& x = g.value(input);
  const Shape xs = x.shape();
  detail::require(r >= 1, "pixel_shuffle_1d: factor must be >= 1");
  if (xs.channels % r != 0) {
    throw ShapeError("pixel_shuffle_1d: " + std::to_string(xs.channels) +
                     " channels of input " + xs.str() + " not divisible by factor " +
                     std::to_string(r));
  }
  const std::size_t c_out = xs.channels / r;
  Tensor<T> out(Shape{xs.batch, c_out, xs.width * r});
  for (std::size_t b = 0; b < xs.batch; ++b) {
    for (std::size_t c = 0; c < c_out; ++c) {
      T* dst = out.row(b, c);
      for (std::size_t j = 0; j < r; ++j) {
        const T* src = x.row(b, c * r + j);
        for (std::size_t t = 0; t < xs.width; ++t) dst[t * r + j] = src[t];
      }
    }
  }
  return g.record(std::move(out), {input},
                  [input, r, xs, c_out](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    Tensor<T>& gx = gr.grad(input);
                    for (std::size_t b = 0; b < xs.batch; ++b) {
                      for (std::size_t c = 0; c < c_out; ++c) {
                        const T* src = gy.row(b, c);
                        for (std::size_t j = 0; j < r; ++j) {
                          T* dst = gx.row(b, c * r + j);
                          for (std::size_t t = 0; t < xs.width; ++t) dst[t] += src[t * r + j];
                        }
                      }
                    }
                  },
                  "pixel_shuffle_1d");
}

/// Inverse rearrangement of pixel_shuffle_1d: (B, C, W*r) -> (B, C*r, W).
template <class T>
Tensor<T> pixel_unshuffle_1d(const Tensor<T>& x, std::size_t r) {
  const Shape xs = x.shape();
  if (r == 0 || xs.width % r != 0) {
    throw ShapeError("pixel_unshuffle_1d: width of " + xs.str() + " not divisible by " +
                     std::to_string(r));
  }
  const std::size_t w = xs.width / r;
  Tensor<T> out(Shape{xs.batch, xs.channels * r, w});
  for (std::size_t b = 0; b < xs.batch; ++b) {
    for (std::size_t c = 0; c < xs.channels; ++c) {
      for (std::size_t j = 0; j < r; ++j) {
        for (std::size_t t = 0; t < w; ++t) out(b, c * r + j, t) = x(b, c, t * r + j);
      }
    }
  }
  return out;
}

/// Concatenates along channels; batch and width must agree.
template <class T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  const Shape as = av.shape();
  const Shape bs = bv.shape();
  if (as.batch != bs.batch || as.width != bs.width) {
    throw ShapeError("concat_channels: shape mismatch " + as.str() + " vs " + bs.str());
  }
  Tensor<T> out(Shape{as.batch, as.channels + bs.channels, as.width});
  for (std::size_t n = 0; n < as.batch; ++n) {
    std::copy(av.row(n, 0), av.row(n, 0) + as.channels * as.width, out.row(n, 0));
    std::copy(bv.row(n, 0), bv.row(n, 0) + bs.channels * bs.width, out.row(n, as.channels));
  }
  return g.record(std::move(out), {a, b},
                  [a, b, as, bs](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    for (std::size_t n = 0; n < as.batch; ++n) {
                      if (gr.requires_grad(a)) {
                        T* dst = gr.grad(a).row(n, 0);
                        const T* src = gy.row(n, 0);
                        for (std::size_t i = 0; i < as.channels * as.width; ++i) dst[i] += src[i];
                      }
                      if (gr.requires_grad(b)) {
                        T* dst = gr.grad(b).row(n, 0);
                        const T* src = gy.row(n, as.channels);
                        for (std::size_t i = 0; i < bs.channels * bs.width; ++i) dst[i] += src[i];
                      }
                    }
                  },
                  "concat_channels");
}

/// Fully connected layer over each batch item flattened to C*W features.
/// weights (Out, 1, C*W), bias Out values; output (B, Out, 1).
template <class T>
Var linear(Graph<T>& g, Var input, Var weights, Var bias) {
  const Tensor<T>& x = g.value(input);
  const Tensor<T>& w = g.value(weights);
  const Shape xs = x.shape();
  const std::size_t features = xs.channels * xs.width;
  const std::size_t outs = w.shape().batch;
  if (w.shape().width != features || w.shape().channels != 1) {
    throw ShapeError("linear: weights " + w.shape().str() + " do not match input " + xs.str());
  }
  if (bias.valid() && g.value(bias).size() != outs) {
    throw ShapeError("linear: bias " + g.value(bias).shape().str() + " does not match weights " +
                     w.shape().str());
  }
  Tensor<T> out(Shape{xs.batch, outs, 1});
  for (std::size_t b = 0; b < xs.batch; ++b) {
    for (std::size_t o = 0; o < outs; ++o) {
      const T base = bias.valid() ? g.value(bias)[o] : T{0};
      out(b, o, 0) = base + kernels::dot(x.row(b, 0), w.row(o, 0), features);
    }
  }
  return g.record(std::move(out), {input, weights, bias},
                  [input, weights, bias, xs, features, outs](Graph<T>& gr, std::size_t self) {
                    const Tensor<T>& gy = gr.grad(Var{self});
                    for (std::size_t b = 0; b < xs.batch; ++b) {
                      for (std::size_t o = 0; o < outs; ++o) {
                        const T d = gy(b, o, 0);
                        if (gr.requires_grad(input)) {
                          kernels::axpy(d, gr.value(weights).row(o, 0), gr.grad(input).row(b, 0),
                                        features);
                        }
                        if (gr.requires_grad(weights)) {
                          kernels::axpy(d, gr.value(input).row(b, 0), gr.grad(weights).row(o, 0),
                                        features);
                        }
                        if (bias.valid() && gr.requires_grad(bias)) gr.grad(bias)[o] += d;
                      }
                    }
                  },
                  "linear");
}

/// Value copy without gradient provenance.
template <class T>
Var detach(Graph<T>& g, Var a) {
  return g.constant(g.value(a));
}

}  // namespace s2n
