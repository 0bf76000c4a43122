#pragma once

// Direct 1-D convolution kernels shared by conv1d and conv1d_transposed.
//
// All three passes reduce to two register-tiled primitives over "source rows":
// the stride phases of the zero-padded input, shifted by tap. In the forward
// pass every output element is accumulated in a fixed order (bias first, then
// input channel, then tap), independent of the tiling.

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace s2n::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_width = 1;
  std::size_t out_channels = 1;
  std::size_t out_width = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // Length of one stride phase of a zero-padded input row.
  std::size_t plane_length() const {
    const std::size_t by_output = out_width + (kernel - 1) / stride;
    const std::size_t by_input = (in_width + 2 * padding + stride - 1) / stride;
    return std::max(by_output, by_input);
  }
};

inline std::size_t conv_output_width(std::size_t width, std::size_t kernel, std::size_t stride,
                                     std::size_t padding) {
  return (width + 2 * padding - kernel) / stride + 1;
}

// Rearranges the zero-padded rows of one batch item into stride phases:
// padded[t * stride + k] == plane(i, k % stride)[t + k / stride].
template <class T>
void split_phases(const T* x, const ConvGeometry& g, T* planes) {
  const std::size_t len = g.plane_length();
  std::fill(planes, planes + g.in_channels * g.stride * len, T{0});
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    const T* row = x + i * g.in_width;
    T* base = planes + i * g.stride * len;
    if (g.stride == 1) {
      std::copy(row, row + g.in_width, base + g.padding);
      continue;
    }
    for (std::size_t r = 0; r < g.stride; ++r) {
      // first p with (p + padding) % stride == r
      const std::size_t p0 = (r + g.stride - g.padding % g.stride) % g.stride;
      T* dst = base + r * len + (p0 + g.padding) / g.stride;
      for (std::size_t p = p0; p < g.in_width; p += g.stride) *dst++ = row[p];
    }
  }
}

template <class T>
void merge_phases(const T* planes, const ConvGeometry& g, T* x) {
  const std::size_t len = g.plane_length();
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    T* row = x + i * g.in_width;
    const T* base = planes + i * g.stride * len;
    for (std::size_t r = 0; r < g.stride; ++r) {
      const std::size_t p0 = (r + g.stride - g.padding % g.stride) % g.stride;
      const T* src = base + r * len + (p0 + g.padding) / g.stride;
      for (std::size_t p = p0; p < g.in_width; p += g.stride) row[p] += *src++;
    }
  }
}

// Source row c of the convolution, c = i * kernel + k.
template <class T>
void tap_rows(const T* planes, const ConvGeometry& g, std::vector<const T*>& rows) {
  const std::size_t len = g.plane_length();
  rows.resize(g.in_channels * g.kernel);
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    for (std::size_t k = 0; k < g.kernel; ++k) {
      rows[i * g.kernel + k] = planes + (i * g.stride + k % g.stride) * len + k / g.stride;
    }
  }
}

template <class T>
inline void axpy(T a, const T* __restrict x, T* __restrict y, std::size_t n) {
  for (std::size_t t = 0; t < n; ++t) y[t] += a * x[t];
}

template <class T>
inline T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T part[kLanes] = {};
  std::size_t t = 0;
  for (; t + kLanes <= n; t += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) part[l] += a[t + l] * b[t + l];
  }
  T tail{0};
  for (; t < n; ++t) tail += a[t] * b[t];
  T s{0};
  for (std::size_t l = 0; l < kLanes; ++l) s += part[l];
  return s + tail;
}

namespace detail {

template <class T>
struct Vec;
template <>
struct Vec<float> {
  typedef float type __attribute__((vector_size(64)));
  static constexpr std::size_t lanes = 16;
};
template <>
struct Vec<double> {
  typedef double type __attribute__((vector_size(64)));
  static constexpr std::size_t lanes = 8;
};

// Weight of output row r, source c: a[r * rs + c * cs].
template <class T>
struct Weights {
  const T* a;
  std::size_t rs;
  std::size_t cs;
  T operator()(std::size_t r, std::size_t c) const { return a[r * rs + c * cs]; }
};

template <class T, std::size_t RB, std::size_t NV>
void combine_tile(const Weights<T>& w, const T* init, const T* const* src, std::size_t sources,
                  std::size_t r0, std::size_t t0, T* out, std::size_t out_stride) {
  using V = typename Vec<T>::type;
  constexpr std::size_t L = Vec<T>::lanes;
  V acc[RB][NV];
  for (std::size_t r = 0; r < RB; ++r) {
    const T b = init != nullptr ? init[r0 + r] : T{0};
    for (std::size_t n = 0; n < NV; ++n) acc[r][n] = V{} + b;
  }
  for (std::size_t c = 0; c < sources; ++c) {
    V s[NV];
    for (std::size_t n = 0; n < NV; ++n) std::memcpy(&s[n], src[c] + t0 + n * L, sizeof(V));
    for (std::size_t r = 0; r < RB; ++r) {
      const T wv = w(r0 + r, c);
      for (std::size_t n = 0; n < NV; ++n) acc[r][n] += wv * s[n];
    }
  }
  for (std::size_t r = 0; r < RB; ++r) {
    for (std::size_t n = 0; n < NV; ++n) {
      std::memcpy(out + (r0 + r) * out_stride + t0 + n * L, &acc[r][n], sizeof(V));
    }
  }
}

template <class T, std::size_t RB>
void combine_block(const Weights<T>& w, const T* init, const T* const* src, std::size_t sources,
                   std::size_t r0, std::size_t width, T* out, std::size_t out_stride,
                   std::size_t t0 = 0) {
  constexpr std::size_t L = Vec<T>::lanes;
  for (; t0 + 2 * L <= width; t0 += 2 * L) {
    combine_tile<T, RB, 2>(w, init, src, sources, r0, t0, out, out_stride);
  }
  for (; t0 + L <= width; t0 += L) combine_tile<T, RB, 1>(w, init, src, sources, r0, t0, out, out_stride);
  for (std::size_t r = r0; r < r0 + RB; ++r) {
    for (std::size_t t = t0; t < width; ++t) {
      T acc = init != nullptr ? init[r] : T{0};
      for (std::size_t c = 0; c < sources; ++c) acc += w(r, c) * src[c][t];
      out[r * out_stride + t] = acc;
    }
  }
}

// out[r][t] = init[r] + sum_c w(r, c) * src[c][t], summed in ascending c.
template <class T>
void combine_rows(const Weights<T>& w, const T* init, const std::vector<const T*>& src,
                  std::size_t rows, std::size_t width, T* out, std::size_t out_stride) {
  std::size_t r0 = 0;
  if (rows < 4) {
    // Too few rows to hide FMA latency; widen the tile instead.
    constexpr std::size_t L = Vec<T>::lanes;
    for (; r0 < rows; ++r0) {
      std::size_t t0 = 0;
      for (; t0 + 8 * L <= width; t0 += 8 * L) {
        combine_tile<T, 1, 8>(w, init, src.data(), src.size(), r0, t0, out, out_stride);
      }
      combine_block<T, 1>(w, init, src.data(), src.size(), r0, width, out, out_stride, t0);
    }
    return;
  }
  for (; r0 + 8 <= rows; r0 += 8) combine_block<T, 8>(w, init, src.data(), src.size(), r0, width, out, out_stride);
  for (; r0 + 4 <= rows; r0 += 4) combine_block<T, 4>(w, init, src.data(), src.size(), r0, width, out, out_stride);
  for (; r0 < rows; ++r0) combine_block<T, 1>(w, init, src.data(), src.size(), r0, width, out, out_stride);
}

// Rows of batch item b live at g[b * g_count + r] and src[b * src_count + c];
// the accumulators stay in registers across the whole batch.
struct RowSets {
  std::size_t batch;
  std::size_t g_count;
  std::size_t src_count;
};

template <class T, std::size_t RB, std::size_t CB>
void correlate_tile(const T* const* g, const T* const* src, const RowSets& rs, std::size_t r0,
                    std::size_t c0, std::size_t width, T* d, std::size_t d_stride) {
  using V = typename Vec<T>::type;
  constexpr std::size_t L = Vec<T>::lanes;
  V acc[RB][CB] = {};
  T tail[RB][CB] = {};
  for (std::size_t b = 0; b < rs.batch; ++b) {
    const T* const* gb = g + b * rs.g_count + r0;
    const T* const* sb = src + b * rs.src_count + c0;
    std::size_t t = 0;
    for (; t + L <= width; t += L) {
      V gv[RB];
      for (std::size_t r = 0; r < RB; ++r) std::memcpy(&gv[r], gb[r] + t, sizeof(V));
      for (std::size_t c = 0; c < CB; ++c) {
        V s;
        std::memcpy(&s, sb[c] + t, sizeof(V));
        for (std::size_t r = 0; r < RB; ++r) acc[r][c] += gv[r] * s;
      }
    }
    for (; t < width; ++t) {
      for (std::size_t r = 0; r < RB; ++r) {
        for (std::size_t c = 0; c < CB; ++c) tail[r][c] += gb[r][t] * sb[c][t];
      }
    }
  }
  for (std::size_t r = 0; r < RB; ++r) {
    for (std::size_t c = 0; c < CB; ++c) {
      T sum{0};
      for (std::size_t l = 0; l < L; ++l) sum += acc[r][c][l];
      d[(r0 + r) * d_stride + c0 + c] += sum + tail[r][c];
    }
  }
}

template <class T, std::size_t RB>
void correlate_block(const T* const* g, const T* const* src, const RowSets& rs, std::size_t r0,
                     std::size_t width, T* d, std::size_t d_stride) {
  std::size_t c0 = 0;
  for (; c0 + 6 <= rs.src_count; c0 += 6) correlate_tile<T, RB, 6>(g, src, rs, r0, c0, width, d, d_stride);
  for (; c0 + 2 <= rs.src_count; c0 += 2) correlate_tile<T, RB, 2>(g, src, rs, r0, c0, width, d, d_stride);
  for (; c0 < rs.src_count; ++c0) correlate_tile<T, RB, 1>(g, src, rs, r0, c0, width, d, d_stride);
}

// d[r][c] += sum_{b,t} g[b][r][t] * src[b][c][t]
template <class T>
void correlate_rows(const std::vector<const T*>& g, const std::vector<const T*>& src,
                    const RowSets& rs, std::size_t width, T* d, std::size_t d_stride) {
  std::size_t r0 = 0;
  for (; r0 + 4 <= rs.g_count; r0 += 4) correlate_block<T, 4>(g.data(), src.data(), rs, r0, width, d, d_stride);
  for (; r0 < rs.g_count; ++r0) correlate_block<T, 1>(g.data(), src.data(), rs, r0, width, d, d_stride);
}

}  // namespace detail

// y[b,o,t] = bias[o] + sum_{i,k} x[b,i,t*stride+k-padding] * w[o,i,k]
template <class T>
void conv_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeometry& g) {
  std::vector<T> planes(g.in_channels * g.stride * g.plane_length());
  std::vector<const T*> rows;
  const detail::Weights<T> wt{w, g.in_channels * g.kernel, 1};
  for (std::size_t b = 0; b < g.batch; ++b) {
    split_phases(x + b * g.in_channels * g.in_width, g, planes.data());
    tap_rows(planes.data(), g, rows);
    detail::combine_rows(wt, bias, rows, g.out_channels, g.out_width,
                         y + b * g.out_channels * g.out_width, g.out_width);
  }
}

// gx[b,i,:] += adjoint of conv_forward applied to gy. Also the forward pass of
// the transposed convolution.
template <class T>
void conv_input_grad(const T* gy, const T* w, T* gx, const ConvGeometry& g) {
  if (g.stride == 1 && g.padding < g.kernel && g.out_channels <= g.in_channels) {
    // Unit stride: a forward convolution of gy with the flipped, transposed kernel.
    ConvGeometry f;
    f.batch = 1;
    f.in_channels = g.out_channels;
    f.in_width = g.out_width;
    f.out_channels = g.in_channels;
    f.out_width = g.in_width;
    f.kernel = g.kernel;
    f.stride = 1;
    f.padding = g.kernel - 1 - g.padding;
    const std::size_t taps = g.out_channels * g.kernel;
    std::vector<T> flipped(g.in_channels * taps);
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t i = 0; i < g.in_channels; ++i) {
        for (std::size_t k = 0; k < g.kernel; ++k) {
          flipped[i * taps + o * g.kernel + (g.kernel - 1 - k)] = w[(o * g.in_channels + i) * g.kernel + k];
        }
      }
    }
    std::vector<T> planes(f.in_channels * f.plane_length());
    std::vector<T> out(g.in_channels * g.in_width);
    std::vector<const T*> rows;
    const detail::Weights<T> wt{flipped.data(), taps, 1};
    for (std::size_t b = 0; b < g.batch; ++b) {
      split_phases(gy + b * g.out_channels * g.out_width, f, planes.data());
      tap_rows(planes.data(), f, rows);
      detail::combine_rows(wt, static_cast<const T*>(nullptr), rows, g.in_channels, g.in_width,
                           out.data(), g.in_width);
      T* dst = gx + b * g.in_channels * g.in_width;
      for (std::size_t n = 0; n < out.size(); ++n) dst[n] += out[n];
    }
    return;
  }
  const std::size_t len = g.plane_length();
  const std::size_t taps = g.in_channels * g.kernel;
  std::vector<T> planes(g.in_channels * g.stride * len);
  std::vector<T> per_tap(taps * g.out_width);
  std::vector<const T*> rows(g.out_channels);
  const detail::Weights<T> wt{w, 1, taps};
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      rows[o] = gy + (b * g.out_channels + o) * g.out_width;
    }
    detail::combine_rows(wt, static_cast<const T*>(nullptr), rows, taps, g.out_width,
                         per_tap.data(), g.out_width);
    std::fill(planes.begin(), planes.end(), T{0});
    for (std::size_t i = 0; i < g.in_channels; ++i) {
      for (std::size_t k = 0; k < g.kernel; ++k) {
        T* dst = planes.data() + (i * g.stride + k % g.stride) * len + k / g.stride;
        const T* src = per_tap.data() + (i * g.kernel + k) * g.out_width;
        for (std::size_t t = 0; t < g.out_width; ++t) dst[t] += src[t];
      }
    }
    merge_phases(planes.data(), g, gx + b * g.in_channels * g.in_width);
  }
}

// gw[o,i,k] += sum_{b,t} gy[b,o,t] * x[b,i,t*stride+k-padding]
template <class T>
void conv_weight_grad(const T* x, const T* gy, T* gw, const ConvGeometry& g) {
  const std::size_t item = g.in_channels * g.stride * g.plane_length();
  const std::size_t taps = g.in_channels * g.kernel;
  std::vector<T> planes(item * g.batch);
  std::vector<const T*> rows(taps * g.batch);
  std::vector<const T*> grads(g.out_channels * g.batch);
  std::vector<const T*> item_rows;
  for (std::size_t b = 0; b < g.batch; ++b) {
    split_phases(x + b * g.in_channels * g.in_width, g, planes.data() + b * item);
    tap_rows(planes.data() + b * item, g, item_rows);
    std::copy(item_rows.begin(), item_rows.end(), rows.begin() + b * taps);
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      grads[b * g.out_channels + o] = gy + (b * g.out_channels + o) * g.out_width;
    }
  }
  detail::correlate_rows(grads, rows, detail::RowSets{g.batch, g.out_channels, taps}, g.out_width, gw, taps);
}

}  // namespace s2n::kernels
