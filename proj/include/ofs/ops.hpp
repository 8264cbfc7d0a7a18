#pragma once

// Fixed-size neural operations on NCHW tensors with their exact backward passes.
// Convolutions are stride 1 with zero "same" padding of (s-1)/2 on every border.

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofs/tensor.hpp"

namespace ofs {

namespace detail {

// Valid output range [lo, hi) for an output index i such that i + offset is inside [0, n).
struct Span1D {
  std::size_t lo;
  std::size_t hi;
};

inline Span1D valid_range(std::size_t n, std::ptrdiff_t offset) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -offset);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(sn, sn - offset);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline void check_conv_shapes(const Tensor& input, const FilterBank& filters) {
  require_rank(input, 4, "conv2d_same input");
  if (input.dim(1) != filters.in_channels()) {
    throw std::invalid_argument("conv2d_same: input shape " + shape_str(input.shape()) +
                                " does not match filter shape " +
                                shape_str(filters.weights().shape()));
  }
}

// Dot product with eight interleaved partial sums, combined in a fixed order.
inline double dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

}  // namespace detail

/// Unfolds one [C, H, W] plane stack into columns: row (c*s + ky)*s + kx holds the
/// input shifted by (ky - s/2, kx - s/2) with zeros outside the image.
inline void im2col_same(const double* src, std::size_t channels, std::size_t h, std::size_t w,
                        std::size_t s, std::vector<double>& col) {
  const auto pad = static_cast<std::ptrdiff_t>(s / 2);
  const std::size_t plane = h * w;
  col.assign(channels * s * s * plane, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* in = src + c * plane;
    for (std::size_t ky = 0; ky < s; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
      const auto rows = detail::valid_range(h, dy);
      for (std::size_t kx = 0; kx < s; ++kx) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const auto cols = detail::valid_range(w, dx);
        double* dst = col.data() + ((c * s + ky) * s + kx) * plane;
        for (std::size_t y = rows.lo; y < rows.hi; ++y) {
          const double* row = in + static_cast<std::ptrdiff_t>((y + dy) * w) + dx;
          std::copy(row + cols.lo, row + cols.hi, dst + y * w + cols.lo);
        }
      }
    }
  }
}

/// Adjoint of im2col_same: accumulates columns back into a [C, H, W] stack.
inline void col2im_same(const std::vector<double>& col, std::size_t channels, std::size_t h,
                        std::size_t w, std::size_t s, double* dst) {
  const auto pad = static_cast<std::ptrdiff_t>(s / 2);
  const std::size_t plane = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    double* out = dst + c * plane;
    for (std::size_t ky = 0; ky < s; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
      const auto rows = detail::valid_range(h, dy);
      for (std::size_t kx = 0; kx < s; ++kx) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const auto cols = detail::valid_range(w, dx);
        const double* src = col.data() + ((c * s + ky) * s + kx) * plane;
        for (std::size_t y = rows.lo; y < rows.hi; ++y) {
          double* row = out + static_cast<std::ptrdiff_t>((y + dy) * w) + dx;
          const double* from = src + y * w;
          for (std::size_t x = cols.lo; x < cols.hi; ++x) row[x] += from[x];
        }
      }
    }
  }
}

/// Same-padded stride-1 convolution (cross-correlation, as in every CNN framework).
/// Output is (B, Cout, H, W) for every odd filter size.
inline Tensor conv2d_same(const Tensor& input, const FilterBank& filters,
                          std::span<const double> bias) {
  detail::check_conv_shapes(input, filters);
  if (bias.size() != filters.out_channels()) {
    throw std::invalid_argument("conv2d_same: bias has " + std::to_string(bias.size()) +
                                " entries, filter shape " +
                                shape_str(filters.weights().shape()));
  }
  const std::size_t batch = input.dim(0), cin = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t cout = filters.out_channels(), s = filters.size();
  const std::size_t plane = h * w, taps = cin * s * s;

  Tensor out({batch, cout, h, w});
  std::vector<double> col;
  for (std::size_t b = 0; b < batch; ++b) {
    im2col_same(input.data() + b * cin * plane, cin, h, w, s, col);
    for (std::size_t co = 0; co < cout; ++co) {
      double* dst = out.data() + (b * cout + co) * plane;
      std::fill(dst, dst + plane, bias[co]);
    }
    // Four output channels per pass over the columns.
    std::size_t co = 0;
    for (; co + 4 <= cout; co += 4) {
      double* __restrict d0 = out.data() + (b * cout + co) * plane;
      double* __restrict d1 = d0 + plane;
      double* __restrict d2 = d1 + plane;
      double* __restrict d3 = d2 + plane;
      const double* w0 = filters.weights().data() + co * taps;
      for (std::size_t t = 0; t < taps; ++t) {
        const double a0 = w0[t], a1 = w0[taps + t], a2 = w0[2 * taps + t], a3 = w0[3 * taps + t];
        const double* __restrict c = col.data() + t * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          d0[i] += a0 * c[i];
          d1[i] += a1 * c[i];
          d2[i] += a2 * c[i];
          d3[i] += a3 * c[i];
        }
      }
    }
    for (; co < cout; ++co) {
      double* __restrict dst = out.data() + (b * cout + co) * plane;
      const double* wrow = filters.weights().data() + co * taps;
      for (std::size_t t = 0; t < taps; ++t) {
        const double wt = wrow[t];
        const double* __restrict c = col.data() + t * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += wt * c[i];
      }
    }
  }
  return out;
}

/// Gradient of the loss w.r.t. the convolution input (a transposed convolution).
inline Tensor conv2d_same_grad_input(const Tensor& upstream, const FilterBank& filters) {
  require_rank(upstream, 4, "conv2d_same_grad_input upstream");
  if (upstream.dim(1) != filters.out_channels()) {
    throw std::invalid_argument("conv2d_same_grad_input: upstream shape " +
                                shape_str(upstream.shape()) + " vs filter shape " +
                                shape_str(filters.weights().shape()));
  }
  const std::size_t batch = upstream.dim(0), cout = upstream.dim(1);
  const std::size_t h = upstream.dim(2), w = upstream.dim(3);
  const std::size_t cin = filters.in_channels(), s = filters.size();
  const std::size_t plane = h * w, taps = cin * s * s;

  Tensor grad({batch, cin, h, w});
  std::vector<double> col(taps * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(col.begin(), col.end(), 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
      const double* up = upstream.data() + (b * cout + co) * plane;
      const double* wrow = filters.weights().data() + co * taps;
      for (std::size_t t = 0; t < taps; ++t) {
        const double wt = wrow[t];
        double* __restrict c = col.data() + t * plane;
        for (std::size_t i = 0; i < plane; ++i) c[i] += wt * up[i];
      }
    }
    col2im_same(col, cin, h, w, s, grad.data() + b * cin * plane);
  }
  return grad;
}

/// Gradient of the loss w.r.t. filter weights of size `size`, shape (Cout, Cin, size, size).
inline Tensor conv2d_same_grad_weights(const Tensor& input, const Tensor& upstream,
                                       std::size_t size) {
  require_rank(input, 4, "conv2d_same_grad_weights input");
  require_rank(upstream, 4, "conv2d_same_grad_weights upstream");
  if (input.dim(0) != upstream.dim(0) || input.dim(2) != upstream.dim(2) ||
      input.dim(3) != upstream.dim(3)) {
    throw std::invalid_argument("conv2d_same_grad_weights: input shape " +
                                shape_str(input.shape()) + " vs upstream shape " +
                                shape_str(upstream.shape()));
  }
  if (size % 2 == 0) throw std::invalid_argument("conv2d_same_grad_weights: even size");
  const std::size_t batch = input.dim(0), cin = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3), cout = upstream.dim(1);
  const std::size_t plane = h * w, taps = cin * size * size;

  Tensor grad({cout, cin, size, size});
  std::vector<double> col;
  for (std::size_t b = 0; b < batch; ++b) {
    im2col_same(input.data() + b * cin * plane, cin, h, w, size, col);
    for (std::size_t co = 0; co < cout; ++co) {
      const double* up = upstream.data() + (b * cout + co) * plane;
      double* grow = grad.data() + co * taps;
      for (std::size_t t = 0; t < taps; ++t) {
        grow[t] += detail::dot(up, col.data() + t * plane, plane);
      }
    }
  }
  return grad;
}

/// Per-channel bias gradient: upstream summed over batch and positions.
inline std::vector<double> conv_grad_bias(const Tensor& upstream) {
  require_rank(upstream, 4, "conv_grad_bias upstream");
  const std::size_t batch = upstream.dim(0), c = upstream.dim(1);
  const std::size_t plane = upstream.dim(2) * upstream.dim(3);
  std::vector<double> grad(c, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = upstream.data() + (b * c + ch) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      grad[ch] += acc;
    }
  }
  return grad;
}

inline std::size_t pooled_extent(std::size_t n, std::size_t window, std::size_t stride) {
  return (n - window) / stride + 1;
}

/// Average pooling without padding; windows overhanging the border are dropped.
inline Tensor avg_pool(const Tensor& input, std::size_t window, std::size_t stride) {
  require_rank(input, 4, "avg_pool input");
  if (window < 1 || stride < 1) {
    throw std::invalid_argument("avg_pool: window and stride must be >= 1");
  }
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    throw std::invalid_argument("avg_pool: window " + std::to_string(window) +
                                " exceeds input spatial extent " + shape_str(input.shape()));
  }
  const std::size_t oh = pooled_extent(h, window, stride), ow = pooled_extent(w, window, stride);
  const std::size_t planes = input.dim(0) * input.dim(1);
  const double scale = 1.0 / static_cast<double>(window * window);
  Tensor out({input.dim(0), input.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = input.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < window; ++dy) {
          const double* row = src + (y * stride + dy) * w + x * stride;
          for (std::size_t dx = 0; dx < window; ++dx) acc += row[dx];
        }
        dst[y * ow + x] = acc * scale;
      }
    }
  }
  return out;
}

inline Tensor avg_pool_backward(const Tensor& upstream, const Shape& input_shape,
                                std::size_t window, std::size_t stride) {
  Tensor grad(input_shape);
  const std::size_t h = input_shape[2], w = input_shape[3];
  const std::size_t oh = upstream.dim(2), ow = upstream.dim(3);
  const std::size_t planes = input_shape[0] * input_shape[1];
  const double scale = 1.0 / static_cast<double>(window * window);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* up = upstream.data() + p * oh * ow;
    double* dst = grad.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const double g = up[y * ow + x] * scale;
        for (std::size_t dy = 0; dy < window; ++dy) {
          double* row = dst + (y * stride + dy) * w + x * stride;
          for (std::size_t dx = 0; dx < window; ++dx) row[dx] += g;
        }
      }
    }
  }
  return grad;
}

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

/// Multiplies upstream by the 0/1 mask of `input > 0`.
inline Tensor relu_backward(const Tensor& upstream, const Tensor& input) {
  if (upstream.shape() != input.shape()) {
    throw std::invalid_argument("relu_backward: upstream shape " + shape_str(upstream.shape()) +
                                " vs input shape " + shape_str(input.shape()));
  }
  Tensor grad = upstream;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > 0.0)) grad[i] = 0.0;
  }
  return grad;
}

/// Affine map of every row: out[b] = weights * input[b] + bias, weights is (M, N).
inline Tensor linear(const Tensor& input, const Tensor& weights, std::span<const double> bias) {
  require_rank(input, 2, "linear input");
  require_rank(weights, 2, "linear weights");
  if (input.dim(1) != weights.dim(1) || bias.size() != weights.dim(0)) {
    throw std::invalid_argument("linear: input shape " + shape_str(input.shape()) +
                                ", weight shape " + shape_str(weights.shape()) + ", bias size " +
                                std::to_string(bias.size()));
  }
  const std::size_t batch = input.dim(0), n = input.dim(1), m = weights.dim(0);
  Tensor out({batch, m});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = input.data() + b * n;
    for (std::size_t j = 0; j < m; ++j) {
      const double* wr = weights.data() + j * n;
      double acc = bias[j];
      for (std::size_t i = 0; i < n; ++i) acc += wr[i] * x[i];
      out.at(b, j) = acc;
    }
  }
  return out;
}

struct LinearGrads {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};

inline LinearGrads linear_backward(const Tensor& upstream, const Tensor& input,
                                   const Tensor& weights) {
  require_rank(upstream, 2, "linear_backward upstream");
  const std::size_t batch = input.dim(0), n = input.dim(1), m = weights.dim(0);
  if (upstream.dim(0) != batch || upstream.dim(1) != m) {
    throw std::invalid_argument("linear_backward: upstream shape " +
                                shape_str(upstream.shape()) + " vs output [" +
                                std::to_string(batch) + "," + std::to_string(m) + "]");
  }
  LinearGrads g{Tensor({batch, n}), Tensor({m, n}), std::vector<double>(m, 0.0)};
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = input.data() + b * n;
    double* gx = g.input.data() + b * n;
    for (std::size_t j = 0; j < m; ++j) {
      const double u = upstream.at(b, j);
      const double* wr = weights.data() + j * n;
      double* gw = g.weights.data() + j * n;
      g.bias[j] += u;
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += u * wr[i];
        gw[i] += u * x[i];
      }
    }
  }
  return g;
}

}  // namespace ofs
