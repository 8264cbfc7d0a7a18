#pragma once

// Convolution layer with a learnable continuous filter size.
//
// Only the upper-bound bank w(k+) is stored. The lower-bound filter w(k-) is its
// inner block and the ring dw(k+) its outer one-pixel border, so the composite
// filter  w(k) = alpha * dw(k+) + w(k-)  is the upper bank with the ring scaled
// by alpha. A single same-padded convolution with w(k) equals the interpolation
// alpha * y(k+) + (1 - alpha) * y(k-) of the two bound activations.

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofs/filter_size.hpp"
#include "ofs/ops.hpp"
#include "ofs/rng.hpp"
#include "ofs/tensor.hpp"

namespace ofs {

enum class Transform { none, expand, shrink };

struct OfsGrads {
  double size = 0.0;
  Tensor filters;
  std::vector<double> bias;
  std::optional<Tensor> input;
};

class OfsConvLayer {
 public:
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights at size k_plus, zero biases.
  OfsConvLayer(std::size_t in_channels, std::size_t out_channels, double k0, Rng& rng,
               SizeClamp clamp = {})
      : clamp_(clamp), size_(bounds_of(clamp_size(k0, clamp))) {
    validate_clamp();
    const auto s = static_cast<std::size_t>(size_.k_plus);
    upper_ = FilterBank(out_channels, in_channels, s);
    const double limit = 1.0 / std::sqrt(static_cast<double>(in_channels * s * s));
    for (double& w : upper_.weights().values()) w = rng.uniform(-limit, limit);
    bias_.assign(out_channels, 0.0);
    reset_momentum();
  }

  OfsConvLayer(FilterBank upper, std::vector<double> bias, double k, SizeClamp clamp = {})
      : clamp_(clamp), size_(bounds_of(k)), upper_(std::move(upper)), bias_(std::move(bias)) {
    validate_clamp();
    if (upper_.size() != static_cast<std::size_t>(size_.k_plus)) {
      throw std::invalid_argument("OfsConvLayer: upper filters of size " +
                                  std::to_string(upper_.size()) + " do not match k_plus " +
                                  std::to_string(size_.k_plus) + " of k=" + std::to_string(k));
    }
    if (bias_.size() != upper_.out_channels()) {
      throw std::invalid_argument("OfsConvLayer: bias count does not match out_channels");
    }
    reset_momentum();
  }

  const ContinuousFilterSize& size() const noexcept { return size_; }
  const SizeClamp& clamp() const noexcept { return clamp_; }
  const FilterBank& upper_filters() const noexcept { return upper_; }
  FilterBank& upper_filters() noexcept { return upper_; }
  const std::vector<double>& bias() const noexcept { return bias_; }
  std::vector<double>& bias() noexcept { return bias_; }
  std::size_t in_channels() const { return upper_.in_channels(); }
  std::size_t out_channels() const { return upper_.out_channels(); }

  const Tensor& momentum_filters() const noexcept { return momentum_filters_; }
  Tensor& momentum_filters() noexcept { return momentum_filters_; }
  const std::vector<double>& momentum_bias() const noexcept { return momentum_bias_; }
  std::vector<double>& momentum_bias() noexcept { return momentum_bias_; }
  double momentum_size() const noexcept { return momentum_size_; }
  void set_momentum_size(double v) noexcept { momentum_size_ = v; }

  /// Moves k inside its current interval [k_minus, k_plus); the stored filters are untouched.
  void set_k_within_interval(double k) {
    const ContinuousFilterSize next = bounds_of(k);
    if (next.k_minus != size_.k_minus) {
      throw std::invalid_argument("set_k_within_interval: k=" + std::to_string(k) +
                                  " leaves the interval [" + std::to_string(size_.k_minus) +
                                  ", " + std::to_string(size_.k_plus) + ")");
    }
    size_ = next;
  }

  FilterBank composite_filter() const { return scaled_ring(size_.alpha); }

  /// w(k-) zero-padded to size k_plus.
  FilterBank lower_filter() const { return scaled_ring(0.0); }

  /// dw(k+): the upper bank with its inner block zeroed.
  FilterBank ring_filter() const {
    FilterBank ring = upper_;
    const std::size_t s = ring.size();
    for (std::size_t o = 0; o < ring.out_channels(); ++o)
      for (std::size_t i = 0; i < ring.in_channels(); ++i)
        for (std::size_t r = 0; r < s; ++r)
          for (std::size_t c = 0; c < s; ++c)
            if (!on_ring(r, c, s)) ring.at(o, i, r, c) = 0.0;
    return ring;
  }

  /// One convolution with the composite filter. Caches the input for backward.
  Tensor forward(const Tensor& input) {
    Tensor out = conv2d_same(input, composite_filter(), bias_);
    cached_input_ = input;
    return out;
  }

  /// Two convolutions (upper and zero-padded lower bank, same bias) blended by alpha.
  Tensor forward_interp_oracle(const Tensor& input) const {
    const Tensor upper = conv2d_same(input, upper_, bias_);
    const Tensor lower = conv2d_same(input, lower_filter(), bias_);
    Tensor out(upper.shape());
    const double a = size_.alpha;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * upper[i] + (1.0 - a) * lower[i];
    return out;
  }

  bool has_cached_input() const noexcept { return cached_input_.has_value(); }
  const Tensor& cached_input() const {
    require_forward("cached_input");
    return *cached_input_;
  }

  /// dL/dk: the cached input convolved with the ring-only bank, divided by
  /// k_plus - k_minus, dotted with upstream and summed over batch, channels and positions.
  double grad_size(const Tensor& upstream) const {
    require_forward("grad_size");
    const std::vector<double> zero_bias(out_channels(), 0.0);
    const Tensor ring_response = conv2d_same(*cached_input_, ring_filter(), zero_bias);
    check_upstream(upstream, ring_response);
    double acc = 0.0;
    for (std::size_t i = 0; i < upstream.size(); ++i) acc += upstream[i] * ring_response[i];
    return acc / static_cast<double>(size_.k_plus - size_.k_minus);
  }

  /// dL/dw(k+): inner coordinates see x(k-), ring coordinates see alpha * dx(k+).
  Tensor grad_filters(const Tensor& upstream) const {
    require_forward("grad_filters");
    Tensor g = conv2d_same_grad_weights(*cached_input_, upstream, upper_.size());
    scale_ring(g, size_.alpha);
    return g;
  }

  /// dL/dx: transposed convolution with the composite filter.
  Tensor grad_input(const Tensor& upstream) const {
    require_forward("grad_input");
    if (upstream.shape() != output_shape()) {
      throw std::invalid_argument("grad_input: upstream shape " + shape_str(upstream.shape()) +
                                  " vs output shape " + shape_str(output_shape()));
    }
    return conv2d_same_grad_input(upstream, composite_filter());
  }

  std::vector<double> grad_bias(const Tensor& upstream) const {
    require_forward("grad_bias");
    return conv_grad_bias(upstream);
  }

  /// All gradients from one weight-gradient pass: the size gradient reuses the
  /// unscaled k_plus weight gradient G as sum_ring(w * G) / 2.
  OfsGrads backward(const Tensor& upstream, bool need_input = true) const {
    require_forward("backward");
    if (upstream.shape() != output_shape()) {
      throw std::invalid_argument("backward: upstream shape " + shape_str(upstream.shape()) +
                                  " vs output shape " + shape_str(output_shape()));
    }
    OfsGrads g;
    g.filters = conv2d_same_grad_weights(*cached_input_, upstream, upper_.size());
    const std::size_t s = upper_.size();
    double ring_dot = 0.0;
    for (std::size_t o = 0; o < out_channels(); ++o)
      for (std::size_t i = 0; i < in_channels(); ++i)
        for (std::size_t r = 0; r < s; ++r)
          for (std::size_t c = 0; c < s; ++c)
            if (on_ring(r, c, s)) ring_dot += upper_.at(o, i, r, c) * g.filters.at(o, i, r, c);
    g.size = ring_dot / static_cast<double>(size_.k_plus - size_.k_minus);
    scale_ring(g.filters, size_.alpha);
    g.bias = conv_grad_bias(upstream);
    if (need_input) g.input = conv2d_same_grad_input(upstream, composite_filter());
    return g;
  }

  /// Momentum SGD on the size: v <- momentum * v + grad; returns clamp(k - gamma * v).
  /// The layer's bounds are left alone until transform_if_needed.
  double sgd_step_size(double grad, double gamma, double momentum) {
    momentum_size_ = momentum * momentum_size_ + grad;
    return clamp_size(size_.k - gamma * momentum_size_, clamp_);
  }

  /// Momentum SGD on filters and biases; weight decay applies to filters only.
  void sgd_step_weights(const Tensor& grad_filters, std::span<const double> grad_bias,
                        double lr, double momentum, double weight_decay = 0.0) {
    auto w = upper_.weights().values();
    auto v = momentum_filters_.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + grad_filters[i] + weight_decay * w[i];
      w[i] -= lr * v[i];
    }
    for (std::size_t i = 0; i < bias_.size(); ++i) {
      momentum_bias_[i] = momentum * momentum_bias_[i] + grad_bias[i];
      bias_[i] -= lr * momentum_bias_[i];
    }
  }

  /// Adopts k_new. Crossing k_plus expands the upper bank (edge replication; the old
  /// upper bank becomes the new lower filter); falling below k_minus crops it to its
  /// inner block (the old lower filter becomes the new upper bank). Repeats for
  /// jumps over several intervals. Filter momentum is zero-filled or cropped alike.
  Transform transform_if_needed(double k_new) {
    const ContinuousFilterSize next = bounds_of(clamp_size(k_new, clamp_));
    Transform event = Transform::none;
    const auto target = static_cast<std::size_t>(next.k_plus);
    while (upper_.size() < target) {
      upper_ = expand_filters(upper_);
      momentum_filters_ = zero_pad_filters(FilterBank(momentum_filters_)).weights();
      event = Transform::expand;
    }
    while (upper_.size() > target) {
      upper_ = crop_filters(upper_);
      momentum_filters_ = crop_filters(FilterBank(momentum_filters_)).weights();
      event = Transform::shrink;
    }
    size_ = next;
    return event;
  }

  void reset_momentum() {
    momentum_filters_ = Tensor(upper_.weights().shape());
    momentum_bias_.assign(bias_.size(), 0.0);
    momentum_size_ = 0.0;
  }

  void clear_cache() noexcept { cached_input_.reset(); }

 private:
  void validate_clamp() const {
    if (!(clamp_.min >= 1.0) || !(clamp_.max >= clamp_.min)) {
      throw std::invalid_argument("OfsConvLayer: size clamp must satisfy 1 <= min <= max");
    }
  }

  void require_forward(const char* what) const {
    if (!cached_input_) {
      throw std::logic_error(std::string(what) + ": forward has not been called");
    }
  }

  Shape output_shape() const {
    const Shape& in = cached_input_->shape();
    return {in[0], out_channels(), in[2], in[3]};
  }

  static void check_upstream(const Tensor& upstream, const Tensor& like) {
    if (upstream.shape() != like.shape()) {
      throw std::invalid_argument("upstream shape " + shape_str(upstream.shape()) +
                                  " vs output shape " + shape_str(like.shape()));
    }
  }

  static void scale_ring(Tensor& bank, double factor) {
    const std::size_t s = bank.dim(2);
    for (std::size_t o = 0; o < bank.dim(0); ++o)
      for (std::size_t i = 0; i < bank.dim(1); ++i)
        for (std::size_t r = 0; r < s; ++r)
          for (std::size_t c = 0; c < s; ++c)
            if (on_ring(r, c, s)) bank.at(o, i, r, c) *= factor;
  }

  FilterBank scaled_ring(double factor) const {
    FilterBank out = upper_;
    scale_ring(out.weights(), factor);
    return out;
  }

  SizeClamp clamp_;
  ContinuousFilterSize size_;
  FilterBank upper_;
  std::vector<double> bias_;
  Tensor momentum_filters_;
  std::vector<double> momentum_bias_;
  double momentum_size_ = 0.0;
  std::optional<Tensor> cached_input_;
};

}  // namespace ofs
