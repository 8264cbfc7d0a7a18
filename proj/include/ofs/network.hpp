#pragma once

// Layer stack: conv (fixed or learned size) -> ReLU -> optional average pool, repeated,
// then a hidden affine layer and a single-logit output layer, trained with the
// weighted sigmoid cross entropy. Mirrors cifar10_quick, which has no
// nonlinearity between its two inner-product layers.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ofs/data.hpp"
#include "ofs/filter_size.hpp"
#include "ofs/metrics.hpp"
#include "ofs/ofs_conv.hpp"
#include "ofs/ops.hpp"
#include "ofs/rng.hpp"
#include "ofs/tensor.hpp"
#include "ofs/tensor_io.hpp"

namespace ofs {

struct ConvLayerSpec {
  std::size_t out_channels = 32;
  bool learned = true;
  double size = 4.0;  // odd integer when fixed, initial k when learned
  bool pool = false;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct PoolSpec {
  std::size_t window = 3;
  std::size_t stride = 3;
};

struct LossConfig {
  double positive_weight = 1.0;
};

struct NetworkSpec {
  std::size_t height = 64;
  std::size_t width = 48;
  std::vector<ConvLayerSpec> conv_layers{
      {32, true, 4.0, true}, {32, true, 4.0, true}, {64, true, 4.0, false}};
  PoolSpec pool;
  std::size_t fc_nodes = 64;
  LossConfig loss;
  SizeClamp clamp;
};

inline void validate(const NetworkSpec& spec) {
  if (spec.conv_layers.empty()) throw std::invalid_argument("network: no conv layers");
  if (!(spec.loss.positive_weight > 0.0)) {
    throw std::invalid_argument("network: loss.positive_weight must be > 0");
  }
  if (spec.fc_nodes < 1) throw std::invalid_argument("network: fc_nodes must be >= 1");
  std::size_t h = spec.height, w = spec.width;
  for (std::size_t i = 0; i < spec.conv_layers.size(); ++i) {
    const auto& c = spec.conv_layers[i];
    if (c.out_channels < 1) throw std::invalid_argument("network: out_channels must be >= 1");
    if (!c.learned) {
      const auto s = static_cast<long>(c.size);
      if (static_cast<double>(s) != c.size || s < 1 || s % 2 == 0) {
        throw std::invalid_argument("network: fixed conv layer " + std::to_string(i) +
                                    " needs an odd integer size, got " + std::to_string(c.size));
      }
    } else if (c.size < spec.clamp.min || c.size > spec.clamp.max) {
      throw std::invalid_argument("network: initial k of layer " + std::to_string(i) +
                                  " is outside the size clamp");
    }
    if (c.pool) {
      if (spec.pool.window > h || spec.pool.window > w) {
        throw std::invalid_argument("network: pooling after layer " + std::to_string(i) +
                                    " does not fit a " + std::to_string(h) + "x" +
                                    std::to_string(w) + " map");
      }
      h = pooled_extent(h, spec.pool.window, spec.pool.stride);
      w = pooled_extent(w, spec.pool.window, spec.pool.stride);
    }
  }
}

struct OptimizerConfig {
  double weight_lr = 0.01;
  double size_lr = 1e-3;  // gamma
  double momentum = 0.9;
  std::size_t batch_size = 100;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;
  bool size_momentum_enabled = true;
  double weight_decay = 0.0;
  double size_decay = 0.0;  // L2 coefficient on k
  std::size_t report_iteration = 2000;
};

inline void validate(const OptimizerConfig& opt) {
  if (!(opt.momentum >= 0.0 && opt.momentum < 1.0)) {
    throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
  }
  if (opt.batch_size < 1) throw std::invalid_argument("optimizer: batch_size must be >= 1");
  if (!(opt.weight_decay >= 0.0) || !(opt.size_decay >= 0.0)) {
    throw std::invalid_argument("optimizer: decay coefficients must be >= 0");
  }
  if (!(opt.weight_lr >= 0.0) || !(opt.size_lr >= 0.0)) {
    throw std::invalid_argument("optimizer: learning rates must be >= 0");
  }
}

struct FixedConv {
  FilterBank filters;
  std::vector<double> bias;
  Tensor momentum_filters;
  std::vector<double> momentum_bias;
  std::optional<Tensor> cached_input;
};

struct Dense {
  Tensor weights;  // (out, in)
  std::vector<double> bias;
  Tensor momentum_weights;
  std::vector<double> momentum_bias;
  Tensor cached_input;
  Tensor grad_weights;
  std::vector<double> grad_bias;
};

struct ConvStage {
  std::variant<FixedConv, OfsConvLayer> layer;
  bool pool = false;
  Tensor pre_activation;
  Tensor activation;  // ReLU output, pooled afterwards when `pool`
  Tensor grad_filters;
  std::vector<double> grad_bias;
  double grad_size = 0.0;

  bool learned() const { return std::holds_alternative<OfsConvLayer>(layer); }
};

enum class ParamKind { weight, bias, size_k };

/// Names one scalar parameter; `layer` counts conv stages first, then the hidden
/// and output affine layers.
struct ParamRef {
  ParamKind kind = ParamKind::weight;
  std::size_t layer = 0;
  std::size_t index = 0;
};

struct BatchLoss {
  double loss = 0.0;
  Tensor logits;
};

class Network {
 public:
  /// Uniform(+-1/sqrt(fan_in)) weights and zero biases. The output layer starts at
  /// zero unless `random_output` is set.
  Network(const NetworkSpec& spec, std::uint64_t seed, bool random_output = false) : spec_(spec) {
    validate(spec_);
    Rng rng(seed);
    std::size_t cin = 1, h = spec_.height, w = spec_.width;
    for (const auto& c : spec_.conv_layers) {
      ConvStage stage;
      stage.pool = c.pool;
      if (c.learned) {
        stage.layer = OfsConvLayer(cin, c.out_channels, c.size, rng, spec_.clamp);
      } else {
        const auto s = static_cast<std::size_t>(c.size);
        FixedConv f{FilterBank(c.out_channels, cin, s), std::vector<double>(c.out_channels, 0.0),
                    Tensor({c.out_channels, cin, s, s}),
                    std::vector<double>(c.out_channels, 0.0), std::nullopt};
        const double limit = 1.0 / std::sqrt(static_cast<double>(cin * s * s));
        for (double& v : f.filters.weights().values()) v = rng.uniform(-limit, limit);
        stage.layer = std::move(f);
      }
      convs_.push_back(std::move(stage));
      cin = c.out_channels;
      if (c.pool) {
        h = pooled_extent(h, spec_.pool.window, spec_.pool.stride);
        w = pooled_extent(w, spec_.pool.window, spec_.pool.stride);
      }
    }
    hidden_ = make_dense(spec_.fc_nodes, cin * h * w, rng, true);
    output_ = make_dense(1, spec_.fc_nodes, rng, random_output);
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::size_t conv_count() const noexcept { return convs_.size(); }
  std::size_t layer_count() const noexcept { return convs_.size() + 2; }
  ConvStage& conv(std::size_t i) { return convs_.at(i); }
  const ConvStage& conv(std::size_t i) const { return convs_.at(i); }
  Dense& hidden() noexcept { return hidden_; }
  Dense& output() noexcept { return output_; }
  const Dense& hidden() const noexcept { return hidden_; }
  const Dense& output() const noexcept { return output_; }

  std::vector<std::size_t> learned_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      if (convs_[i].learned()) out.push_back(i);
    return out;
  }

  std::vector<ContinuousFilterSize> sizes() const {
    std::vector<ContinuousFilterSize> out;
    for (const auto& s : convs_)
      if (const auto* l = std::get_if<OfsConvLayer>(&s.layer)) out.push_back(l->size());
    return out;
  }

  /// Logits, shape [B, 1].
  Tensor forward(const Tensor& input) {
    require_rank(input, 4, "Network::forward input");
    if (input.dim(1) != 1 || input.dim(2) != spec_.height || input.dim(3) != spec_.width) {
      throw std::invalid_argument("Network::forward: input shape " + shape_str(input.shape()) +
                                  " does not match [B,1," + std::to_string(spec_.height) + "," +
                                  std::to_string(spec_.width) + "]");
    }
    Tensor x = input;
    for (auto& stage : convs_) {
      if (auto* l = std::get_if<OfsConvLayer>(&stage.layer)) {
        stage.pre_activation = l->forward(x);
      } else {
        auto& f = std::get<FixedConv>(stage.layer);
        stage.pre_activation = conv2d_same(x, f.filters, f.bias);
        f.cached_input = std::move(x);
      }
      stage.activation = relu(stage.pre_activation);
      x = stage.pool ? avg_pool(stage.activation, spec_.pool.window, spec_.pool.stride)
                     : stage.activation;
    }
    last_conv_shape_ = x.shape();
    hidden_.cached_input = x.reshaped({x.dim(0), x.size() / x.dim(0)});
    Tensor hid = linear(hidden_.cached_input, hidden_.weights, hidden_.bias);
    output_.cached_input = hid;
    return linear(hid, output_.weights, output_.bias);
  }

  /// Mean weighted sigmoid cross entropy of the batch; fills every parameter
  /// gradient. Returns the input gradient when requested.
  BatchLoss forward_backward(const Tensor& input, std::span<const int> labels,
                             Tensor* grad_input = nullptr) {
    BatchLoss out;
    out.logits = forward(input);
    const std::size_t batch = labels.size();
    if (out.logits.dim(0) != batch) {
      throw std::invalid_argument("forward_backward: batch and label counts differ");
    }
    Tensor dlogits({batch, 1});
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto lv = weighted_sigmoid_ce(out.logits[b], labels[b], spec_.loss.positive_weight);
      total += lv.loss;
      dlogits[b] = lv.dloss_dlogit / static_cast<double>(batch);
    }
    out.loss = total / static_cast<double>(batch);
    Tensor gin = backward(dlogits, grad_input != nullptr);
    if (grad_input) *grad_input = std::move(gin);
    return out;
  }

  /// Backpropagates dL/dlogits through the stack of the most recent forward.
  Tensor backward(const Tensor& dlogits, bool need_input_grad = false) {
    auto go = linear_backward(dlogits, output_.cached_input, output_.weights);
    output_.grad_weights = std::move(go.weights);
    output_.grad_bias = std::move(go.bias);
    auto gh = linear_backward(go.input, hidden_.cached_input, hidden_.weights);
    hidden_.grad_weights = std::move(gh.weights);
    hidden_.grad_bias = std::move(gh.bias);
    Tensor g = gh.input.reshaped(last_conv_shape_);

    for (std::size_t i = convs_.size(); i-- > 0;) {
      auto& stage = convs_[i];
      if (stage.pool) {
        g = avg_pool_backward(g, stage.activation.shape(), spec_.pool.window, spec_.pool.stride);
      }
      g = relu_backward(g, stage.pre_activation);
      const bool want_input = i > 0 || need_input_grad;
      if (auto* l = std::get_if<OfsConvLayer>(&stage.layer)) {
        OfsGrads lg = l->backward(g, want_input);
        stage.grad_filters = std::move(lg.filters);
        stage.grad_bias = std::move(lg.bias);
        stage.grad_size = lg.size * size_grad_scale_;
        g = want_input ? std::move(*lg.input) : Tensor();
      } else {
        auto& f = std::get<FixedConv>(stage.layer);
        stage.grad_filters = conv2d_same_grad_weights(*f.cached_input, g, f.filters.size());
        stage.grad_bias = conv_grad_bias(g);
        g = want_input ? conv2d_same_grad_input(g, f.filters) : Tensor();
      }
    }
    return g;
  }

  /// Momentum SGD on every parameter from the last backward, then the size
  /// transformations. Returns the transformation applied per conv stage.
  std::vector<Transform> step(const OptimizerConfig& opt) {
    std::vector<Transform> events(convs_.size(), Transform::none);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      auto& stage = convs_[i];
      if (auto* l = std::get_if<OfsConvLayer>(&stage.layer)) {
        l->sgd_step_weights(stage.grad_filters, stage.grad_bias, opt.weight_lr, opt.momentum,
                            opt.weight_decay);
        const double size_momentum = opt.size_momentum_enabled ? opt.momentum : 0.0;
        const double g = stage.grad_size + opt.size_decay * l->size().k;
        const double k_new = l->sgd_step_size(g, opt.size_lr, size_momentum);
        events[i] = l->transform_if_needed(k_new);
      } else {
        auto& f = std::get<FixedConv>(stage.layer);
        momentum_update(f.filters.weights().values(), f.momentum_filters.values(),
                        stage.grad_filters.values(), opt.weight_lr, opt.momentum,
                        opt.weight_decay);
        momentum_update(f.bias, f.momentum_bias, stage.grad_bias, opt.weight_lr, opt.momentum,
                        0.0);
      }
    }
    for (Dense* d : {&hidden_, &output_}) {
      momentum_update(d->weights.values(), d->momentum_weights.values(),
                      d->grad_weights.values(), opt.weight_lr, opt.momentum, opt.weight_decay);
      momentum_update(d->bias, d->momentum_bias, d->grad_bias, opt.weight_lr, opt.momentum, 0.0);
    }
    return events;
  }

  /// Sigmoid scores, evaluated in chunks.
  std::vector<double> predict(const Dataset& data, std::size_t chunk = 128) {
    std::vector<double> scores;
    scores.reserve(data.size());
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
      rows.clear();
      for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) rows.push_back(i);
      const Tensor logits = forward(data.gather(rows));
      for (std::size_t b = 0; b < rows.size(); ++b) scores.push_back(sigmoid(logits[b]));
    }
    return scores;
  }

  // Scalar parameter access for gradient checking.
  double param(const ParamRef& p) const {
    if (p.kind == ParamKind::size_k) {
      return std::get<OfsConvLayer>(convs_.at(p.layer).layer).size().k;
    }
    return const_cast<Network*>(this)->slot(p);
  }
  void set_param(const ParamRef& p, double v) {
    if (p.kind == ParamKind::size_k) {
      std::get<OfsConvLayer>(convs_.at(p.layer).layer).set_k_within_interval(v);
    } else {
      slot(p) = v;
    }
  }

  double grad(const ParamRef& p) const {
    if (p.layer < convs_.size()) {
      const auto& s = convs_[p.layer];
      switch (p.kind) {
        case ParamKind::weight: return s.grad_filters[p.index];
        case ParamKind::bias: return s.grad_bias.at(p.index);
        case ParamKind::size_k: return s.grad_size;
      }
    }
    const Dense& d = dense(p.layer);
    if (p.kind == ParamKind::weight) return d.grad_weights[p.index];
    if (p.kind == ParamKind::bias) return d.grad_bias.at(p.index);
    throw std::invalid_argument("grad: affine layers have no size parameter");
  }

  std::size_t param_count(std::size_t layer, ParamKind kind) const {
    if (layer < convs_.size()) {
      const auto& s = convs_[layer];
      if (kind == ParamKind::size_k) return s.learned() ? 1 : 0;
      if (const auto* l = std::get_if<OfsConvLayer>(&s.layer)) {
        return kind == ParamKind::weight ? l->upper_filters().weights().size() : l->bias().size();
      }
      const auto& f = std::get<FixedConv>(s.layer);
      return kind == ParamKind::weight ? f.filters.weights().size() : f.bias.size();
    }
    const Dense& d = dense(layer);
    if (kind == ParamKind::size_k) return 0;
    return kind == ParamKind::weight ? d.weights.size() : d.bias.size();
  }

  /// Test hook: multiplies every reported size gradient (1 in normal use).
  void set_debug_size_grad_scale(double s) noexcept { size_grad_scale_ = s; }

  NamedTensors to_checkpoint() const {
    NamedTensors out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const std::string p = "conv" + std::to_string(i) + ".";
      if (const auto* l = std::get_if<OfsConvLayer>(&convs_[i].layer)) {
        const auto& sz = l->size();
        out.emplace_back(p + "k", scalar_tensor(sz.k));
        out.emplace_back(p + "k_minus", scalar_tensor(sz.k_minus));
        out.emplace_back(p + "k_plus", scalar_tensor(sz.k_plus));
        out.emplace_back(p + "alpha", scalar_tensor(sz.alpha));
        out.emplace_back(p + "upper_filters", l->upper_filters().weights());
        out.emplace_back(p + "bias", vec_tensor(l->bias()));
        out.emplace_back(p + "momentum_filters", l->momentum_filters());
        out.emplace_back(p + "momentum_bias", vec_tensor(l->momentum_bias()));
        out.emplace_back(p + "momentum_size", scalar_tensor(l->momentum_size()));
      } else {
        const auto& f = std::get<FixedConv>(convs_[i].layer);
        out.emplace_back(p + "filters", f.filters.weights());
        out.emplace_back(p + "bias", vec_tensor(f.bias));
        out.emplace_back(p + "momentum_filters", f.momentum_filters);
        out.emplace_back(p + "momentum_bias", vec_tensor(f.momentum_bias));
      }
    }
    for (const auto& [name, d] : {std::pair{"fc_hidden.", &hidden_}, std::pair{"fc_out.", &output_}}) {
      const std::string p = name;
      out.emplace_back(p + "weights", d->weights);
      out.emplace_back(p + "bias", vec_tensor(d->bias));
      out.emplace_back(p + "momentum_weights", d->momentum_weights);
      out.emplace_back(p + "momentum_bias", vec_tensor(d->momentum_bias));
    }
    return out;
  }

  /// Restores parameters and optimizer state written by to_checkpoint.
  /// Restores state saved by to_checkpoint from a network built with the same spec.
  void load_checkpoint(const NamedTensors& entries) {
    auto shaped = [&](const std::string& name, const Shape& want) -> const Tensor& {
      const Tensor& t = find_entry(entries, name);
      if (t.shape() != want) {
        throw FormatError("checkpoint: entry '" + name + "' has shape " + shape_str(t.shape()) +
                          ", network expects " + shape_str(want));
      }
      return t;
    };
    const std::string extra = "conv" + std::to_string(convs_.size()) + ".";
    for (const auto& [name, t] : entries) {
      if (name.starts_with(extra)) {
        throw FormatError("checkpoint: has more conv layers than the network (" + name + ")");
      }
    }
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const std::string p = "conv" + std::to_string(i) + ".";
      if (auto* l = std::get_if<OfsConvLayer>(&convs_[i].layer)) {
        const Shape channels{l->out_channels(), l->in_channels()};
        const double k = find_entry(entries, p + "k")[0];
        const auto s = static_cast<std::size_t>(bounds_of(k).k_plus);
        const Shape bank{channels[0], channels[1], s, s};
        OfsConvLayer restored(FilterBank(shaped(p + "upper_filters", bank)),
                              to_vec(shaped(p + "bias", {channels[0]})), k, spec_.clamp);
        restored.momentum_filters() = shaped(p + "momentum_filters", bank);
        restored.momentum_bias() = to_vec(shaped(p + "momentum_bias", {channels[0]}));
        restored.set_momentum_size(find_entry(entries, p + "momentum_size")[0]);
        *l = std::move(restored);
      } else {
        auto& f = std::get<FixedConv>(convs_[i].layer);
        const Shape bank = f.filters.weights().shape();
        const Shape bias{f.bias.size()};
        f.filters = FilterBank(shaped(p + "filters", bank));
        f.bias = to_vec(shaped(p + "bias", bias));
        f.momentum_filters = shaped(p + "momentum_filters", bank);
        f.momentum_bias = to_vec(shaped(p + "momentum_bias", bias));
      }
    }
    for (const auto& [name, d] : {std::pair{"fc_hidden.", &hidden_}, std::pair{"fc_out.", &output_}}) {
      const std::string p = name;
      const Shape w = d->weights.shape(), b{d->bias.size()};
      d->weights = shaped(p + "weights", w);
      d->bias = to_vec(shaped(p + "bias", b));
      d->momentum_weights = shaped(p + "momentum_weights", w);
      d->momentum_bias = to_vec(shaped(p + "momentum_bias", b));
    }
  }

 private:
  static Dense make_dense(std::size_t out, std::size_t in, Rng& rng, bool random) {
    Dense d;
    d.weights = Tensor({out, in});
    if (random) {
      const double limit = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& v : d.weights.values()) v = rng.uniform(-limit, limit);
    }
    d.bias.assign(out, 0.0);
    d.momentum_weights = Tensor({out, in});
    d.momentum_bias.assign(out, 0.0);
    return d;
  }

  static void momentum_update(std::span<double> w, std::span<double> v, std::span<const double> g,
                              double lr, double momentum, double decay) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + decay * w[i];
      w[i] -= lr * v[i];
    }
  }

  static Tensor vec_tensor(const std::vector<double>& v) { return Tensor({v.size()}, v); }
  static std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

  const Dense& dense(std::size_t layer) const {
    if (layer == convs_.size()) return hidden_;
    if (layer == convs_.size() + 1) return output_;
    throw std::out_of_range("Network: layer index " + std::to_string(layer) + " out of range");
  }

  double& slot(const ParamRef& p) {
    if (p.layer < convs_.size()) {
      auto& s = convs_[p.layer];
      if (auto* l = std::get_if<OfsConvLayer>(&s.layer)) {
        if (p.kind == ParamKind::weight) return l->upper_filters().weights()[p.index];
        if (p.kind == ParamKind::bias) return l->bias().at(p.index);
        throw std::invalid_argument("size_k is read through param(), set through set_param()");
      }
      auto& f = std::get<FixedConv>(s.layer);
      if (p.kind == ParamKind::weight) return f.filters.weights()[p.index];
      if (p.kind == ParamKind::bias) return f.bias.at(p.index);
      throw std::invalid_argument("fixed conv layers have no size parameter");
    }
    auto& d = const_cast<Dense&>(dense(p.layer));
    if (p.kind == ParamKind::weight) return d.weights[p.index];
    if (p.kind == ParamKind::bias) return d.bias.at(p.index);
    throw std::invalid_argument("affine layers have no size parameter");
  }

  NetworkSpec spec_;
  std::vector<ConvStage> convs_;
  Dense hidden_;
  Dense output_;
  Shape last_conv_shape_;
  double size_grad_scale_ = 1.0;
};

}  // namespace ofs
