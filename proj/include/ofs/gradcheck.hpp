#pragma once

// Central finite differences used as the independent oracle for every analytic
// gradient. Only forward evaluations are used here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofs/metrics.hpp"
#include "ofs/network.hpp"
#include "ofs/rng.hpp"

namespace ofs {

enum class TargetKind { filter_weight, bias, input, size_k };

inline const char* to_string(TargetKind k) {
  switch (k) {
    case TargetKind::filter_weight: return "filter_weight";
    case TargetKind::bias: return "bias";
    case TargetKind::input: return "input";
    case TargetKind::size_k: return "size_k";
  }
  return "?";
}

/// One scalar to perturb. `layer` indexes network layers (conv stages, then the
/// hidden and output affine layers); `index` is the flat coordinate.
struct PerturbationTarget {
  TargetKind kind = TargetKind::filter_weight;
  std::size_t layer = 0;
  std::size_t index = 0;
  double h = 1e-5;
};

/// (loss(x + h) - loss(x - h)) / 2h for a scalar reached through get/set; restores x.
inline double central_difference(const std::function<double()>& get,
                                 const std::function<void(double)>& set,
                                 const std::function<double()>& loss, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("central_difference: step must be > 0");
  const double x0 = get();
  set(x0 + h);
  const double up = loss();
  set(x0 - h);
  const double down = loss();
  set(x0);
  return (up - down) / (2.0 * h);
}

inline double central_difference(double& x, const std::function<double()>& loss, double h) {
  return central_difference([&] { return x; }, [&](double v) { x = v; }, loss, h);
}

inline ParamRef to_param(const PerturbationTarget& t) {
  switch (t.kind) {
    case TargetKind::filter_weight: return {ParamKind::weight, t.layer, t.index};
    case TargetKind::bias: return {ParamKind::bias, t.layer, t.index};
    case TargetKind::size_k: return {ParamKind::size_k, t.layer, 0};
    case TargetKind::input: break;
  }
  throw std::invalid_argument("input targets have no network parameter");
}

/// Central difference of `loss` w.r.t. one network parameter or input coordinate.
/// Size perturbations must stay inside [k_minus, k_plus), where the activation
/// is linear in k.
inline double finite_diff(Network& net, Tensor& input, const std::function<double()>& loss,
                          const PerturbationTarget& target) {
  if (!(target.h > 0.0)) throw std::invalid_argument("finite_diff: step must be > 0");
  if (target.kind == TargetKind::input) {
    return central_difference(input[target.index], loss, target.h);
  }
  const ParamRef p = to_param(target);
  if (target.kind == TargetKind::size_k) {
    const auto& sz = std::get<OfsConvLayer>(net.conv(target.layer).layer).size();
    if (sz.k - target.h < sz.k_minus || sz.k + target.h >= sz.k_plus) {
      throw std::invalid_argument("finite_diff: size perturbation [" +
                                  std::to_string(sz.k - target.h) + ", " +
                                  std::to_string(sz.k + target.h) + "] crosses the interval [" +
                                  std::to_string(sz.k_minus) + ", " + std::to_string(sz.k_plus) +
                                  ")");
    }
  }
  return central_difference([&] { return net.param(p); }, [&](double v) { net.set_param(p, v); },
                            loss, target.h);
}

/// Mean weighted sigmoid cross entropy from a forward pass only.
inline double batch_loss(Network& net, const Tensor& input, std::span<const int> labels) {
  const Tensor logits = net.forward(input);
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    total += weighted_sigmoid_ce(logits[b], labels[b], net.spec().loss.positive_weight).loss;
  }
  return total / static_cast<double>(labels.size());
}

inline double relative_error(double analytic, double numeric, double floor) {
  return std::fabs(analytic - numeric) /
         std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

struct CheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  double abs_floor = 1e-6;  // denominator floor of the relative error
  std::size_t weight_samples = 200;
  std::size_t input_samples = 200;
  std::uint64_t seed = 0;
};

struct TargetResult {
  PerturbationTarget target;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool skipped = false;  // a ReLU changed state inside [x - h, x + h]
};

struct CheckReport {
  std::vector<TargetResult> results;
  double max_rel_error = 0.0;
  std::size_t worst = 0;
  std::size_t skipped = 0;
  double tolerance = 1e-4;
  bool pass = false;

  const TargetResult& worst_target() const { return results.at(worst); }
};

namespace detail {

inline std::vector<bool> relu_pattern(const Network& net) {
  std::vector<bool> mask;
  for (std::size_t i = 0; i < net.conv_count(); ++i) {
    for (double v : net.conv(i).pre_activation.values()) mask.push_back(v > 0.0);
  }
  return mask;
}

}  // namespace detail

/// Checks every size and bias gradient plus random samples of weight and input
/// coordinates. Passes iff the largest relative error is within tolerance.
inline CheckReport check_report(Network& net, const Tensor& sample, std::span<const int> labels,
                                const CheckOptions& opt = {}) {
  Tensor input = sample;
  Tensor grad_input;
  net.forward_backward(input, labels, &grad_input);
  const std::vector<bool> base_pattern = detail::relu_pattern(net);

  std::vector<PerturbationTarget> targets;
  for (std::size_t l : net.learned_layers()) {
    targets.push_back({TargetKind::size_k, l, 0, opt.h});
  }
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    for (std::size_t i = 0; i < net.param_count(l, ParamKind::bias); ++i) {
      targets.push_back({TargetKind::bias, l, i, opt.h});
    }
  }
  Rng rng(derive_seed(opt.seed, "gradcheck"));
  std::vector<std::size_t> weight_counts;
  std::size_t total_weights = 0;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    weight_counts.push_back(net.param_count(l, ParamKind::weight));
    total_weights += weight_counts.back();
  }
  // Every coordinate when there are no more than requested, otherwise a random sample.
  auto pick = [&](std::size_t total, std::size_t wanted) {
    std::vector<std::size_t> out;
    if (total <= wanted) {
      for (std::size_t i = 0; i < total; ++i) out.push_back(i);
    } else {
      for (std::size_t n = 0; n < wanted; ++n) out.push_back(static_cast<std::size_t>(rng.below(total)));
    }
    return out;
  };
  for (std::size_t flat : pick(total_weights, opt.weight_samples)) {
    std::size_t l = 0;
    while (flat >= weight_counts[l]) flat -= weight_counts[l++];
    targets.push_back({TargetKind::filter_weight, l, flat, opt.h});
  }
  for (std::size_t i : pick(input.size(), opt.input_samples)) {
    targets.push_back({TargetKind::input, 0, i, opt.h});
  }

  CheckReport report;
  report.tolerance = opt.tolerance;
  for (PerturbationTarget t : targets) {
    TargetResult r;
    if (t.kind == TargetKind::size_k) {
      const auto& sz = std::get<OfsConvLayer>(net.conv(t.layer).layer).size();
      const double room = std::min(sz.k - sz.k_minus, sz.k_plus - sz.k);
      if (t.h >= room) t.h = room / 2.0;
    }
    r.target = t;
    r.analytic = t.kind == TargetKind::input ? grad_input[t.index] : net.grad(to_param(t));
    bool kink = false;
    auto loss = [&] {
      const double l = batch_loss(net, input, labels);
      if (detail::relu_pattern(net) != base_pattern) kink = true;
      return l;
    };
    r.numeric = finite_diff(net, input, loss, t);
    r.skipped = kink;
    r.rel_error = kink ? 0.0 : relative_error(r.analytic, r.numeric, opt.abs_floor);
    report.results.push_back(r);
  }
  for (std::size_t i = 0; i < report.results.size(); ++i) {
    const auto& r = report.results[i];
    if (r.skipped) {
      ++report.skipped;
    } else if (r.rel_error > report.max_rel_error) {
      report.max_rel_error = r.rel_error;
      report.worst = i;
    }
  }
  report.pass = report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace ofs
