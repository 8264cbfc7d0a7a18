#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ofs/data.hpp"
#include "ofs/metrics.hpp"
#include "ofs/network.hpp"
#include "ofs/rng.hpp"

namespace ofs {

struct TraceRecord {
  std::size_t iteration = 0;  // 1-based; state after this many updates
  double loss = 0.0;          // mini-batch loss of this iteration's forward pass
  std::vector<ContinuousFilterSize> sizes;  // learned layers, after the update
};

struct TrainingTrace {
  std::vector<TraceRecord> records;
  std::vector<ContinuousFilterSize> initial_sizes;

  /// Sizes after `iteration` updates, or the last recorded state if training was shorter.
  std::vector<ContinuousFilterSize> sizes_at(std::size_t iteration) const {
    if (records.empty() || iteration == 0) return initial_sizes;
    const std::size_t i = std::min(iteration, records.size()) - 1;
    return records[i].sizes;
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t iteration, TrainingTrace trace)
      : std::runtime_error("training diverged at iteration " + std::to_string(iteration) +
                           ": non-finite loss"),
        iteration_(iteration),
        trace_(std::move(trace)) {}
  std::size_t iteration() const noexcept { return iteration_; }
  const TrainingTrace& trace() const noexcept { return trace_; }

 private:
  std::size_t iteration_;
  TrainingTrace trace_;
};

struct TrainedModel {
  Network network;
  TrainingTrace trace;
};

/// Draws mini-batches from successive seeded permutations of the rows.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.shuffle(std::span<std::size_t>(order_));
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> rows;
    rows.reserve(batch);
    while (rows.size() < batch) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(std::span<std::size_t>(order_));
        cursor_ = 0;
      }
      rows.push_back(order_[cursor_++]);
    }
    return rows;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

/// Forward with the composite filters, backward for sizes, filters, inputs and
/// biases, momentum SGD, then the expand/shrink transformations; once per iteration.
/// Initialization and batch order come from opt.seed.
inline TrainedModel train(const NetworkSpec& spec, const OptimizerConfig& opt, const Dataset& data,
                          Network* init = nullptr) {
  validate(opt);
  validate_dataset(data);
  if (data.height() != spec.height || data.width() != spec.width || data.samples.dim(1) != 1) {
    throw std::invalid_argument("train: samples of shape " + shape_str(data.samples.shape()) +
                                " do not match the network input " + std::to_string(spec.height) +
                                "x" + std::to_string(spec.width));
  }
  TrainedModel model{init ? *init : Network(spec, derive_seed(opt.seed, "init")), {}};
  model.trace.initial_sizes = model.network.sizes();
  BatchSampler sampler(data.size(), derive_seed(opt.seed, "shuffle"));
  for (std::size_t t = 1; t <= opt.iterations; ++t) {
    const auto rows = sampler.next(opt.batch_size);
    std::vector<int> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.labels[rows[i]];
    const BatchLoss bl = model.network.forward_backward(data.gather(rows), labels);
    if (!std::isfinite(bl.loss)) throw TrainingDiverged(t, std::move(model.trace));
    model.network.step(opt);
    model.trace.records.push_back({t, bl.loss, model.network.sizes()});
  }
  return model;
}

inline Metrics evaluate(Network& network, const Dataset& data, double threshold = 0.5) {
  const std::vector<double> scores = network.predict(data);
  return score_metrics(scores, data.labels, threshold);
}

}  // namespace ofs
