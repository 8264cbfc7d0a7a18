#pragma once

// Exhaustive comparison of fixed filter sizes against a learned size on one layer.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ofs/train.hpp"

namespace ofs {

struct SweepConfig {
  std::size_t layer = 0;  // conv layer whose size is swept
  std::vector<int> sizes{3, 5, 7, 9};
  std::size_t seeds = 5;
  std::size_t threads = 1;
};

inline void validate(const SweepConfig& cfg, const NetworkSpec& spec) {
  if (cfg.layer >= spec.conv_layers.size()) {
    throw std::invalid_argument("sweep: layer " + std::to_string(cfg.layer) + " out of range for " +
                                std::to_string(spec.conv_layers.size()) + " conv layers");
  }
  if (cfg.seeds < 1) throw std::invalid_argument("sweep: seeds must be >= 1");
  for (int s : cfg.sizes) {
    if (s < spec.clamp.min || s > spec.clamp.max || s % 2 == 0) {
      throw std::invalid_argument("sweep: size " + std::to_string(s) + " must be odd and within [" +
                                  std::to_string(spec.clamp.min) + ", " +
                                  std::to_string(spec.clamp.max) + "]");
    }
  }
}

struct SweepRun {
  std::string config;  // "fixed-5" or "ofs"
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Metrics metrics;
  std::vector<ContinuousFilterSize> sizes;  // learned layers at the report iteration
  double seconds = 0.0;
};

struct SweepAggregate {
  std::string config;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double f1 = 0.0;
  std::optional<double> two_afc;  // absent if any successful run lacked it
  double accuracy = 0.0;
  std::vector<double> mean_k;  // per learned layer
};

struct SweepResult {
  std::vector<SweepRun> runs;  // configuration-major, then seed
  std::vector<SweepAggregate> aggregates;

  const SweepAggregate& aggregate(const std::string& config) const {
    for (const auto& a : aggregates)
      if (a.config == config) return a;
    throw std::out_of_range("sweep: no configuration " + config);
  }
};

inline NetworkSpec with_fixed_size(NetworkSpec spec, std::size_t layer, int size) {
  spec.conv_layers.at(layer).learned = false;
  spec.conv_layers.at(layer).size = size;
  return spec;
}

inline std::vector<SweepAggregate> aggregate_runs(const std::vector<SweepRun>& runs) {
  std::vector<SweepAggregate> out;
  for (const auto& r : runs) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const SweepAggregate& a) { return a.config == r.config; });
    if (it == out.end()) {
      out.push_back({r.config, 0, 0, 0.0, 0.0, 0.0, {}});
      it = out.end() - 1;
    }
    if (!r.ok) {
      ++it->failed;
      continue;
    }
    if (it->runs == 0) it->mean_k.assign(r.sizes.size(), 0.0);
    ++it->runs;
    it->f1 += r.metrics.f1;
    it->accuracy += r.metrics.accuracy;
    if (r.metrics.two_afc) it->two_afc = it->two_afc.value_or(0.0) + *r.metrics.two_afc;
    for (std::size_t i = 0; i < r.sizes.size(); ++i) it->mean_k[i] += r.sizes[i].k;
  }
  for (auto& a : out) {
    if (a.runs == 0) continue;
    const double n = static_cast<double>(a.runs);
    a.f1 /= n;
    a.accuracy /= n;
    if (a.two_afc) *a.two_afc /= n;
    for (double& k : a.mean_k) k /= n;
  }
  // two_afc is only meaningful when every successful run defined it
  for (auto& a : out) {
    std::size_t defined = 0;
    for (const auto& r : runs)
      if (r.config == a.config && r.ok && r.metrics.two_afc) ++defined;
    if (defined != a.runs) a.two_afc.reset();
  }
  return out;
}

/// Called from the worker that owns the run; the model is null when training failed.
using SweepRunHook = std::function<void(const SweepRun&, const TrainedModel*)>;

/// Trains each fixed size and the learned variant once per seed on the same data.
/// Seed s is derive_seed(opt.seed, s) for every configuration. A failing run is
/// recorded and the sweep continues.
inline SweepResult exhaustive_sweep(const NetworkSpec& spec, const OptimizerConfig& opt,
                                    const Dataset& train_data, const Dataset& test_data,
                                    const SweepConfig& cfg, const SweepRunHook& on_run = {}) {
  validate(cfg, spec);
  std::vector<std::pair<std::string, NetworkSpec>> configs;
  for (int s : cfg.sizes) {
    configs.emplace_back("fixed-" + std::to_string(s), with_fixed_size(spec, cfg.layer, s));
  }
  NetworkSpec learned = spec;
  learned.conv_layers[cfg.layer].learned = true;
  configs.emplace_back("ofs", learned);

  SweepResult result;
  for (const auto& [name, _] : configs) {
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      SweepRun r;
      r.config = name;
      r.seed_index = s;
      r.seed = derive_seed(opt.seed, static_cast<std::uint64_t>(s));
      result.runs.push_back(std::move(r));
    }
  }

  auto run_one = [&](std::size_t job) {
    SweepRun& r = result.runs[job];
    const NetworkSpec& run_spec = configs[job / cfg.seeds].second;
    OptimizerConfig run_opt = opt;
    run_opt.seed = r.seed;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<TrainedModel> model;
    try {
      model.emplace(train(run_spec, run_opt, train_data));
      r.metrics = evaluate(model->network, test_data);
      r.sizes = model->trace.sizes_at(opt.report_iteration);
      r.ok = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!on_run) return;
    try {
      on_run(r, r.ok ? &*model : nullptr);
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
  };

  const std::size_t jobs = result.runs.size();
  const std::size_t workers = std::clamp<std::size_t>(cfg.threads, 1, jobs);
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs; ++j) run_one(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t j = next++; j < jobs; j = next++) run_one(j);
      });
    }
  }
  result.aggregates = aggregate_runs(result.runs);
  return result;
}

}  // namespace ofs
