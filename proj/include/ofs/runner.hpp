#pragma once

// Subcommand implementations behind the command-line tool. Each returns the
// process exit status: 0 success, 1 experiment failure, 2 usage or config error.

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofs/config.hpp"
#include "ofs/gradcheck.hpp"
#include "ofs/sweep.hpp"
#include "ofs/tensor_io.hpp"
#include "ofs/train.hpp"

namespace ofs {

inline constexpr const char* kArtifactVersion = "ofs_cnn 0.1.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

inline void apply(const Overrides& o, ExperimentConfig& cfg) {
  if (o.out) cfg.output.dir = *o.out;
  if (o.seed) cfg.seed = cfg.optimizer.seed = *o.seed;
  if (o.threads) cfg.sweep.threads = *o.threads;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Training and test sets; planted sets draw from seeds split off the root seed.
inline DataSplit load_data(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  DataSplit split;
  if (d.kind == "idx") {
    split = {load_idx(d.train_images, d.train_labels, d.positive_class),
             load_idx(d.test_images, d.test_labels, d.positive_class)};
  } else {
    PlantedConfig p = d.planted;
    p.seed = derive_seed(cfg.seed, "data/train");
    split.train = generate_planted(p);
    p.seed = derive_seed(cfg.seed, "data/test");
    p.n_samples = d.test_samples;
    split.test = generate_planted(p);
  }
  if (d.upsample > 1) {
    split.train = upsample_nearest(split.train, d.upsample);
    split.test = upsample_nearest(split.test, d.upsample);
  }
  return split;
}

/// Network input resolution follows the data.
inline NetworkSpec resolved_spec(const ExperimentConfig& cfg, const Dataset& data) {
  NetworkSpec spec = cfg.network;
  spec.height = data.height();
  spec.width = data.width();
  validate(spec);
  return spec;
}

inline std::vector<std::size_t> learned_indices(const NetworkSpec& spec) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.conv_layers.size(); ++i)
    if (spec.conv_layers[i].learned) out.push_back(i);
  return out;
}

/// iteration, loss, then k, k_minus, k_plus, alpha for each learned layer.
inline void write_trace_csv(const std::string& path, const TrainingTrace& trace,
                            const std::vector<std::size_t>& learned) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "iteration,loss";
  for (std::size_t l : learned) {
    const std::string s = std::to_string(l);
    os << ",k" << s << ",k_minus" << s << ",k_plus" << s << ",alpha" << s;
  }
  os << '\n';
  for (const auto& r : trace.records) {
    os << r.iteration << ',' << format_double(r.loss);
    for (const auto& sz : r.sizes) {
      os << ',' << format_double(sz.k) << ',' << sz.k_minus << ',' << sz.k_plus << ','
         << format_double(sz.alpha);
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("error writing " + path);
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("error writing " + path);
}

inline nlohmann::json sizes_json(const std::vector<ContinuousFilterSize>& sizes,
                                 const std::vector<std::size_t>& learned) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    out.push_back({{"layer", learned.at(i)},
                   {"k", sizes[i].k},
                   {"k_minus", sizes[i].k_minus},
                   {"k_plus", sizes[i].k_plus},
                   {"alpha", sizes[i].alpha}});
  }
  return out;
}

inline nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j = {{"f1", m.f1}, {"accuracy", m.accuracy}};
  j["two_afc"] = m.two_afc ? nlohmann::json(*m.two_afc) : nlohmann::json(nullptr);
  return j;
}

namespace detail {

/// Loads and validates the config, mapping failures to exit status 2.
inline std::optional<ExperimentConfig> open_config(const std::string& path, const Overrides& o) {
  try {
    ExperimentConfig cfg = load_config(path);
    apply(o, cfg);
    return cfg;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return std::nullopt;
  }
}

inline std::filesystem::path prepare_out(const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.output.dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace detail

/// Whole-network finite-difference check; writes gradcheck.json.
inline int cmd_gradcheck(const std::string& config_path, const Overrides& o = {}) {
  auto cfg = detail::open_config(config_path, o);
  if (!cfg) return kExitUsage;
  try {
    const auto out = detail::prepare_out(*cfg);
    Dataset data;
    if (cfg->data.kind == "planted") {
      PlantedConfig p = cfg->data.planted;
      p.n_samples = cfg->gradcheck.batch;
      p.seed = derive_seed(cfg->seed, "data/gradcheck");
      data = upsample_nearest(generate_planted(p), cfg->data.upsample);
    } else {
      data = load_data(*cfg).train;
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < std::min(cfg->gradcheck.batch, data.size()); ++i) rows.push_back(i);
      data = Dataset{data.gather(rows), {data.labels.begin(), data.labels.begin() + rows.size()},
                     data.meta};
    }
    const NetworkSpec spec = resolved_spec(*cfg, data);
    Network net(spec, derive_seed(cfg->seed, "init"), /*random_output=*/true);
    if (cfg->debug.corrupt_size_gradient) net.set_debug_size_grad_scale(2.0);
    CheckOptions opt;
    opt.h = cfg->gradcheck.h;
    opt.tolerance = cfg->gradcheck.tolerance;
    opt.abs_floor = cfg->gradcheck.rel_floor;
    opt.weight_samples = cfg->gradcheck.weight_samples;
    opt.input_samples = cfg->gradcheck.input_samples;
    opt.seed = cfg->seed;
    const CheckReport rep = check_report(net, data.samples, data.labels, opt);

    nlohmann::json per_kind = nlohmann::json::object();
    for (const auto& r : rep.results) {
      auto& k = per_kind[to_string(r.target.kind)];
      if (k.is_null()) k = {{"checked", 0}, {"skipped", 0}, {"max_rel_error", 0.0}};
      k["checked"] = k["checked"].get<int>() + 1;
      if (r.skipped) k["skipped"] = k["skipped"].get<int>() + 1;
      k["max_rel_error"] = std::max(k["max_rel_error"].get<double>(), r.rel_error);
    }
    const auto& w = rep.worst_target();
    nlohmann::json j = {
        {"pass", rep.pass},
        {"max_rel_error", rep.max_rel_error},
        {"tolerance", rep.tolerance},
        {"checked", rep.results.size()},
        {"skipped", rep.skipped},
        {"worst",
         {{"kind", to_string(w.target.kind)},
          {"layer", w.target.layer},
          {"index", w.target.index},
          {"analytic", w.analytic},
          {"numeric", w.numeric},
          {"rel_error", w.rel_error}}},
        {"by_kind", per_kind},
        {"artifact_version", kArtifactVersion}};
    write_json((out / "gradcheck.json").string(), j);
    std::cout << (rep.pass ? "PASS" : "FAIL") << " max_rel_error=" << rep.max_rel_error
              << " worst=" << to_string(w.target.kind) << " layer=" << w.target.layer << '\n';
    return rep.pass ? kExitOk : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "gradcheck failed: " << e.what() << '\n';
    return kExitFailure;
  }
}

/// One training run: trace.csv, checkpoint.ofsc, manifest.json.
inline int cmd_train(const std::string& config_path, const Overrides& o = {}) {
  auto cfg = detail::open_config(config_path, o);
  if (!cfg) return kExitUsage;
  const std::string started = utc_timestamp();
  std::filesystem::path out;
  DataSplit data;
  NetworkSpec spec;
  try {
    out = detail::prepare_out(*cfg);
    data = load_data(*cfg);
    spec = resolved_spec(*cfg, data.train);
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << '\n';
    return kExitFailure;
  }
  const auto learned = learned_indices(spec);
  const std::string trace_path = (out / "trace.csv").string();
  const std::string ckpt_path = (out / "checkpoint.ofsc").string();
  nlohmann::json manifest = {{"artifact_version", kArtifactVersion},
                             {"command", "train"},
                             {"config", to_json(*cfg)},
                             {"seed", cfg->seed},
                             {"seeds",
                              {{"init", derive_seed(cfg->seed, "init")},
                               {"shuffle", derive_seed(cfg->seed, "shuffle")},
                               {"data_train", derive_seed(cfg->seed, "data/train")},
                               {"data_test", derive_seed(cfg->seed, "data/test")}}},
                             {"started", started},
                             {"outputs", {{"trace", trace_path}, {"checkpoint", ckpt_path}}}};
  try {
    TrainedModel m = train(spec, cfg->optimizer, data.train);
    write_trace_csv(trace_path, m.trace, learned);
    save_checkpoint(ckpt_path, m.network.to_checkpoint());
    manifest["status"] = "ok";
    manifest["iterations"] = m.trace.records.size();
    manifest["final_loss"] = m.trace.records.empty() ? nlohmann::json(nullptr)
                                                     : nlohmann::json(m.trace.records.back().loss);
    manifest["converged_sizes"] = sizes_json(m.trace.sizes_at(cfg->optimizer.report_iteration), learned);
    manifest["final_sizes"] = sizes_json(m.network.sizes(), learned);
    manifest["metrics"] = metrics_json(evaluate(m.network, data.test));
    manifest["finished"] = utc_timestamp();
    write_json((out / "manifest.json").string(), manifest);
    for (const auto& s : manifest["converged_sizes"]) {
      std::cout << "layer " << s["layer"] << " k=" << s["k"].get<double>() << '\n';
    }
    std::cout << "f1=" << manifest["metrics"]["f1"] << " accuracy=" << manifest["metrics"]["accuracy"]
              << '\n';
    return kExitOk;
  } catch (const TrainingDiverged& e) {
    std::cerr << "train: " << e.what() << '\n';
    try {
      write_trace_csv(trace_path, e.trace(), learned);
      manifest["status"] = "diverged";
      manifest["diverged_at"] = e.iteration();
      manifest["finished"] = utc_timestamp();
      manifest["outputs"].erase("checkpoint");
      write_json((out / "manifest.json").string(), manifest);
    } catch (const std::exception& w) {
      std::cerr << "train: " << w.what() << '\n';
    }
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline void write_sweep_csv(const std::string& path, const SweepResult& res,
                            std::size_t learned_count) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "config,seed,status,f1,two_afc,accuracy";
  for (std::size_t i = 0; i < learned_count; ++i) os << ",k" << i;
  os << ",error\n";
  auto opt_num = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& r : res.runs) {
    os << r.config << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      os << format_double(r.metrics.f1) << ',' << opt_num(r.metrics.two_afc) << ','
         << format_double(r.metrics.accuracy);
    } else {
      os << ",,";
    }
    for (std::size_t i = 0; i < learned_count; ++i) {
      os << ',';
      if (r.ok && i < r.sizes.size()) os << format_double(r.sizes[i].k);
    }
    std::string err = r.error;
    for (char& c : err)
      if (c == ',' || c == '\n') c = ';';
    os << ',' << err << '\n';
  }
  for (const auto& a : res.aggregates) {
    os << a.config << ",mean," << (a.failed == 0 ? "ok" : a.runs == 0 ? "failed" : "partial") << ',';
    if (a.runs > 0) {
      os << format_double(a.f1) << ',' << opt_num(a.two_afc) << ',' << format_double(a.accuracy);
    } else {
      os << ",,";
    }
    for (std::size_t i = 0; i < learned_count; ++i) {
      os << ',';
      if (i < a.mean_k.size()) os << format_double(a.mean_k[i]);
    }
    os << ",\n";
  }
  if (!os) throw std::runtime_error("error writing " + path);
}

/// Fixed sizes against the learned size; sweep.csv plus one trace per run.
inline int cmd_sweep(const std::string& config_path, const Overrides& o = {}) {
  auto cfg = detail::open_config(config_path, o);
  if (!cfg) return kExitUsage;
  const std::string started = utc_timestamp();
  try {
    const auto out = detail::prepare_out(*cfg);
    const DataSplit data = load_data(*cfg);
    const NetworkSpec spec = resolved_spec(*cfg, data.train);
    try {
      validate(cfg->sweep, spec);
    } catch (const std::invalid_argument& e) {
      std::cerr << "config error: " << config_path << ": field sweep: " << e.what() << '\n';
      return kExitUsage;
    }
    NetworkSpec learned_spec = spec;
    learned_spec.conv_layers[cfg->sweep.layer].learned = true;
    const auto learned = learned_indices(learned_spec);

    auto run_learned = [&](const SweepRun& r) {
      if (r.config == "ofs") return learned;
      return learned_indices(with_fixed_size(spec, cfg->sweep.layer, std::stoi(r.config.substr(6))));
    };
    auto run_dir = [&](const SweepRun& r) {
      return out / "runs" / (r.config + "-s" + std::to_string(r.seed_index));
    };
    auto hook = [&](const SweepRun& r, const TrainedModel* m) {
      if (!m) return;
      const auto dir = run_dir(r);
      std::filesystem::create_directories(dir);
      write_trace_csv((dir / "trace.csv").string(), m->trace, run_learned(r));
    };
    const SweepResult res = exhaustive_sweep(spec, cfg->optimizer, data.train, data.test,
                                             cfg->sweep, hook);
    const std::string csv_path = (out / "sweep.csv").string();
    write_sweep_csv(csv_path, res, learned.size());

    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : res.runs) {
      nlohmann::json j = {{"config", r.config},
                          {"seed_index", r.seed_index},
                          {"seed", r.seed},
                          {"status", r.ok ? "ok" : "failed"},
                          {"seconds", r.seconds}};
      if (r.ok) {
        j["metrics"] = metrics_json(r.metrics);
        j["trace"] = (run_dir(r) / "trace.csv").string();
        if (!r.sizes.empty()) j["converged_sizes"] = sizes_json(r.sizes, run_learned(r));
      } else {
        j["error"] = r.error;
      }
      runs.push_back(j);
    }
    std::size_t failures = 0;
    for (const auto& r : res.runs) failures += r.ok ? 0 : 1;
    nlohmann::json manifest = {{"artifact_version", kArtifactVersion},
                               {"command", "sweep"},
                               {"config", to_json(*cfg)},
                               {"seed", cfg->seed},
                               {"started", started},
                               {"finished", utc_timestamp()},
                               {"outputs", {{"sweep", csv_path}}},
                               {"runs", runs},
                               {"failed_runs", failures}};
    write_json((out / "manifest.json").string(), manifest);
    for (const auto& a : res.aggregates) {
      std::cout << a.config << " f1=" << a.f1 << " runs=" << a.runs << " failed=" << a.failed;
      if (!a.mean_k.empty()) std::cout << " k=" << a.mean_k.front();
      std::cout << '\n';
    }
    return failures == 0 ? kExitOk : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "sweep: " << e.what() << '\n';
    return kExitFailure;
  }
}

/// Writes the planted training and test sets as OFST tensors.
inline int cmd_dataset_generate(const std::string& config_path, const Overrides& o = {}) {
  auto cfg = detail::open_config(config_path, o);
  if (!cfg) return kExitUsage;
  if (cfg->data.kind != "planted") {
    std::cerr << "config error: " << config_path << ": field data.kind: dataset generate needs \"planted\"\n";
    return kExitUsage;
  }
  try {
    const auto out = detail::prepare_out(*cfg);
    const DataSplit data = load_data(*cfg);
    nlohmann::json outputs = nlohmann::json::object();
    for (const auto& [name, set] : {std::pair{"train", &data.train}, {"test", &data.test}}) {
      const std::string samples = (out / (std::string(name) + "_samples.ofst")).string();
      const std::string labels = (out / (std::string(name) + "_labels.ofst")).string();
      save_tensor(samples, set->samples);
      std::vector<double> l(set->labels.begin(), set->labels.end());
      save_tensor(labels, Tensor(Shape{l.size()}, l));
      outputs[name] = {{"samples", samples}, {"labels", labels}, {"seed", set->meta.seed},
                       {"count", set->size()}};
    }
    write_json((out / "manifest.json").string(),
               {{"artifact_version", kArtifactVersion},
                {"command", "dataset generate"},
                {"config", to_json(*cfg)},
                {"seed", cfg->seed},
                {"finished", utc_timestamp()},
                {"outputs", outputs}});
    std::cout << "wrote " << data.train.size() << " training and " << data.test.size()
              << " test samples to " << out.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "dataset generate: " << e.what() << '\n';
    return kExitFailure;
  }
}

/// Prints k, k_minus, k_plus and alpha for every learned layer of a checkpoint.
inline int cmd_inspect(const std::string& config_path, const Overrides& o = {},
                       const std::optional<std::string>& checkpoint = std::nullopt) {
  auto cfg = detail::open_config(config_path, o);
  if (!cfg) return kExitUsage;
  const std::string path =
      checkpoint ? *checkpoint : (std::filesystem::path(cfg->output.dir) / "checkpoint.ofsc").string();
  try {
    const NamedTensors entries = load_checkpoint(path);
    std::size_t found = 0;
    for (std::size_t i = 0;; ++i) {
      const std::string p = "conv" + std::to_string(i) + ".";
      bool layer_exists = false;
      for (const auto& [name, _] : entries)
        if (name.rfind(p, 0) == 0) layer_exists = true;
      if (!layer_exists) break;
      bool learned = false;
      for (const auto& [name, _] : entries)
        if (name == p + "k") learned = true;
      if (!learned) {
        std::cout << "conv" << i << " fixed size "
                  << find_entry(entries, p + "filters").dim(2) << '\n';
        continue;
      }
      ++found;
      std::cout << "conv" << i << " k=" << format_double(find_entry(entries, p + "k")[0])
                << " k_minus=" << find_entry(entries, p + "k_minus")[0]
                << " k_plus=" << find_entry(entries, p + "k_plus")[0]
                << " alpha=" << format_double(find_entry(entries, p + "alpha")[0]) << '\n';
    }
    if (found == 0) std::cout << "no learned layers\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "inspect: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace ofs
