#pragma once

// Experiment configuration: one JSON document, unknown keys rejected.
//
//   { "seed": 0,
//     "data":      { "kind": "planted" | "idx", ... },
//     "network":   { "conv_layers": [...], "pool": {...}, "fc_nodes": 64, ... },
//     "optimizer": { "weight_lr": 0.01, "size_lr": 0.001, ... },
//     "output":    { "dir": "out" },
//     "sweep":     { "layer": 0, "sizes": [3,5,7,9], "seeds": 5, "threads": 1 },
//     "gradcheck": { "batch": 2, "h": 1e-5, ... },
//     "debug":     { "corrupt_size_gradient": false } }

#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofs/data.hpp"
#include "ofs/network.hpp"
#include "ofs/sweep.hpp"

namespace ofs {

/// Malformed or invalid configuration; `what()` names the line or field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string kind = "planted";
  PlantedConfig planted;  // n_samples is the training set size; seed is derived
  std::size_t test_samples = 1000;
  std::size_t upsample = 1;  // nearest-neighbour factor applied after generation or loading
  std::string train_images, train_labels, test_images, test_labels;
  int positive_class = 1;
};

struct OutputConfig {
  std::string dir = "out";
};

struct GradcheckConfig {
  std::size_t batch = 2;
  double h = 1e-5;
  double tolerance = 1e-4;
  double rel_floor = 1e-6;
  std::size_t weight_samples = 200;
  std::size_t input_samples = 200;
};

struct DebugConfig {
  bool corrupt_size_gradient = false;  // doubles every size gradient
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  NetworkSpec network;
  OptimizerConfig optimizer;
  OutputConfig output;
  SweepConfig sweep;
  GradcheckConfig gradcheck;
  DebugConfig debug;
};

namespace detail {

/// Reads typed fields of one JSON object and remembers which keys were used.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), field(key));
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, field(key));
  }

  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) fail(field(key), "unknown key");
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
    throw ConfigError("field " + (field.empty() ? std::string("<root>") : field) + ": " + msg);
  }

  template <typename T>
  static T convert(const nlohmann::json& v, const std::string& name) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(name, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(name, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(name, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail(name, "expected a non-negative integer");
      return static_cast<T>(v.get<std::uint64_t>());
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(name, "expected an integer");
      return static_cast<T>(v.get<std::int64_t>());
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void parse_data(Section s, DataConfig& d) {
  s.read("kind", d.kind);
  auto& p = d.planted;
  s.read("height", p.height);
  s.read("width", p.width);
  s.read("positive_extent", p.positive_extent);
  s.read("negative_extent", p.negative_extent);
  s.read("blobs_per_image", p.blobs_per_image);
  s.read("noise_sigma", p.noise_sigma);
  s.read("train_samples", p.n_samples);
  s.read("test_samples", d.test_samples);
  s.read("upsample", d.upsample);
  s.read("train_images", d.train_images);
  s.read("train_labels", d.train_labels);
  s.read("test_images", d.test_images);
  s.read("test_labels", d.test_labels);
  s.read("positive_class", d.positive_class);
  s.finish();
  if (d.upsample < 1) Section::fail(s.field("upsample"), "must be >= 1");
  if (d.kind == "planted") {
    try {
      validate(p);
    } catch (const std::invalid_argument& e) {
      Section::fail(s.field("planted"), e.what());
    }
    if (d.test_samples < 1) Section::fail(s.field("test_samples"), "must be >= 1");
  } else if (d.kind == "idx") {
    for (auto [key, val] : {std::pair{"train_images", &d.train_images},
                            {"train_labels", &d.train_labels},
                            {"test_images", &d.test_images},
                            {"test_labels", &d.test_labels}}) {
      if (val->empty()) Section::fail(s.field(key), "required when kind is \"idx\"");
    }
  } else {
    Section::fail(s.field("kind"), "expected \"planted\" or \"idx\", got \"" + d.kind + "\"");
  }
}

inline void parse_network(Section s, NetworkSpec& n) {
  if (s.has("conv_layers")) {
    const auto& layers = s.raw("conv_layers");
    const std::string base = s.field("conv_layers");
    if (!layers.is_array() || layers.empty()) Section::fail(base, "expected a non-empty array");
    n.conv_layers.clear();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      Section l(layers[i], base + "[" + std::to_string(i) + "]");
      ConvLayerSpec c;
      std::string mode = "learned";
      l.read("out_channels", c.out_channels);
      l.read("mode", mode);
      l.read("size", c.size);
      l.read("pool", c.pool);
      l.finish();
      if (mode != "learned" && mode != "fixed") {
        Section::fail(l.field("mode"), "expected \"learned\" or \"fixed\", got \"" + mode + "\"");
      }
      c.learned = mode == "learned";
      n.conv_layers.push_back(c);
    }
  }
  Section pool = s.child("pool");
  pool.read("window", n.pool.window);
  pool.read("stride", n.pool.stride);
  pool.finish();
  if (n.pool.window < 1 || n.pool.stride < 1) Section::fail(s.field("pool"), "window and stride must be >= 1");
  s.read("fc_nodes", n.fc_nodes);
  s.read("positive_weight", n.loss.positive_weight);
  s.read("size_min", n.clamp.min);
  s.read("size_max", n.clamp.max);
  s.finish();
  if (!(n.clamp.min >= 1.0 && n.clamp.max > n.clamp.min)) {
    Section::fail(s.field("size_min"), "need 1 <= size_min < size_max");
  }
}

inline void parse_optimizer(Section s, OptimizerConfig& o) {
  s.read("weight_lr", o.weight_lr);
  s.read("size_lr", o.size_lr);
  s.read("momentum", o.momentum);
  s.read("batch_size", o.batch_size);
  s.read("iterations", o.iterations);
  s.read("size_momentum", o.size_momentum_enabled);
  s.read("weight_decay", o.weight_decay);
  s.read("size_decay", o.size_decay);
  s.read("report_iteration", o.report_iteration);
  s.finish();
  if (!(o.momentum >= 0.0 && o.momentum < 1.0)) Section::fail(s.field("momentum"), "must be in [0, 1)");
  if (o.batch_size < 1) Section::fail(s.field("batch_size"), "must be >= 1");
  if (!(o.weight_lr >= 0.0)) Section::fail(s.field("weight_lr"), "must be >= 0");
  if (!(o.size_lr >= 0.0)) Section::fail(s.field("size_lr"), "must be >= 0");
  if (!(o.weight_decay >= 0.0)) Section::fail(s.field("weight_decay"), "must be >= 0");
  if (!(o.size_decay >= 0.0)) Section::fail(s.field("size_decay"), "must be >= 0");
}

inline void parse_sweep(Section s, SweepConfig& w) {
  s.read("layer", w.layer);
  s.read("seeds", w.seeds);
  s.read("threads", w.threads);
  if (s.has("sizes")) {
    const auto& sizes = s.raw("sizes");
    if (!sizes.is_array() || sizes.empty()) Section::fail(s.field("sizes"), "expected a non-empty array");
    w.sizes.clear();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      w.sizes.push_back(Section::convert<int>(sizes[i], s.field("sizes") + "[" + std::to_string(i) + "]"));
    }
  }
  s.finish();
  if (w.seeds < 1) Section::fail(s.field("seeds"), "must be >= 1");
  if (w.threads < 1) Section::fail(s.field("threads"), "must be >= 1");
}

inline void parse_gradcheck(Section s, GradcheckConfig& g) {
  s.read("batch", g.batch);
  s.read("h", g.h);
  s.read("tolerance", g.tolerance);
  s.read("rel_floor", g.rel_floor);
  s.read("weight_samples", g.weight_samples);
  s.read("input_samples", g.input_samples);
  s.finish();
  if (g.batch < 1) Section::fail(s.field("batch"), "must be >= 1");
  if (!(g.h > 0.0)) Section::fail(s.field("h"), "must be > 0");
  if (!(g.tolerance > 0.0)) Section::fail(s.field("tolerance"), "must be > 0");
  if (!(g.rel_floor > 0.0)) Section::fail(s.field("rel_floor"), "must be > 0");
}

inline std::string position(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::Section root(j, "");
  root.read("seed", cfg.seed);
  detail::parse_data(root.child("data"), cfg.data);
  detail::parse_network(root.child("network"), cfg.network);
  detail::parse_optimizer(root.child("optimizer"), cfg.optimizer);
  {
    auto s = root.child("output");
    s.read("dir", cfg.output.dir);
    s.finish();
  }
  detail::parse_sweep(root.child("sweep"), cfg.sweep);
  detail::parse_gradcheck(root.child("gradcheck"), cfg.gradcheck);
  {
    auto s = root.child("debug");
    s.read("corrupt_size_gradient", cfg.debug.corrupt_size_gradient);
    s.finish();
  }
  root.finish();
  cfg.optimizer.seed = cfg.seed;
  if (cfg.data.kind == "planted") {
    cfg.network.height = cfg.data.planted.height * cfg.data.upsample;
    cfg.network.width = cfg.data.planted.width * cfg.data.upsample;
    try {
      validate(cfg.network);
    } catch (const std::invalid_argument& e) {
      detail::Section::fail("network", e.what());
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& name) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(name + ": " + detail::position(text, e.byte == 0 ? 0 : e.byte - 1) +
                      ": invalid JSON (" + e.what() + ")");
  }
  try {
    return parse_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

/// Round-trippable JSON form of a parsed configuration.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json layers = json::array();
  for (const auto& l : c.network.conv_layers) {
    layers.push_back({{"out_channels", l.out_channels},
                      {"mode", l.learned ? "learned" : "fixed"},
                      {"size", l.size},
                      {"pool", l.pool}});
  }
  json data = {{"kind", c.data.kind}};
  if (c.data.kind == "planted") {
    const auto& p = c.data.planted;
    data.update({{"height", p.height},
                 {"width", p.width},
                 {"positive_extent", p.positive_extent},
                 {"negative_extent", p.negative_extent},
                 {"blobs_per_image", p.blobs_per_image},
                 {"noise_sigma", p.noise_sigma},
                 {"train_samples", p.n_samples},
                 {"test_samples", c.data.test_samples}});
  } else {
    data.update({{"train_images", c.data.train_images},
                 {"train_labels", c.data.train_labels},
                 {"test_images", c.data.test_images},
                 {"test_labels", c.data.test_labels},
                 {"positive_class", c.data.positive_class}});
  }
  if (c.data.upsample != 1) {
    data["upsample"] = c.data.upsample;
  }
  const auto& o = c.optimizer;
  const auto& g = c.gradcheck;
  return {{"seed", c.seed},
          {"data", data},
          {"network",
           {{"conv_layers", layers},
            {"pool", {{"window", c.network.pool.window}, {"stride", c.network.pool.stride}}},
            {"fc_nodes", c.network.fc_nodes},
            {"positive_weight", c.network.loss.positive_weight},
            {"size_min", c.network.clamp.min},
            {"size_max", c.network.clamp.max}}},
          {"optimizer",
           {{"weight_lr", o.weight_lr},
            {"size_lr", o.size_lr},
            {"momentum", o.momentum},
            {"batch_size", o.batch_size},
            {"iterations", o.iterations},
            {"size_momentum", o.size_momentum_enabled},
            {"weight_decay", o.weight_decay},
            {"size_decay", o.size_decay},
            {"report_iteration", o.report_iteration}}},
          {"output", {{"dir", c.output.dir}}},
          {"sweep",
           {{"layer", c.sweep.layer},
            {"sizes", c.sweep.sizes},
            {"seeds", c.sweep.seeds},
            {"threads", c.sweep.threads}}},
          {"gradcheck",
           {{"batch", g.batch},
            {"h", g.h},
            {"tolerance", g.tolerance},
            {"rel_floor", g.rel_floor},
            {"weight_samples", g.weight_samples},
            {"input_samples", g.input_samples}}},
          {"debug", {{"corrupt_size_gradient", c.debug.corrupt_size_gradient}}}};
}

}  // namespace ofs
