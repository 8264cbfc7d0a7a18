// ofs: experiment runner for optimized-filter-size CNNs.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ofs/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Optimized-filter-size CNN experiments"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> checkpoint;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "experiment config (JSON)")->required();
    sub->add_option("--out", out, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "root seed (overrides seed)");
    sub->add_option("--threads", threads, "parallel sweep workers")->check(CLI::PositiveNumber);
  };

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  auto* train = app.add_subcommand("train", "single training run");
  auto* sweep = app.add_subcommand("sweep", "fixed sizes against the learned size");
  auto* dataset = app.add_subcommand("dataset", "dataset utilities");
  auto* generate = dataset->add_subcommand("generate", "write the planted train/test sets");
  dataset->require_subcommand(1);
  auto* inspect = app.add_subcommand("inspect", "print learned sizes stored in a checkpoint");
  for (auto* sub : {gradcheck, train, sweep, generate, inspect}) common(sub);
  inspect->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out>/checkpoint.ofsc)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ofs::kExitOk : ofs::kExitUsage;
  }

  const ofs::Overrides o{out, seed, threads};
  if (*gradcheck) return ofs::cmd_gradcheck(config, o);
  if (*train) return ofs::cmd_train(config, o);
  if (*sweep) return ofs::cmd_sweep(config, o);
  if (*generate) return ofs::cmd_dataset_generate(config, o);
  if (*inspect) return ofs::cmd_inspect(config, o, checkpoint);
  return ofs::kExitUsage;
}
