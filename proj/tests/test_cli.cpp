#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ofs/tensor_io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "ofs_cli_test";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const std::string& text) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / name;
  std::ofstream(p) << text;
  return p;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult ofs_cli(const std::string& args) {
  fs::create_directories(kRoot);
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string(OFS_CLI_PATH) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// 16x12 planted data and a one-layer network: a few seconds per run at most.
std::string tiny_config(const std::string& gamma = "0.3", const std::string& debug = "false") {
  return R"({
  "seed": 5,
  "data": {"height": 16, "width": 12, "positive_extent": 5, "negative_extent": 1,
           "noise_sigma": 0.5, "train_samples": 40, "test_samples": 20},
  "network": {"conv_layers": [{"out_channels": 2, "mode": "learned", "size": 4.0, "pool": true}],
              "fc_nodes": 3},
  "optimizer": {"weight_lr": 0.05, "size_lr": )" +
         gamma + R"(, "batch_size": 8, "iterations": 12,
                "report_iteration": 10},
  "sweep": {"sizes": [3, 5], "seeds": 2},
  "gradcheck": {"batch": 2},
  "debug": {"corrupt_size_gradient": )" +
         debug + R"(}
})";
}

std::string out_dir(const std::string& name) {
  const fs::path p = kRoot / name;
  fs::remove_all(p);
  return p.string();
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(ofs_cli("").code, 2);
  EXPECT_EQ(ofs_cli("train").code, 2);
  EXPECT_EQ(ofs_cli("frobnicate --config x.json").code, 2);
  EXPECT_EQ(ofs_cli("--help").code, 0);
  const auto cfg = write_config("tiny.json", tiny_config());
  EXPECT_EQ(ofs_cli("sweep --config " + cfg.string() + " --threads 0").code, 2);
}

TEST(Cli, MissingConfigExitsTwo) {
  const CliResult r = ofs_cli("train --config /nonexistent/cfg.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/nonexistent/cfg.json"), std::string::npos) << r.err;
}

TEST(Cli, UnknownKeyExitsTwoNamingField) {
  const auto cfg = write_config("unknown.json", R"({"optimizer": {"learning_rate": 0.1}})");
  const CliResult r = ofs_cli("train --config " + cfg.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("optimizer.learning_rate"), std::string::npos) << r.err;
}

TEST(Cli, GradcheckPasses) {
  const auto cfg = write_config("tiny.json", tiny_config());
  const std::string out = out_dir("gc-pass");
  const CliResult r = ofs_cli("gradcheck --config " + cfg.string() + " --out " + out);
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  const auto j = nlohmann::json::parse(slurp(fs::path(out) / "gradcheck.json"));
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_LE(j["max_rel_error"].get<double>(), 1e-4);
}

TEST(Cli, CorruptedSizeGradientExitsOneNamingSizeK) {
  const auto cfg = write_config("corrupt.json", tiny_config("0.3", "true"));
  const std::string out = out_dir("gc-corrupt");
  const CliResult r = ofs_cli("gradcheck --config " + cfg.string() + " --out " + out);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("size_k"), std::string::npos) << r.out;
  const auto j = nlohmann::json::parse(slurp(fs::path(out) / "gradcheck.json"));
  EXPECT_FALSE(j["pass"].get<bool>());
  EXPECT_EQ(j["worst"]["kind"], "size_k");
}

TEST(Cli, GradcheckReportIndependentOfGamma) {
  const auto a = write_config("g0.json", tiny_config("0.0"));
  const auto b = write_config("g1.json", tiny_config("1.0"));
  const std::string oa = out_dir("gc-g0"), ob = out_dir("gc-g1");
  ASSERT_EQ(ofs_cli("gradcheck --config " + a.string() + " --out " + oa).code, 0);
  ASSERT_EQ(ofs_cli("gradcheck --config " + b.string() + " --out " + ob).code, 0);
  EXPECT_EQ(slurp(fs::path(oa) / "gradcheck.json"), slurp(fs::path(ob) / "gradcheck.json"));
}

TEST(Cli, TrainWritesArtifactsDeterministically) {
  const auto cfg = write_config("tiny.json", tiny_config());
  const std::string a = out_dir("train-a"), b = out_dir("train-b");
  const CliResult ra = ofs_cli("train --config " + cfg.string() + " --out " + a);
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(ofs_cli("train --config " + cfg.string() + " --out " + b).code, 0);
  const std::string trace = slurp(fs::path(a) / "trace.csv");
  EXPECT_EQ(trace, slurp(fs::path(b) / "trace.csv"));
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "iteration,loss,k0,k_minus0,k_plus0,alpha0");
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 13);

  const auto m = nlohmann::json::parse(slurp(fs::path(a) / "manifest.json"));
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["seed"], 5);
  EXPECT_TRUE(m["seeds"].contains("init"));
  EXPECT_EQ(m["converged_sizes"].size(), 1u);
  EXPECT_TRUE(m.contains("config"));
  EXPECT_TRUE(fs::exists(fs::path(a) / "checkpoint.ofsc"));

  const CliResult other = ofs_cli("train --config " + cfg.string() + " --out " + out_dir("train-c") +
                            " --seed 6");
  ASSERT_EQ(other.code, 0);
  EXPECT_NE(slurp(kRoot / "train-c" / "trace.csv"), trace);
}

TEST(Cli, ZeroIterationsWritesHeaderOnlyTrace) {
  std::string text = tiny_config();
  text.replace(text.find("\"iterations\": 12"), 16, "\"iterations\": 0");
  const auto cfg = write_config("zero.json", text);
  const std::string out = out_dir("train-zero");
  ASSERT_EQ(ofs_cli("train --config " + cfg.string() + " --out " + out).code, 0);
  EXPECT_EQ(slurp(fs::path(out) / "trace.csv"), "iteration,loss,k0,k_minus0,k_plus0,alpha0\n");
}

TEST(Cli, InspectPrintsSizes) {
  const auto cfg = write_config("tiny.json", tiny_config());
  const std::string out = out_dir("inspect");
  ASSERT_EQ(ofs_cli("train --config " + cfg.string() + " --out " + out).code, 0);
  const CliResult r = ofs_cli("inspect --config " + cfg.string() + " --out " + out);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("conv0 k="), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("alpha="), std::string::npos) << r.out;
  EXPECT_EQ(ofs_cli("inspect --config " + cfg.string() + " --checkpoint " + out + "/nope.ofsc").code,
            1);
}

TEST(Cli, SweepWritesTable) {
  const auto cfg = write_config("tiny.json", tiny_config());
  const std::string out = out_dir("sweep");
  const CliResult r = ofs_cli("sweep --config " + cfg.string() + " --out " + out + " --threads 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(fs::path(out) / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 2 + 3);
  EXPECT_NE(csv.find("ofs,mean,ok"), std::string::npos) << csv;
  EXPECT_TRUE(fs::exists(fs::path(out) / "runs" / "ofs-s1" / "trace.csv"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "manifest.json"));
}

TEST(Cli, SweepSingleSizeSingleSeedRows) {
  std::string text = tiny_config();
  const std::string from = R"("sizes": [3, 5], "seeds": 2)";
  text.replace(text.find(from), from.size(), R"("sizes": [3], "seeds": 1)");
  const auto cfg = write_config("single.json", text);
  const std::string out = out_dir("sweep-single");
  ASSERT_EQ(ofs_cli("sweep --config " + cfg.string() + " --out " + out).code, 0);
  std::istringstream csv(slurp(fs::path(out) / "sweep.csv"));
  std::vector<std::string> rows;
  for (std::string line; std::getline(csv, line);) rows.push_back(line);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[1].rfind("fixed-3,", 0), 0u) << rows[1];
  EXPECT_EQ(rows[2].rfind("ofs,", 0), 0u) << rows[2];
  EXPECT_NE(rows[2].find(",ok,"), std::string::npos) << rows[2];
  EXPECT_EQ(rows[3].rfind("fixed-3,mean,ok", 0), 0u) << rows[3];
  EXPECT_EQ(rows[4].rfind("ofs,mean,ok", 0), 0u) << rows[4];
}

TEST(Cli, SweepSizeOutsideClampExitsTwo) {
  std::string text = tiny_config();
  text.replace(text.find("[3, 5]"), 6, "[3, 13]");
  const auto cfg = write_config("badsweep.json", text);
  EXPECT_EQ(ofs_cli("sweep --config " + cfg.string() + " --out " + out_dir("badsweep")).code, 2);
}

TEST(Cli, DatasetGenerate) {
  const auto cfg = write_config("tiny.json", tiny_config());
  const std::string out = out_dir("dataset");
  ASSERT_EQ(ofs_cli("dataset generate --config " + cfg.string() + " --out " + out).code, 0);
  const ofs::Tensor train = ofs::load_tensor(out + "/train_samples.ofst");
  EXPECT_EQ(train.shape(), (ofs::Shape{40, 1, 16, 12}));
  EXPECT_EQ(ofs::load_tensor(out + "/test_labels.ofst").shape(), (ofs::Shape{20}));
}
