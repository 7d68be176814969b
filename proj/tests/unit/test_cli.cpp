#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "swlora/analysis.hpp"
#include "swlora/cli.hpp"
#include "swlora/trainer.hpp"

using namespace swlora;
namespace fs = std::filesystem;

namespace {

struct Captured {
  int code;
  std::string out;
};

Captured run(std::vector<std::string> args) {
  args.insert(args.begin(), "swlora");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::stringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str() + err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("swlora_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, VerifyPasses) {
  const auto r = run({"verify"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("PASS switch forward invariance"), std::string::npos);
}

TEST(Cli, EstimatePrintsHeadlineNumbers) {
  const auto r = run({"estimate", "--arch", std::string(SWLORA_SOURCE_DIR) + "/specs/1p3b.toml", "--rank", "512"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("609720320 (609.72M)"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("(16.25 MB)"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("ratio to full rank 0.455188"), std::string::npos) << r.out;
  EXPECT_EQ(run({"estimate", "--arch", "350m", "--rank", "128"}).code, kExitOk);
  EXPECT_EQ(run({"estimate", "--arch", "nosuch", "--rank", "128"}).code, kExitRuntime);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"bogus"}).code, kExitUsage);
  EXPECT_EQ(run({"estimate", "--arch", "1p3b"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--set", "train.typo=1", "--out", scratch("typo").string()}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--set", "lora.rank=zero", "--out", scratch("typo").string()}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--config", "/nonexistent.cfg"}).code, kExitUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", scratch("none").string()}).code, kExitRuntime);
}

TEST(Cli, TrainLoraAndSwitchloraThenAnalyze) {
  const fs::path lo = scratch("lora"), sw = scratch("switchlora");
  const std::string cfg = std::string(SWLORA_SOURCE_DIR) + "/configs/toy.cfg";
  ASSERT_EQ(run({"train", "--config", cfg, "--set", "train.mode=lora", "--seed", "3", "--out", lo.string()}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg, "--set", "train.mode=switchlora", "--seed", "3", "--out", sw.string()}).code, 0);
  for (const auto& d : {lo, sw}) {
    EXPECT_TRUE(fs::exists(d / "metrics.jsonl"));
    EXPECT_TRUE(fs::exists(d / "resolved.cfg"));
    EXPECT_TRUE(fs::exists(d / "checkpoint" / "manifest.json"));
  }
  EXPECT_EQ(slurp(lo / "switches.jsonl"), "");
  EXPECT_NE(slurp(sw / "switches.jsonl"), "");
  EXPECT_LE(rank_report(lo / "checkpoint")[0].delta_rank, 4u);
  EXPECT_GT(rank_report(sw / "checkpoint")[0].delta_rank, 4u);

  const auto a = run({"analyze-rank", "--checkpoint", (sw / "checkpoint").string(), "--csv", (sw / "sv.csv").string()});
  EXPECT_EQ(a.code, 0);
  EXPECT_EQ(slurp(sw / "sv.csv").rfind("layer,kind,index,value\n", 0), 0u);
  const auto e = run({"eval", "--checkpoint", (sw / "checkpoint").string()});
  EXPECT_EQ(e.code, 0);
  EXPECT_NE(e.out.find("step 2000"), std::string::npos);
}

TEST(Cli, ResolvedSnapshotReproducesRun) {
  const fs::path a = scratch("snap_a"), b = scratch("snap_b");
  ASSERT_EQ(run({"train", "--set", "train.total_steps=150", "--set", "data.dim=8", "--set", "train.eval_every=50",
                 "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"train", "--config", (a / "resolved.cfg").string(), "--out", b.string()}).code, 0);
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "switches.jsonl"), slurp(b / "switches.jsonl"));
  EXPECT_EQ(slurp(a / "resolved.cfg"), slurp(b / "resolved.cfg"));
}

TEST(Cli, SweepWritesTable) {
  const fs::path out = scratch("sweep");
  const auto r = run({"sweep", "--set", "train.total_steps=60", "--set", "data.dim=8", "--set",
                      "sweep.interval0=5,inf", "--set", "sweep.freeze_steps=0,5", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream is(out / "sweep.csv");
  std::string line;
  int rows = -1;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 4);
}
