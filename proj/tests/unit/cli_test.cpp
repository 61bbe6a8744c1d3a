#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(TSC_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tsc_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("net gen --rows abc"), 2);
  EXPECT_EQ(run("sim run --controller psychic --horizon 10"), 2);
  EXPECT_EQ(run("train offline"), 2);
  EXPECT_EQ(run("bench compare --config only_one.json"), 2);
}

TEST(Cli, RuntimeFailuresExitOne) {
  const auto d = scratch("runtime");
  EXPECT_EQ(run("train offline --dataset " + (d / "missing.jsonl").string()), 1);
  EXPECT_EQ(run("sim run --policy " + (d / "missing.txt").string() + " --horizon 10 --output-dir " + d.string()), 1);
}

TEST(Cli, NetAndFlowGen) {
  const auto d = scratch("gen");
  EXPECT_EQ(run("net gen --rows 3 --cols 4 --link-length 300 --out " + (d / "net.json").string()), 0);
  EXPECT_NE(slurp(d / "net.json").find("\"rows\""), std::string::npos);
  EXPECT_EQ(run("flow gen --rate 1000 --seed 3 --out " + (d / "flow.json").string() + " --schedule " +
                (d / "arr.jsonl").string() + " --network " + (d / "net.json").string() + " --horizon 120"),
            0);
  EXPECT_FALSE(slurp(d / "arr.jsonl").empty());
  EXPECT_EQ(run("flow gen --turns 0.5,0.5,0.5"), 2);
}

TEST(Cli, SimRunWritesOutputs) {
  const auto d = scratch("sim");
  EXPECT_EQ(run("sim run --controller maxpressure --horizon 120 --seeds 1,2 --output-dir " + d.string()), 0);
  EXPECT_TRUE(fs::exists(d / "metrics.jsonl"));
  EXPECT_TRUE(fs::exists(d / "aggregate.json"));
}

TEST(Cli, DatasetThenOfflineTraining) {
  const auto d = scratch("train");
  EXPECT_EQ(run("dataset gen --size 30 --horizon 600 --out " + (d / "data.jsonl").string()), 0);
  EXPECT_EQ(run("train offline --dataset " + (d / "data.jsonl").string() + " --offline-iterations 2 --policy-out " +
                (d / "p.txt").string() + " --history-out " + (d / "h.jsonl").string()),
            0);
  EXPECT_TRUE(fs::exists(d / "p.txt"));
  EXPECT_EQ(run("sim run --policy " + (d / "p.txt").string() + " --horizon 60 --output-dir " + (d / "ev").string()), 0);
}

TEST(Cli, EvalIncidentsCsv) {
  const auto d = scratch("eval");
  EXPECT_EQ(run("eval incidents --controller rule --horizon 60 --emergency-fraction 0 --out " +
                (d / "r.csv").string()),
            0);
  const auto csv = slurp(d / "r.csv");
  EXPECT_EQ(csv.rfind("method,EAA,AETT,AEWT\n", 0), 0u);
  EXPECT_NE(csv.find("rule,1.0000"), std::string::npos);
}

TEST(Cli, BenchCompareTwoConfigs) {
  const auto d = scratch("bench");
  std::ofstream(d / "a.json") << R"({"name":"a","controller":{"type":"fixedtime"},"horizon_s":120,"seeds":[1,2]})";
  std::ofstream(d / "b.json") << R"({"name":"b","controller":{"type":"maxpressure"},"horizon_s":120,"seeds":[1,2]})";
  std::ofstream(d / "c.json") << R"({"name":"c","controller":{"type":"random"},"horizon_s":120,"seeds":[1]})";
  EXPECT_EQ(run("bench compare --config " + (d / "a.json").string() + " --config " + (d / "b.json").string() +
                " --out " + (d / "cmp.csv").string()),
            0);
  EXPECT_EQ(run("bench compare --config " + (d / "a.json").string() + " --config " + (d / "c.json").string()), 2);
}
