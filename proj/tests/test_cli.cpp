#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fairgrad/io.hpp"

namespace fs = std::filesystem;
using namespace fairgrad;

namespace {

struct Result {
  int code;
  std::string output;
};

Result cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" FAIRGRAD_CLI_PATH "\" " + args + " 2>&1";
  Result r{-1, {}};
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fairgrad_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out(const std::string& sub = "") const { return "--out " + (dir_ / sub).string(); }
  fs::path dir_;
};

std::vector<std::string> csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string c;
  while (std::getline(ss, c, ',')) cells.push_back(c);
  return cells;
}

std::string last_line(const std::string& text) {
  const auto end = text.find_last_not_of('\n');
  const auto start = text.rfind('\n', end);
  return text.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1);
}

}  // namespace

TEST_F(Cli, ToyRunReachesStationarity) {
  const Result r = cli("run --problem toy --start p1 --method fairgrad --alpha 2 --lr 1e-3 --step-rule adaptive_moment " +
                       out());
  EXPECT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(dir_ / "trajectory.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,x1,x2,l1,l2,w1,w2,dnorm,stationarity,sigma_min,eta");
  const nlohmann::json s = read_json_file((dir_ / "summary.json").string());
  EXPECT_EQ(s["termination"], "stationary");
  EXPECT_LE(s["final_stationarity"].get<double>(), 1e-3);
}

TEST_F(Cli, SummaryRoundTripsFinalRow) {
  ASSERT_EQ(cli("run --problem toy --start p4 --alpha 1 --step-rule adaptive_moment " + out()).code, 0);
  const nlohmann::json s = read_json_file((dir_ / "summary.json").string());
  const auto cells = csv_row(last_line(slurp(dir_ / "trajectory.csv")));
  ASSERT_EQ(cells.size(), 11u);
  // x1 x2 l1 l2 w1 w2 ... stationarity sigma_min
  EXPECT_EQ(std::strtod(cells[1].c_str(), nullptr), s["final_point"][0].get<double>());
  EXPECT_EQ(std::strtod(cells[2].c_str(), nullptr), s["final_point"][1].get<double>());
  EXPECT_EQ(std::strtod(cells[3].c_str(), nullptr), s["final_losses"][0].get<double>());
  EXPECT_EQ(std::strtod(cells[4].c_str(), nullptr), s["final_losses"][1].get<double>());
  EXPECT_EQ(std::strtod(cells[5].c_str(), nullptr), s["final_weights"][0].get<double>());
  EXPECT_EQ(std::strtod(cells[8].c_str(), nullptr), s["final_stationarity"].get<double>());
  EXPECT_EQ(std::strtod(cells[9].c_str(), nullptr), s["final_sigma_min"].get<double>());
  const nlohmann::json again = nlohmann::json::parse(s.dump());
  EXPECT_EQ(again, s);
}

TEST_F(Cli, SameSeedByteIdenticalCsv) {
  for (const char* method : {"rlw", "pcgrad", "fairgrad"}) {
    const std::string args = std::string("run --problem toy --start p5 --max-steps 500 --seed 7 --method ") + method;
    cli(args + " " + out("a"));
    cli(args + " " + out("b"));
    const std::string a = slurp(dir_ / "a" / "trajectory.csv");
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(dir_ / "b" / "trajectory.csv")) << method;
  }
}

TEST_F(Cli, SeedFallsBackToEnvironment) {
  const std::string args = "run --problem toy --start p5 --max-steps 50 --method rlw ";
  cli(args + out("env"), "FAIRGRAD_SEED=11");
  cli(args + "--seed 11 " + out("flag"));
  cli(args + "--seed 12 " + out("other"));
  EXPECT_EQ(slurp(dir_ / "env" / "trajectory.csv"), slurp(dir_ / "flag" / "trajectory.csv"));
  EXPECT_NE(slurp(dir_ / "env" / "trajectory.csv"), slurp(dir_ / "other" / "trajectory.csv"));
  EXPECT_EQ(cli(args + out("bad"), "FAIRGRAD_SEED=abc").code, 1);
}

TEST_F(Cli, LinearScalarizationFavorsTaskTwo) {
  ASSERT_EQ(cli("run --problem toy --start p2 --method ls --alpha 0 --step-rule adaptive_moment " + out("ls")).code, 0);
  ASSERT_EQ(cli("run --problem toy --start p2 --method fairgrad --alpha 10 --step-rule adaptive_moment " + out("fg"))
                .code,
            0);
  const auto ls = read_json_file((dir_ / "ls" / "summary.json").string())["final_losses"];
  const auto fg = read_json_file((dir_ / "fg" / "summary.json").string())["final_losses"];
  // LS ends lower on task 2 and higher on task 1
  EXPECT_LT(ls[1].get<double>(), fg[1].get<double>());
  EXPECT_GT(ls[0].get<double>(), fg[0].get<double>());
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(cli("run " + out()).code, 1);
  EXPECT_EQ(cli("run --problem spiral " + out()).code, 1);
  EXPECT_EQ(cli("run --problem toy --method nope " + out()).code, 1);
  EXPECT_EQ(cli("run --problem toy --start p9 " + out()).code, 1);
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  const Result bad = cli("run --problem toy --lr -1 " + out());
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("learning_rate"), std::string::npos);
}

TEST_F(Cli, BudgetExhaustionExitsTwo) {
  EXPECT_EQ(cli("run --problem toy --start p1 --max-steps 5 " + out()).code, 2);
  EXPECT_TRUE(fs::exists(dir_ / "trajectory.csv"));
}

TEST_F(Cli, ConfigFileAndFlagOverride) {
  {
    std::ofstream cfg(dir_ / "cfg.json");
    cfg << R"({"problem": "quadratic", "tasks": 3, "dim": 4, "alpha": 2, "step_rule": "theoretical",
               "max_steps": 40, "seed": 3})";
  }
  ASSERT_NE(cli("run --config " + (dir_ / "cfg.json").string() + " " + out("file")).code, 1);
  ASSERT_NE(cli("run --config " + (dir_ / "cfg.json").string() + " --alpha 5 " + out("flag")).code, 1);
  const auto a = read_json_file((dir_ / "file" / "summary.json").string());
  const auto b = read_json_file((dir_ / "flag" / "summary.json").string());
  EXPECT_EQ(a["config"]["alpha"], 2.0);
  EXPECT_EQ(b["config"]["alpha"], 5.0);
  EXPECT_EQ(a["config"]["step_rule"], "theoretical");
  EXPECT_EQ(a["final_weights"].size(), 3u);
  EXPECT_GT(a["config"]["smoothness_L"].get<double>(), 0.1);

  std::ofstream(dir_ / "typo.json") << R"({"problem": "toy", "alhpa": 2})";
  Result r = cli("run --config " + (dir_ / "typo.json").string() + " " + out("typo"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("alhpa"), std::string::npos);

  std::ofstream(dir_ / "type.json") << R"({"problem": "toy", "max_steps": "many"})";
  r = cli("run --config " + (dir_ / "type.json").string() + " " + out("type"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("max_steps"), std::string::npos);

  std::ofstream(dir_ / "broken.json") << "{";
  EXPECT_EQ(cli("run --config " + (dir_ / "broken.json").string() + " " + out("broken")).code, 1);
}

TEST_F(Cli, SweepWritesPerAlphaArtifacts) {
  const Result r = cli("sweep --problem toy --start p2 --alphas 1,2,5,10 --step-rule adaptive_moment " + out());
  EXPECT_EQ(r.code, 0) << r.output;
  for (const char* a : {"alpha_1", "alpha_2", "alpha_5", "alpha_10"}) {
    EXPECT_TRUE(fs::exists(dir_ / a / "trajectory.csv")) << a;
  }
  const auto s = read_json_file((dir_ / "sweep_summary.json").string());
  ASSERT_EQ(s["runs"].size(), 4u);
  EXPECT_NE(s["runs"][0]["seed"], s["runs"][1]["seed"]);
  EXPECT_TRUE(s["runs"][0].contains("mean_min_gain"));
}

TEST_F(Cli, SingleAlphaSweepMatchesRun) {
  const std::string common = "--problem toy --start p3 --method rlw --max-steps 300 --seed 4 ";
  cli("sweep --alphas 2 " + common + out("sweep"));
  cli("run --alpha 2 " + common + out("run"));
  const std::string a = slurp(dir_ / "sweep" / "alpha_2" / "trajectory.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "run" / "trajectory.csv"));
}

TEST_F(Cli, SweepErrors) {
  EXPECT_EQ(cli("sweep --problem toy --alphas \"\" " + out()).code, 1);
  EXPECT_EQ(cli("sweep --problem toy --alphas , " + out()).code, 1);
  EXPECT_EQ(cli("sweep --problem toy " + out()).code, 1);
  EXPECT_EQ(cli("sweep --problem toy --alphas 1,x " + out()).code, 1);
  // one child runs out of budget
  EXPECT_EQ(cli("sweep --problem toy --start p1 --alphas 1,2 --max-steps 3 " + out("budget")).code, 2);
}

// Small gradients (diagonal Gram entries below 1): the raw minimum gain rises with alpha.
TEST_F(Cli, StaticSweepFairnessTrend) {
  std::ofstream(dir_ / "q.json") << R"({"problem": "quadratic", "tasks": 3, "dim": 3, "problem_seed": 5,
                                        "x0": [0.2, -0.1, 0.15]})";
  const Result r = cli("sweep --static --alphas 1,2,5,10 --config " + (dir_ / "q.json").string() + " " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto s = read_json_file((dir_ / "sweep_summary.json").string());
  ASSERT_EQ(s["runs"].size(), 4u);
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_GE(s["runs"][i]["min_unit_gain"].get<double>(), s["runs"][i - 1]["min_unit_gain"].get<double>() - 1e-9);
  }
}

TEST_F(Cli, CheckGrad) {
  EXPECT_EQ(cli("checkgrad --problem toy --samples 300").code, 0);
  EXPECT_EQ(cli("checkgrad --problem quadratic --samples 100").code, 0);
  EXPECT_NE(cli("checkgrad --problem toy --samples 50 --corrupt 1e-3").code, 0);
  EXPECT_EQ(cli("checkgrad --problem banana").code, 1);
}

TEST_F(Cli, MetricsTable) {
  const Result r = cli("metrics \"" FAIRGRAD_SOURCE_DIR "/data/cityscapes_table3.csv\" --baseline STL");
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream lines(r.output);
  std::string line;
  bool seen_ls = false, seen_fg = false;
  while (std::getline(lines, line)) {
    std::istringstream f(line);
    std::string name;
    double mr = 0, dm = 0;
    f >> name >> mr >> dm;
    if (name == "LS") {
      seen_ls = true;
      EXPECT_NEAR(dm, 22.60, 0.1);
    }
    if (name == "FairGrad") {
      seen_fg = true;
      EXPECT_NEAR(dm, 5.18, 0.1);
      EXPECT_DOUBLE_EQ(mr, 1.5);
    }
  }
  EXPECT_TRUE(seen_ls && seen_fg);

  std::ofstream(dir_ / "same.csv") << "method,a,b\ndirection,up,down\nbase,2,3\nm1,2,3\nm2,2,3\n";
  const Result same = cli("metrics " + (dir_ / "same.csv").string() + " --baseline base");
  EXPECT_EQ(same.code, 0);
  EXPECT_NE(same.output.find("m1"), std::string::npos);
  EXPECT_NE(same.output.find("0.00"), std::string::npos);
  EXPECT_EQ(same.output.find("-0.00"), std::string::npos);

  std::ofstream(dir_ / "three.csv") << "method,a,b\ndirection,up,down\nbase,1,1\nx,3,2\ny,2,1\nz,1,3\n";
  const Result three = cli("metrics " + (dir_ / "three.csv").string() + " --baseline base");
  EXPECT_NE(three.output.find("x           1.50"), std::string::npos) << three.output;
  EXPECT_NE(three.output.find("z           3.00"), std::string::npos) << three.output;

  EXPECT_EQ(cli("metrics /nonexistent.csv").code, 1);
}
