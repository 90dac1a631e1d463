#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "vlift/experiments.hpp"

using namespace vlift;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

std::string cli_path() {
  const char* p = std::getenv("VLIFT_CLI");
  return p ? p : "";
}

std::string sample(const std::string& name) {
  return (fs::path(VLIFT_SAMPLES_DIR) / (name + ".toml")).string();
}

RunResult run(const std::string& args) {
  RunResult r;
  const std::string cmd = "'" + cli_path() + "' " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("vlift_cli_" + name);
  fs::remove_all(d);
  return d;
}

std::map<std::string, std::string> read_kv_csv(const fs::path& p) {
  std::map<std::string, std::string> out;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto c = line.find(',');
    out[line.substr(0, c)] = line.substr(c + 1);
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    if (cli_path().empty()) GTEST_SKIP() << "VLIFT_CLI not set";
  }
};

}  // namespace

TEST_F(Cli, VersionAndUsage) {
  const auto v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.output.find(kVersion), std::string::npos);
  EXPECT_EQ(run("").code, kExitConfig);
  EXPECT_EQ(run("frobnicate").code, kExitConfig);
  EXPECT_EQ(run("solve --no-such-flag").code, kExitConfig);
}

TEST_F(Cli, MissingSeedIsConfigError) {
  const fs::path out = scratch("noseed");
  const auto r = run("lift-check --out " + out.string());
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.output.find("seed"), std::string::npos);
}

TEST_F(Cli, PrintConfigRoundTrips) {
  const auto r = run("solve --config " + sample("lq_smooth") + " --steps 16 --print-config");
  ASSERT_EQ(r.code, 0);
  const ExperimentConfig c = config_from_table(parse_config_text(r.output));
  EXPECT_EQ(c.grid.n_steps, 16u);
  EXPECT_EQ(c.problem, "lq_smooth");
}

TEST_F(Cli, LiftCheckPassesAndTightLaplaceFails) {
  const fs::path a = scratch("lc_sqrt");
  EXPECT_EQ(run("lift-check --config " + sample("consumption_sqrt") + " --out " + a.string()).code,
            kExitOk);
  EXPECT_TRUE(fs::exists(a / "lift_check.csv"));
  EXPECT_TRUE(fs::exists(a / "manifest.txt"));
  EXPECT_EQ(read_kv_csv(a / "lift_check_report.csv")["status"], "pass");
  EXPECT_FALSE(fs::exists(a / ".vlift.lock"));

  const fs::path b = scratch("lc_tight");
  EXPECT_EQ(
      run("lift-check --config " + sample("laplace_8_nodes_tight") + " --out " + b.string()).code,
      kExitTolerance);
  EXPECT_EQ(read_kv_csv(b / "lift_check_report.csv")["status"], "fail");
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_F(Cli, SimulateWritesEquivalenceAndBinary) {
  const fs::path d = scratch("sim");
  const auto r = run("simulate --config " + sample("simulate_state_sigma") + " --out " + d.string());
  ASSERT_EQ(r.code, kExitOk) << r.output;
  const auto rep = read_kv_csv(d / "simulate_report.csv");
  EXPECT_LE(std::stod(rep.at("sup_abs_diff")), 1e-10);
  std::ifstream bin(d / "ensemble_lifted.bin", std::ios::binary);
  const PathEnsemble e = read_ensemble_binary(bin);
  EXPECT_EQ(e.n_paths(), 100u);
  EXPECT_EQ(e.n_steps(), 128u);
  fs::remove_all(d);
}

TEST_F(Cli, LockedDirectoryIsRefused) {
  const fs::path d = scratch("locked");
  fs::create_directories(d);
  std::ofstream(d / ".vlift.lock").put('x');
  const auto r = run("lift-check --config " + sample("consumption_sqrt") + " --out " + d.string());
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.output.find("locked"), std::string::npos);
  fs::remove_all(d);
}

TEST_F(Cli, SolveWritesReloadableBundles) {
  const fs::path d = scratch("solve");
  const auto r = run("solve --config " + sample("lq_smooth") + " --steps 16 --paths 2000 --out " +
                     d.string());
  ASSERT_EQ(r.code, kExitOk) << r.output;
  const SolutionBundle l = read_bundle(d / "bundle_lsmc");
  const SolutionBundle p = read_bundle(d / "bundle_picard");
  EXPECT_EQ(l.method, "lsmc");
  EXPECT_EQ(p.method, "picard");
  EXPECT_EQ(l.n_steps, 16u);
  EXPECT_EQ(l.secondary.size(), 16u);
  EXPECT_TRUE(p.secondary.empty());
  EXPECT_TRUE(fs::exists(d / "agreement.csv"));
  EXPECT_TRUE(fs::exists(d / "identification.csv"));
  fs::remove_all(d);
}

TEST(Experiments, ConsumptionReferenceMatchesClosedForm) {
  const ExperimentConfig c = config_from_table(parse_config_text("[grid]\nseed = 1\n"));
  const vlift::Setup s = make_setup(c);
  ASSERT_TRUE(consumption_reference(s).has_value());
  EXPECT_NEAR(*consumption_reference(s), consumption_closed_form(c.params), 1e-14);
  // Laplace kernel: int_0^1 1/(t + 1/2) dt = ln 3.
  const ExperimentConfig l = config_from_table(
      parse_config_text("[problem]\nname = \"consumption_laplace\"\n[grid]\nseed = 1\n"));
  EXPECT_NEAR(*consumption_reference(make_setup(l)), -0.2 * std::log(3.0), 1e-12);
  const ExperimentConfig q =
      config_from_table(parse_config_text("[problem]\nname = \"lq_smooth\"\n[grid]\nseed = 1\n"));
  EXPECT_FALSE(consumption_reference(make_setup(q)).has_value());
}

TEST(Experiments, RandomPoliciesAreAdmissibleAndSeeded) {
  const ControlProblem p = lq_smooth_problem(ProblemParams{});
  const auto a = random_policies(p, 20, 9, 1.0);
  const auto b = random_policies(p, 20, 9, 1.0);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_FALSE(a[i].is_feedback);
    for (double x : {-50.0, 0.0, 1.0, 50.0}) {
      const double u = a[i].policy(PolicyInput{0, 0.0, x, {}});
      EXPECT_GE(u, p.u_lo);
      EXPECT_LE(u, p.u_hi);
    }
  }
  EXPECT_NE(random_policies(p, 2, 10, 1.0)[0].name, a[0].name);
}

TEST(Experiments, RunCommandMapsErrors) {
  ExperimentConfig c = config_from_table(parse_config_text("[grid]\nseed = 1\n"));
  c.output.dir = scratch("unknown_cmd").string();
  std::ostringstream log, err;
  EXPECT_EQ(run_command("nope", c, log, err), kExitConfig);
  c.grid.seed.reset();
  EXPECT_EQ(run_command("lift-check", c, log, err), kExitConfig);
  fs::remove_all(c.output.dir);
}
