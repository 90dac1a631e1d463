#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "vlift/config.hpp"
#include "vlift/io.hpp"

using namespace vlift;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("vlift_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

PathEnsemble small_ensemble(bool states) {
  const DiscreteLift lift = build_shift_lift(sqrt_kernel(1.0), 0.125, 1.0);
  auto grid = std::make_shared<const BrownianGrid>(make_brownian_grid(0.0, 1.0, 8, 6, 99));
  VolterraCoefficients c;
  c.beta = [](double, double x) { return -0.5 * x; };
  c.sigma = [](double, double) { return 0.3; };
  c.x0 = [](double) { return 1.0; };
  SimulationOptions opt;
  opt.store_states = states;
  opt.lift_coords = 2;
  return simulate_lifted(c, lift, constant_policy(0.25), grid,
                         embed_initial_curve(lift, c.x0, 8), opt);
}

}  // namespace

TEST(ConfigParse, SectionsTypesAndComments) {
  const auto t = parse_config_text(
      "# header\n"
      "[grid]\n"
      "n_paths = 10_000  # paths\n"
      "T = 1.5\n"
      "seed = 18446744073709551615\n"
      "[output]\n"
      "dir = \"out # not a comment\"\n"
      "write_binary = false\n");
  EXPECT_EQ(std::get<std::uint64_t>(t.at("grid.n_paths")), 10000u);
  EXPECT_DOUBLE_EQ(std::get<double>(t.at("grid.T")), 1.5);
  EXPECT_EQ(std::get<std::uint64_t>(t.at("grid.seed")), 18446744073709551615ull);
  EXPECT_EQ(std::get<std::string>(t.at("output.dir")), "out # not a comment");
  EXPECT_FALSE(std::get<bool>(t.at("output.write_binary")));
}

TEST(ConfigParse, ErrorsCarryLineNumbers) {
  try {
    parse_config_text("[grid]\nT = 1\nT = 2\n", "x.toml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.toml:3"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("[grid\n"), ConfigError);
  EXPECT_THROW(parse_config_text("novalue\n"), ConfigError);
  EXPECT_THROW(parse_config_text("a = \n"), ConfigError);
  EXPECT_THROW(parse_config_text("a = 1.2.3\n"), ConfigError);
  EXPECT_THROW(parse_config_file("/nonexistent/vlift.toml"), ConfigError);
}

TEST(ExperimentConfig, DefaultsAndDerivedValues) {
  ExperimentConfig c = config_from_table(parse_config_text("[grid]\nseed = 5\nn_steps = 32\n"));
  EXPECT_EQ(c.seed(), 5u);
  EXPECT_DOUBLE_EQ(c.dt(), 1.0 / 32);
  EXPECT_EQ(c.lift_kind(), "shift");
  EXPECT_NO_THROW(validate_config(c));
  c = config_from_table(
      parse_config_text("[problem]\nname = \"consumption_laplace\"\n[grid]\nseed = 1\n"));
  EXPECT_EQ(c.lift_kind(), "laplace");
  EXPECT_DOUBLE_EQ(c.kernel_spec().parameter, 0.5);
  c = config_from_table(parse_config_text("[problem]\nname = \"lq_smooth\"\n[grid]\nseed = 1\n"));
  EXPECT_DOUBLE_EQ(c.params.sigma0, 0.3);
}

TEST(ExperimentConfig, ValidationFailures) {
  auto bad = [](const std::string& text) {
    return config_from_table(parse_config_text(text));
  };
  EXPECT_THROW(validate_config(bad("[grid]\nn_steps = 8\n")), ConfigError);  // no seed
  EXPECT_THROW(validate_config(bad("[grid]\nseed = 1\n[lift]\ndt = 0.3\n")), ConfigError);
  EXPECT_THROW(validate_config(bad("[grid]\nseed = 1\nT = 2\n[lift]\nhorizon = 1\n")),
               ConfigError);
  EXPECT_THROW(validate_config(bad("[grid]\nseed = 1\n[lift]\nkind = \"laplace\"\n")),
               ConfigError);
  EXPECT_THROW(validate_config(bad("[grid]\nseed = 1\n[solver]\nmethod = \"newton\"\n")),
               ConfigError);
  EXPECT_THROW(bad("[grid]\nseed = 1\nbogus = 3\n"), ConfigError);
  EXPECT_THROW(bad("[grid]\nn_paths = -4\n"), ConfigError);
  EXPECT_THROW(bad("[problem]\nname = \"unknown\"\n"), ConfigError);
}

TEST(ExperimentConfig, PrintedConfigParsesBack) {
  const ExperimentConfig c = config_from_table(parse_config_text(
      "[problem]\nname = \"consumption_laplace\"\nsigma0 = 0.25\n[grid]\nseed = 42\n"
      "n_steps = 16\n[lift]\nnodes = 32\n"));
  std::ostringstream s;
  print_config(c, s);
  const ExperimentConfig back = config_from_table(parse_config_text(s.str()));
  EXPECT_EQ(back.seed(), 42u);
  EXPECT_EQ(back.lift.nodes, 32u);
  EXPECT_DOUBLE_EQ(back.params.sigma0, 0.25);
  EXPECT_EQ(back.problem, "consumption_laplace");
  std::ostringstream again;
  print_config(back, again);
  EXPECT_EQ(s.str(), again.str());
}

TEST(Samples, ShippedConfigsLoad) {
  for (const char* name : {"consumption_sqrt", "consumption_laplace", "lq_smooth",
                           "simulate_state_sigma", "laplace_8_nodes_tight"}) {
    const fs::path p = fs::path(VLIFT_SAMPLES_DIR) / (std::string(name) + ".toml");
    ExperimentConfig c;
    ASSERT_NO_THROW(c = load_config(p.string())) << name;
    EXPECT_NO_THROW(validate_config(c)) << name;
  }
}

TEST(EnsembleBinary, RoundTripIsBitExact) {
  for (bool states : {false, true}) {
    const PathEnsemble e = small_ensemble(states);
    std::stringstream buf;
    write_ensemble_binary(e, buf);
    const PathEnsemble r = read_ensemble_binary(buf);
    EXPECT_TRUE(r.X == e.X);
    EXPECT_TRUE(r.controls == e.controls);
    EXPECT_TRUE(r.forward == e.forward);
    EXPECT_TRUE(r.coords == e.coords);
    EXPECT_TRUE(r.grid->increments == e.grid->increments);
    EXPECT_EQ(r.grid->seed, e.grid->seed);
    EXPECT_EQ(r.states, e.states);
    EXPECT_EQ(r.sup_norm, e.sup_norm);
    EXPECT_EQ(r.flagged, e.flagged);
    EXPECT_EQ(r.dim, e.dim);
  }
}

TEST(EnsembleBinary, RejectsGarbage) {
  std::stringstream buf("not an ensemble at all");
  EXPECT_THROW(read_ensemble_binary(buf), std::runtime_error);
  const PathEnsemble e = small_ensemble(false);
  std::stringstream full;
  write_ensemble_binary(e, full);
  std::stringstream cut(full.str().substr(0, full.str().size() / 2));
  EXPECT_THROW(read_ensemble_binary(cut), std::runtime_error);
}

TEST(EnsembleCsv, HeaderAndRowCount) {
  const PathEnsemble e = small_ensemble(true);
  std::ostringstream s;
  write_ensemble_csv(e, s, true, 3);
  std::istringstream in(s.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("path_id,step,t,X,z0", 0), 0u);
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 3u * 9u);
}

TEST(Bundle, RoundTripPreservesCoefficients) {
  SolutionBundle b;
  b.method = "lsmc";
  b.n_steps = 3;
  b.seed = 123456789012345ull;
  b.n_paths = 10;
  b.lift = "shift dim=6 dt=0.25";
  b.value = -0.1234567890123456789;
  b.std_error = 1e-3 / 3.0;
  for (std::size_t k = 0; k < 3; ++k) {
    Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(b.basis.size()), 0.1, 1.0);
    b.primary.push_back(p / (k + 3.0));
    b.secondary.push_back(-p * std::sqrt(k + 2.0));
  }
  const fs::path d = scratch_dir("bundle");
  write_bundle(b, d);
  EXPECT_TRUE(fs::exists(d / "step_0002.csv"));
  const SolutionBundle r = read_bundle(d);
  EXPECT_EQ(r.method, "lsmc");
  EXPECT_EQ(r.seed, b.seed);
  EXPECT_EQ(r.value, b.value);
  EXPECT_EQ(r.std_error, b.std_error);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_TRUE(r.primary[k] == b.primary[k]);
    EXPECT_TRUE(r.secondary[k] == b.secondary[k]);
  }
  const StepwiseFit f = r.fit([](double x) { return 2.0 * x; });
  EXPECT_DOUBLE_EQ(f.eval(3, Probe{1.5, 0.0, {}}), 3.0);
  fs::remove(d / "step_0001.csv");
  EXPECT_THROW(read_bundle(d), std::runtime_error);
  fs::remove_all(d);
}

TEST(PolicyTrace, Columns) {
  const PathEnsemble e = small_ensemble(false);
  std::ostringstream s;
  write_policy_trace(e, s, 2);
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "path_id,step,t,X,u");
  EXPECT_NE(s.str().find(",0.25\n"), std::string::npos);
}
