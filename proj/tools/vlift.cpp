// vlift: command-line front end for lifted Volterra control experiments.
//
//   vlift <lift-check|simulate|solve|optimize|consumption-example>
//         [--config PATH] [--seed N] [--out DIR] [--paths N] [--steps N]
//         [--print-config]
//
// Exit codes: 0 success, 1 config error, 2 tolerance violation.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "vlift/experiments.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> paths;
  std::optional<std::size_t> steps;
  bool print_config = false;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "experiment config (TOML)");
  sub->add_option("--seed", o.seed, "override grid.seed");
  sub->add_option("--out", o.out, "override output.dir");
  sub->add_option("--paths", o.paths, "override grid.n_paths");
  sub->add_option("--steps", o.steps, "override grid.n_steps (dt follows T / steps)");
  sub->add_flag("--print-config", o.print_config, "print the resolved config and exit");
}

vlift::ExperimentConfig resolve(const Overrides& o) {
  vlift::ExperimentConfig cfg =
      o.config.empty() ? vlift::config_from_table({}) : vlift::load_config(o.config);
  if (o.seed) cfg.grid.seed = *o.seed;
  if (o.out) cfg.output.dir = *o.out;
  if (o.paths) cfg.grid.n_paths = *o.paths;
  if (o.steps) {
    cfg.grid.n_steps = *o.steps;
    cfg.lift.dt.reset();
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markovian-lift solver for controlled Volterra equations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(vlift::kVersion));
  Overrides o;
  const char* verbs[][2] = {
      {"lift-check", "compare the discrete lift with the kernel"},
      {"simulate", "direct vs lifted simulation on a shared seed"},
      {"solve", "value function by LSMC and/or Picard iteration"},
      {"optimize", "feedback policy, closed loop and verification"},
      {"consumption-example", "end-to-end optimal consumption bundle"},
  };
  for (const auto& v : verbs) add_common(app.add_subcommand(v[0], v[1]), o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : vlift::kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  vlift::ExperimentConfig cfg;
  try {
    cfg = resolve(o);
  } catch (const vlift::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return vlift::kExitConfig;
  }
  if (o.print_config) {
    vlift::print_config(cfg, std::cout);
    return vlift::kExitOk;
  }
  return vlift::run_command(command, cfg, std::cout, std::cerr);
}
