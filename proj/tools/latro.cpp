// latro: run, validate and compare lattice solves from config files.

#include "CLI11.hpp"
#include "latro/run.hpp"

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear lattice solver with reduced-basis local operators"};
  app.require_subcommand(1);

  std::string config, out_dir, a, b;
  auto* run = app.add_subcommand("run", "Solve the problem of a config file and write artifacts");
  run->add_option("config", config, "Config file")->required();
  run->add_option("-o,--out", out_dir, "Output directory (overrides output.dir)");
  auto* validate = app.add_subcommand("validate", "Check a config file and build its model");
  validate->add_option("config", config, "Config file")->required();
  auto* compare = app.add_subcommand("compare", "Compare two run reports side by side");
  compare->add_option("a", a, "Report file or run directory")->required();
  compare->add_option("b", b, "Report file or run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : latro::kConfigInvalid;
  }

  // LATRO_VERBOSE: 0 quiet, 1 per increment, 2 per iteration.
  int verbosity = 0;
  if (const char* v = std::getenv("LATRO_VERBOSE")) verbosity = std::atoi(v);

  if (*run) return latro::run_command(config, out_dir, verbosity, std::cout, std::cerr);
  if (*validate) return latro::validate_command(config, std::cout, std::cerr);
  return latro::compare_command(a, b, std::cout, std::cerr);
}
