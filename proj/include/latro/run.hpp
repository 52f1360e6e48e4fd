#pragma once

// Configuration-driven runs: flat key/value config files, model
// construction, and the report, trace and field artifacts of a solve.

#include "json.hpp"
#include "latro/newton.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace latro {

/// Parsed `key = value` entries, keys qualified by their `[section]`.
/// Values keep their literal kind so typed getters can reject mismatches.
struct ConfigValue {
  enum Kind { Number, String, Bool, Array } kind = Number;
  double number = 0.0;
  std::string text;
  bool flag = false;
  std::vector<ConfigValue> items;
  int line = 0;
};

using ConfigTable = std::map<std::string, ConfigValue>;

/// TOML subset: comments, [dotted.sections], numbers, "strings", booleans
/// and single-line arrays. ConfigError with the line number otherwise.
ConfigTable parse_config_text(const std::string& text);

struct RunConfig {
  std::string cell = "uc1";  // uc1 | uc3 | file
  std::string geometry_file;
  int nx = 4, ny = 2, p = 2;
  double h = 0.25;
  double width = 0.0, height = 0.0;  // 0: nx, ny
  std::string macro = "rectangle";   // rectangle | curved
  double bow = 0.0;
  double frame = 0.05, strut = 0.08, radius = 0.35;
  int reduced_points = 2;

  double E = 500.0, nu = 0.4;
  BoundarySpec bc;

  int increments = 4;
  std::vector<double> factors;  // empty: uniform
  double target = 1.0;          // scales tractions, imposed displacements and body force

  SolverPath path = SolverPath::Standard;
  NewtonSettings newton;
  RbSettings rb;

  std::string output_dir = "out";
  int vtk_samples = 3;

  int elements_per_patch() const;
  LoadProgram program() const;
  MaterialParams material() const;
};

/// Unknown keys, wrong kinds and out-of-range values throw ConfigError.
RunConfig config_from_table(const ConfigTable& table);
RunConfig load_config(const std::string& path);

LatticeModel build_model(const RunConfig& cfg);

/// Echo of the problem definition; two reports are comparable iff equal.
nlohmann::json problem_json(const RunConfig& cfg);

nlohmann::json trace_json(const NewtonTrace& trace);
/// Wall-clock data, kept apart from the trace so that it stays reproducible.
nlohmann::json timing_json(const NewtonTrace& trace, double wall_seconds);
nlohmann::json report_json(const RunConfig& cfg, const LatticeModel& model, const NewtonResult& result,
                           const std::string& status, const std::string& message);

/// VTK legacy ASCII unstructured grid; every element sampled on a
/// samples^d lattice, displacement as point data, cell index as cell data.
void write_vtk(std::ostream& out, const LatticeModel& model, const VectorXd& u, int samples);
/// RFC 4180 CSV, one row per converged increment.
void write_load_displacement(std::ostream& out, const NewtonTrace& trace);
void write_residuals(std::ostream& out, const NewtonTrace& trace);
void write_solution(std::ostream& out, const VectorXd& u);
VectorXd read_solution(const std::string& path);

/// Exit codes of the command-line front end.
enum ExitCode { kOk = 0, kFailure = 1, kConfigInvalid = 2, kNonConvergence = 3 };

/// `out_dir` overrides output.dir when nonempty. Progress goes to `log`
/// when verbosity > 0.
int run_command(const std::string& config_path, const std::string& out_dir, int verbosity, std::ostream& out,
                std::ostream& err);
int validate_command(const std::string& config_path, std::ostream& out, std::ostream& err);
/// Arguments are report files or run directories.
int compare_command(const std::string& a, const std::string& b, std::ostream& out, std::ostream& err);

}  // namespace latro
