#pragma once

// Load-incremented Newton-Raphson with Armijo backtracking, on either the
// sparse-direct path or the reduced-basis FETI-DP path.

#include "latro/assembly.hpp"
#include "latro/fetidp.hpp"
#include "latro/rom.hpp"

#include <functional>
#include <string>
#include <vector>

namespace latro {

struct LoadProgram {
  std::vector<double> factors;  // strictly increasing, last = 1

  static LoadProgram uniform(int increments);
  int increments() const { return static_cast<int>(factors.size()); }
  /// DomainError unless factors are strictly increasing in (0, 1] ending at 1.
  void validate() const;
};

struct NewtonSettings {
  double rel_tol = 1e-6;
  int max_iter = 50;
  double beta = 0.5;
  double c = 1e-4;
  int max_backtracks = 20;

  void validate() const;
};

enum class SolverPath { Standard, Rb };

struct RbSettings {
  double epsilon = 3e-4;
  SolverSettings solver;
  int initial_level = 0;
  int reduced_points = 2;  // snapshot quadrature points per direction
};

struct IterationRecord {
  int iteration = 0;       // 0 is the Dirichlet lifting predictor
  double residual = 0.0;   // ||r|| before the step
  double step = 1.0;
  int backtracks = 0;
  int num_principal = 0;
  std::vector<int> principal;
  double certificate = 0.0;  // max normalized snapshot residual
  int level = 0;
  int enrichment_events = 0;
  SolveStats stats;
  double assembly_seconds = 0.0;
  double solve_seconds = 0.0;
};

/// Measured quantity at convergence: force on and mean displacement of one
/// component on one face.
struct Probe {
  std::string face;
  int component = 0;
};

struct IncrementRecord {
  int index = 0;
  double load = 0.0;
  double reference_residual = 0.0;  // ||r(u^0)|| of the increment
  double final_residual = 0.0;
  bool converged = false;
  bool halved = false;
  double start_norm = 0.0;          // ||u|| when the increment started
  std::vector<IterationRecord> iterations;
  std::vector<double> reaction, displacement;  // per probe
};

struct NewtonTrace {
  std::string path;
  std::vector<Probe> probes;
  std::vector<IncrementRecord> increments;
  int final_level = 0;
  bool direct_fallback = false;
  std::vector<std::string> warnings;
  double peak_memory_bytes = 0.0;

  int total_iterations() const;
};

struct NewtonResult {
  VectorXd u;
  NewtonTrace trace;
};

class NewtonNonConvergence : public NonConvergenceError {
 public:
  NewtonNonConvergence(const std::string& what, NewtonResult partial)
      : NonConvergenceError(what), partial_(std::move(partial)) {}
  const NewtonResult& partial() const { return partial_; }

 private:
  NewtonResult partial_;
};

class NewtonStepFailure : public StepFailure {
 public:
  NewtonStepFailure(const std::string& what, NewtonResult partial)
      : StepFailure(what), partial_(std::move(partial)) {}
  const NewtonResult& partial() const { return partial_; }

 private:
  NewtonResult partial_;
};

/// Smallest m >= 0 with trial(beta^m) <= (1 - c beta^m) r0. `trial` returns
/// the residual norm at step alpha and may throw InvertedElementError,
/// which counts as a failed trial. StepFailure after max_backtracks.
double line_search(const std::function<double(double)>& trial, double r0, const NewtonSettings& settings,
                   int* backtracks = nullptr);

/// State handed to an observer before every tangent solve.
struct IterationContext {
  int increment;
  int iteration;
  double load;
  const VectorXd& u;
  const VectorXd& rhs;
  const Assembler& assembler;
};

struct NewtonCallbacks {
  std::function<void(const IterationContext&)> before_solve;
  std::function<void(const IncrementRecord&)> after_increment;
};

/// Probes of every Displacement face condition's components and every
/// nonzero traction component.
std::vector<Probe> default_probes(const BoundarySpec& bc, int dim);

NewtonResult newton_solve(const LatticeModel& model, const MaterialParams& params, const LoadProgram& program,
                          const NewtonSettings& settings, SolverPath path, const RbSettings& rb = {},
                          const std::vector<Probe>& probes = {}, const NewtonCallbacks& callbacks = {});

/// Force and mean displacement of each probe at state u. The force sums the
/// raw residual over constrained DOFs (the reaction) and the internal force
/// over free ones (the applied load at equilibrium).
void measure_probes(const LatticeModel& model, const std::vector<Probe>& probes, const VectorXd& u,
                    const VectorXd& raw_residual, const VectorXd& applied, std::vector<double>& reaction,
                    std::vector<double>& displacement);

}  // namespace latro
