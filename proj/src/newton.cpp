#include "latro/newton.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <set>

namespace latro {

LoadProgram LoadProgram::uniform(int increments) {
  if (increments < 1) throw DomainError("need at least one load increment");
  LoadProgram p;
  for (int k = 1; k <= increments; ++k) p.factors.push_back(static_cast<double>(k) / increments);
  return p;
}

void LoadProgram::validate() const {
  if (factors.empty()) throw DomainError("load program is empty");
  double prev = 0.0;
  for (double f : factors) {
    if (!(f > prev)) throw DomainError("load factors must increase strictly from 0");
    prev = f;
  }
  if (factors.back() != 1.0) throw DomainError("load program must end at factor 1");
}

void NewtonSettings::validate() const {
  if (!(rel_tol > 0.0)) throw DomainError("Newton tolerance must be positive");
  if (max_iter < 1) throw DomainError("max_iter must be >= 1");
  if (!(beta > 0.0 && beta < 1.0)) throw DomainError("line-search beta must lie in (0,1)");
  if (!(c > 0.0 && c < 1.0)) throw DomainError("Armijo constant must lie in (0,1)");
  if (max_backtracks < 0) throw DomainError("max_backtracks must be >= 0");
}

int NewtonTrace::total_iterations() const {
  int n = 0;
  for (const auto& inc : increments) n += static_cast<int>(inc.iterations.size());
  return n;
}

double line_search(const std::function<double(double)>& trial, double r0, const NewtonSettings& settings,
                   int* backtracks) {
  double alpha = 1.0;
  for (int m = 0; m <= settings.max_backtracks; ++m) {
    bool ok = false;
    try {
      ok = trial(alpha) <= (1.0 - settings.c * alpha) * r0;
    } catch (const InvertedElementError&) {
      ok = false;
    }
    if (ok) {
      if (backtracks) *backtracks = m;
      return alpha;
    }
    alpha *= settings.beta;
  }
  throw StepFailure("line search found no admissible step");
}

std::vector<Probe> default_probes(const BoundarySpec& bc, int dim) {
  std::vector<Probe> out;
  for (const auto& f : bc.faces) {
    if (f.kind == BcKind::Displacement) {
      for (int c : f.components) out.push_back({f.face, c});
    } else if (f.kind == BcKind::Traction) {
      for (int c = 0; c < dim && c < static_cast<int>(f.values.size()); ++c)
        if (f.values[c] != 0.0) out.push_back({f.face, c});
    }
  }
  return out;
}

void measure_probes(const LatticeModel& model, const std::vector<Probe>& probes, const VectorXd& u,
                    const VectorXd& raw_residual, const VectorXd& applied, std::vector<double>& reaction,
                    std::vector<double>& displacement) {
  reaction.clear();
  displacement.clear();
  for (const auto& p : probes) {
    std::set<int> fns;
    for (int s = 0; s < model.num_cells(); ++s)
      for (int side = 0; side < model.ref.num_sides(); ++side)
        if (model.side_tag(s, side) == p.face)
          for (int a : model.ref.side_functions[side]) fns.insert(model.cell_functions[s][a]);
    double r = 0.0, m = 0.0;
    for (int f : fns) {
      const int dof = model.dim * f + p.component;
      r += model.dirichlet[dof] ? raw_residual[dof] : raw_residual[dof] + applied[dof];
      m += u[dof];
    }
    reaction.push_back(r);
    displacement.push_back(fns.empty() ? 0.0 : m / static_cast<double>(fns.size()));
  }
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

class Driver {
 public:
  Driver(const LatticeModel& model, const MaterialParams& params, const NewtonSettings& settings, SolverPath path,
         const RbSettings& rb, const NewtonCallbacks& cb)
      : model_(model), as_(model, params, rb.reduced_points), settings_(settings), path_(path), rb_(rb), cb_(cb) {
    trace.path = path == SolverPath::Rb ? "rb" : "standard";
    if (path == SolverPath::Rb) {
      try {
        partition_ = partition_dofs(model, rb.initial_level);
        trace.final_level = rb.initial_level;
      } catch (const EnrichmentExhausted& e) {
        fallback(e.what());
      }
    }
    g_ = VectorXd::Zero(model.num_dofs());
    for (int i = 0; i < model.num_dofs(); ++i) g_[i] = model.dirichlet[i] ? model.dirichlet_value[i] : 0.0;
  }

  NewtonTrace trace;

  // Runs lam_prev -> lam; StepFailure leaves u untouched.
  IncrementRecord increment(int index, double lam_prev, double lam, VectorXd& u) {
    IncrementRecord rec;
    rec.index = index;
    rec.load = lam;
    rec.start_norm = u.norm();
    VectorXd x = u;
    const VectorXd dud = (lam - lam_prev) * g_;
    const bool lift = dud.cwiseAbs().maxCoeff() > 0.0;
    VectorXd r = as_.global_residual(x, lam);
    VectorXd rlin = r;
    if (lift) rlin += as_.dirichlet_coupling(x, dud);
    const double ref = rlin.norm();
    rec.reference_residual = ref;
    if (ref == 0.0) {
      rec.converged = true;
      u = x + dud;
      return rec;
    }
    double rn = ref;
    if (lift) {
      IterationRecord it;
      it.iteration = 0;
      it.residual = ref;
      const VectorXd rhs = -rlin;
      const VectorXd du = tangent_solve(index, 0, lam, x, rhs, it);
      const VectorXd trial = x + dud + du;
      try {
        r = as_.global_residual(trial, lam);
      } catch (const InvertedElementError&) {
        throw StepFailure("Dirichlet lifting predictor inverts an element");
      }
      x = trial;
      rn = r.norm();
      rec.iterations.push_back(std::move(it));
    }
    for (int i = 1;; ++i) {
      if (rn <= settings_.rel_tol * ref) break;
      if (i > settings_.max_iter) {
        rec.final_residual = rn;
        rec.converged = false;
        failed_ = rec;
        throw NonConvergenceError("Newton did not converge within max_iter iterations");
      }
      IterationRecord it;
      it.iteration = i;
      it.residual = rn;
      const VectorXd du = tangent_solve(index, i, lam, x, -r, it);
      VectorXd last;
      auto trial = [&](double a) {
        last = as_.global_residual(x + a * du, lam);
        return last.norm();
      };
      const double alpha = line_search(trial, rn, settings_, &it.backtracks);
      it.step = alpha;
      x += alpha * du;
      r = std::move(last);
      rn = r.norm();
      rec.iterations.push_back(std::move(it));
    }
    rec.final_residual = rn;
    rec.converged = true;
    u = x;
    return rec;
  }

  const Assembler& assembler() const { return as_; }
  std::optional<IncrementRecord> failed_;

 private:
  void fallback(const std::string& why) {
    if (!trace.direct_fallback) trace.warnings.push_back(std::string("falling back to the direct solver: ") + why);
    trace.direct_fallback = true;
  }

  VectorXd tangent_solve(int inc, int iter, double lam, const VectorXd& u, const VectorXd& rhs, IterationRecord& it) {
    if (cb_.before_solve) cb_.before_solve({inc, iter, lam, u, rhs, as_});
    it.level = trace.final_level;
    VectorXd du;
    if (path_ == SolverPath::Rb && !trace.direct_fallback) {
      du = rb_solve(u, rhs, it);
    } else {
      const auto t0 = Clock::now();
      const SparseMatrix K = as_.global_tangent(u);
      it.assembly_seconds = seconds_since(t0);
      const auto t1 = Clock::now();
      du = solve_direct(K, rhs, &it.stats);
      it.solve_seconds = seconds_since(t1);
    }
    trace.peak_memory_bytes = std::max(trace.peak_memory_bytes, it.stats.memory_bytes);
    return du;
  }

  VectorXd rb_solve(const VectorXd& u, const VectorXd& rhs, IterationRecord& it) {
    const int ns = model_.num_cells();
    const auto t0 = Clock::now();
    std::vector<VectorXd> us(ns);
    MatrixXd T(as_.pattern().nnz(), ns);
    for (int s = 0; s < ns; ++s) {
      us[s] = model_.gather(s, u);
      T.col(s) = as_.snapshot(s, us[s]);
    }
    ReducedBasis basis = greedy_select(T, rb_.epsilon);
    it.certificate = basis.certified_residual();
    std::unique_ptr<CellOperators> ops;
    try {
      compute_alpha(basis, T);
      std::vector<VectorXd> pv;
      for (int s : basis.principal) pv.push_back(as_.local_tangent(s, us[s]));
      ops = std::make_unique<CellOperators>(CellOperators::reduced(as_, basis, pv));
    } catch (const DegenerateBasisError& e) {
      // Every cell becomes principal for this iteration.
      trace.warnings.push_back(std::string(e.what()) + "; using exact local tangents");
      std::vector<VectorXd> all;
      for (int s = 0; s < ns; ++s) all.push_back(as_.local_tangent(s, us[s]));
      ops = std::make_unique<CellOperators>(CellOperators::exact(as_, all));
      basis.principal.clear();
      for (int s = 0; s < ns; ++s) basis.principal.push_back(s);
    }
    it.num_principal = static_cast<int>(basis.principal.size());
    it.principal = basis.principal;
    it.assembly_seconds = seconds_since(t0);
    const double snapshot_bytes = 8.0 * static_cast<double>(T.size());

    const auto t1 = Clock::now();
    while (true) {
      try {
        VectorXd du = solve_rb(model_, *partition_, *ops, rhs, rb_.solver, &it.stats);
        it.stats.enrichment_events = it.enrichment_events;
        it.stats.memory_bytes += snapshot_bytes;
        it.level = trace.final_level;
        it.solve_seconds = seconds_since(t1);
        return du;
      } catch (const NeedsEnrichment&) {
        try {
          partition_ = enrich_primal(model_, *partition_);
          trace.final_level = partition_->level;
          ++it.enrichment_events;
        } catch (const EnrichmentExhausted& e) {
          fallback(e.what());
          const SparseMatrix K = as_.global_tangent(u);
          VectorXd du = solve_direct(K, rhs, &it.stats);
          it.stats.enrichment_events = it.enrichment_events;
          it.solve_seconds = seconds_since(t1);
          return du;
        }
      }
    }
  }

  const LatticeModel& model_;
  Assembler as_;
  NewtonSettings settings_;
  SolverPath path_;
  RbSettings rb_;
  NewtonCallbacks cb_;
  std::optional<DofPartition> partition_;
  VectorXd g_;
};

}  // namespace

NewtonResult newton_solve(const LatticeModel& model, const MaterialParams& params, const LoadProgram& program,
                          const NewtonSettings& settings, SolverPath path, const RbSettings& rb,
                          const std::vector<Probe>& probes, const NewtonCallbacks& callbacks) {
  program.validate();
  settings.validate();
  if (!(rb.epsilon > 0.0)) throw DomainError("RB tolerance must be positive");
  if (rb.reduced_points < 1) throw DomainError("snapshot quadrature needs at least one point");
  Driver drv(model, params, settings, path, rb, callbacks);
  drv.trace.probes = probes;
  NewtonResult res;
  res.u = VectorXd::Zero(model.num_dofs());
  double prev = 0.0;
  auto finish = [&](IncrementRecord& rec) {
    VectorXd raw;
    drv.assembler().global_residual(res.u, rec.load, &raw);
    measure_probes(model, probes, res.u, raw, rec.load * drv.assembler().external_force(), rec.reaction,
                   rec.displacement);
    if (callbacks.after_increment) callbacks.after_increment(rec);
  };
  for (int k = 0; k < program.increments(); ++k) {
    const double lam = program.factors[k];
    try {
      try {
        IncrementRecord rec = drv.increment(k + 1, prev, lam, res.u);
        finish(rec);
        drv.trace.increments.push_back(std::move(rec));
      } catch (const StepFailure& first) {
        // Retry once as two half increments.
        const double mid = 0.5 * (prev + lam);
        IncrementRecord a = drv.increment(k + 1, prev, mid, res.u);
        a.halved = true;
        finish(a);
        drv.trace.increments.push_back(std::move(a));
        IncrementRecord b = drv.increment(k + 1, mid, lam, res.u);
        b.halved = true;
        finish(b);
        drv.trace.increments.push_back(std::move(b));
      }
    } catch (const StepFailure& e) {
      res.trace = drv.trace;
      throw NewtonStepFailure(e.what(), std::move(res));
    } catch (const NonConvergenceError& e) {
      if (drv.failed_) drv.trace.increments.push_back(*drv.failed_);
      res.trace = drv.trace;
      throw NewtonNonConvergence(e.what(), std::move(res));
    }
    prev = lam;
  }
  res.trace = drv.trace;
  return res;
}

}  // namespace latro
