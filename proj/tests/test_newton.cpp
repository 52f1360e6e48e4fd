#include "latro/newton.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace latro;
using namespace latro::testing;

namespace {

BoundarySpec cantilever(double g) {
  BoundarySpec bc;
  bc.faces.push_back({"left", BcKind::Fixed, {0, 1}, {}});
  bc.faces.push_back({"right", BcKind::Traction, {}, {0.0, -g}});
  return bc;
}

BoundarySpec column(double squeeze) {
  BoundarySpec bc;
  bc.faces.push_back({"bottom", BcKind::Fixed, {0, 1}, {}});
  bc.faces.push_back({"top", BcKind::Displacement, {1}, {-squeeze}});
  return bc;
}

// Uniform stretch u = e * x in the first component on a single free cell.
VectorXd stretch(const LatticeModel& m, double e) {
  VectorXd u = VectorXd::Zero(m.num_dofs());
  for (int s = 0; s < m.num_cells(); ++s) {
    const auto& fns = m.cell_functions[s];
    for (int a = 0; a < m.ref.n_ref; ++a) {
      const Vec x = eval_macro(m.macro.elements[s], m.ref.anchors[a]).x;
      u[2 * fns[a]] = e * x[0];
    }
  }
  return u;
}

double rel(const VectorXd& a, const VectorXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(LoadProgram, UniformAndValidation) {
  const auto p = LoadProgram::uniform(4);
  ASSERT_EQ(p.increments(), 4);
  EXPECT_DOUBLE_EQ(p.factors[0], 0.25);
  EXPECT_DOUBLE_EQ(p.factors[3], 1.0);
  EXPECT_NO_THROW(p.validate());
  EXPECT_THROW(LoadProgram::uniform(0), DomainError);
  EXPECT_THROW((LoadProgram{{0.5, 0.5, 1.0}}.validate()), DomainError);
  EXPECT_THROW((LoadProgram{{0.5, 0.8}}.validate()), DomainError);
  EXPECT_THROW((LoadProgram{{}}.validate()), DomainError);
}

TEST(NewtonSettings, Validation) {
  NewtonSettings s;
  EXPECT_NO_THROW(s.validate());
  s.beta = 1.0;
  EXPECT_THROW(s.validate(), DomainError);
  s = {};
  s.c = 0.0;
  EXPECT_THROW(s.validate(), DomainError);
}

TEST(LineSearch, FullStepOnQuadraticModel) {
  // r(u) = u - 1 from u = 3 with the exact Newton step.
  const double u = 3.0, du = -2.0;
  int bt = -1;
  const double a = line_search([&](double t) { return std::abs(u + t * du - 1.0); }, 2.0, {}, &bt);
  EXPECT_EQ(a, 1.0);
  EXPECT_EQ(bt, 0);
}

TEST(LineSearch, OnlySecondBacktrackPasses) {
  // |u|^3 from u = 1 along du = -7: 216, 15.6, 0.42 for m = 0, 1, 2.
  const double u = 1.0, du = -7.0;
  auto r = [&](double t) { return std::pow(std::abs(u + t * du), 3); };
  int bt = -1;
  const double a = line_search(r, 1.0, {}, &bt);
  EXPECT_EQ(a, 0.25);
  EXPECT_EQ(bt, 2);
}

TEST(LineSearch, InvertedTrialCountsAsFailure) {
  const auto m = build_lattice(glue_reference_cell({square_patch(2, 2)}), rectangle_macro(1, 1, 1, 1), {});
  const Assembler as(m, material());
  // From a 90% stretch, the full step lands on F_xx = -0.1, the half step on 0.9.
  const VectorXd u = stretch(m, 0.9), du = stretch(m, -2.0);
  const double r0 = as.global_residual(u, 0.0).norm();
  EXPECT_THROW(as.global_residual(u + du, 0.0), InvertedElementError);
  const double a = line_search([&](double t) { return as.global_residual(u + t * du, 0.0).norm(); }, r0, {});
  EXPECT_EQ(a, 0.5);
}

TEST(LineSearch, ExhaustedBacktracksThrow) {
  NewtonSettings s;
  s.max_backtracks = 3;
  int calls = 0;
  EXPECT_THROW(line_search([&](double) { ++calls; return 2.0; }, 1.0, s), StepFailure);
  EXPECT_EQ(calls, 4);
}

TEST(Newton, ZeroLoadTakesNoIterations) {
  BoundarySpec bc;
  bc.faces.push_back({"left", BcKind::Fixed, {0, 1}, {}});
  const auto m = uc1_model(2, 1, 2, 1, bc);
  for (auto path : {SolverPath::Standard, SolverPath::Rb}) {
    const auto res = newton_solve(m, material(), LoadProgram::uniform(2), {}, path);
    EXPECT_EQ(res.trace.total_iterations(), 0);
    EXPECT_EQ(res.u.norm(), 0.0);
    for (const auto& inc : res.trace.increments) EXPECT_TRUE(inc.converged);
  }
}

class SmallCantilever : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    bc_ = new BoundarySpec(cantilever(0.02));
    model_ = new LatticeModel(uc1_model(3, 2, 2, 1, *bc_));
    standard_ = new NewtonResult(newton_solve(*model_, material(), LoadProgram::uniform(3), {}, SolverPath::Standard,
                                              {}, default_probes(*bc_, 2)));
    rb_ = new NewtonResult(newton_solve(*model_, material(), LoadProgram::uniform(3), {}, SolverPath::Rb, {},
                                        default_probes(*bc_, 2)));
  }
  static void TearDownTestSuite() {
    delete standard_;
    delete rb_;
    delete model_;
    delete bc_;
  }

  static BoundarySpec* bc_;
  static LatticeModel* model_;
  static NewtonResult* standard_;
  static NewtonResult* rb_;
};

BoundarySpec* SmallCantilever::bc_ = nullptr;
LatticeModel* SmallCantilever::model_ = nullptr;
NewtonResult* SmallCantilever::standard_ = nullptr;
NewtonResult* SmallCantilever::rb_ = nullptr;

TEST_F(SmallCantilever, ConvergesOnFullQuadratureResidual) {
  const Assembler as(*model_, material());
  for (const auto* res : {standard_, rb_}) {
    ASSERT_EQ(res->trace.increments.size(), 3u);
    const auto& last = res->trace.increments.back();
    EXPECT_TRUE(last.converged);
    EXPECT_LE(last.final_residual, 1e-6 * last.reference_residual);
    // Independent evaluation at the returned state.
    EXPECT_LE(as.global_residual(res->u, 1.0).norm(), 1e-6 * last.reference_residual);
  }
}

TEST_F(SmallCantilever, PathsAgree) { EXPECT_LE(rel(rb_->u, standard_->u), 1e-6); }

TEST_F(SmallCantilever, AcceptedStepsSatisfyArmijo) {
  const double c = NewtonSettings{}.c;
  for (const auto* res : {standard_, rb_}) {
    for (const auto& inc : res->trace.increments) {
      for (std::size_t i = 0; i < inc.iterations.size(); ++i) {
        const auto& it = inc.iterations[i];
        const double next = i + 1 < inc.iterations.size() ? inc.iterations[i + 1].residual : inc.final_residual;
        EXPECT_GT(it.residual, 0.0);
        EXPECT_LE(next, (1.0 - c * it.step) * it.residual);
      }
    }
  }
}

TEST_F(SmallCantilever, WarmStartsFromPreviousIncrement) {
  const auto& incs = standard_->trace.increments;
  EXPECT_EQ(incs[0].start_norm, 0.0);
  EXPECT_GT(incs[1].start_norm, 0.0);
  EXPECT_LT(incs[1].start_norm, incs[2].start_norm);
  // A warm start needs fewer iterations than a cold one at the same load.
  const auto cold = newton_solve(*model_, material(), LoadProgram{{1.0}}, {}, SolverPath::Standard);
  EXPECT_LT(incs.back().iterations.size(), cold.trace.increments[0].iterations.size());
}

TEST_F(SmallCantilever, RecordsReducedBasisData) {
  for (const auto& inc : rb_->trace.increments) {
    for (const auto& it : inc.iterations) {
      EXPECT_GE(it.num_principal, 1);
      EXPECT_LT(it.num_principal, model_->num_cells());
      EXPECT_LE(it.certificate, 3e-4);
      EXPECT_EQ(it.stats.factorizations, it.num_principal);
    }
  }
  EXPECT_FALSE(rb_->trace.direct_fallback);
  EXPECT_EQ(rb_->trace.path, "rb");
}

TEST_F(SmallCantilever, LoadDisplacementProbes) {
  ASSERT_EQ(standard_->trace.probes.size(), 1u);
  double prev = 0.0;
  for (const auto& inc : standard_->trace.increments) {
    ASSERT_EQ(inc.displacement.size(), 1u);
    EXPECT_LT(inc.displacement[0], prev);
    prev = inc.displacement[0];
  }
}

TEST_F(SmallCantilever, TraceIsDeterministic) {
  const auto again = newton_solve(*model_, material(), LoadProgram::uniform(3), {}, SolverPath::Rb, {},
                                  default_probes(*bc_, 2));
  ASSERT_EQ(again.trace.total_iterations(), rb_->trace.total_iterations());
  for (std::size_t k = 0; k < again.trace.increments.size(); ++k) {
    const auto& a = again.trace.increments[k].iterations;
    const auto& b = rb_->trace.increments[k].iterations;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].residual, b[i].residual);
      EXPECT_EQ(a[i].principal, b[i].principal);
      EXPECT_EQ(a[i].stats.outer_iterations, b[i].stats.outer_iterations);
    }
  }
  EXPECT_EQ((again.u - rb_->u).norm(), 0.0);
}

TEST(Newton, MaxIterExceededCarriesPartialTrace) {
  const auto m = uc1_model(2, 1, 2, 1, cantilever(0.02));
  NewtonSettings s;
  s.max_iter = 1;
  try {
    newton_solve(m, material(), LoadProgram::uniform(1), s, SolverPath::Standard);
    FAIL() << "expected non-convergence";
  } catch (const NewtonNonConvergence& e) {
    ASSERT_EQ(e.partial().trace.increments.size(), 1u);
    const auto& inc = e.partial().trace.increments[0];
    EXPECT_FALSE(inc.converged);
    EXPECT_EQ(inc.iterations.size(), 1u);
    EXPECT_GT(inc.final_residual, 1e-6 * inc.reference_residual);
  }
}

TEST(Newton, DisplacementDrivenColumn) {
  const auto bc = column(0.01);
  const auto m = uc1_model(1, 2, 2, 1, bc);
  const auto probes = default_probes(bc, 2);
  const auto a = newton_solve(m, material(), LoadProgram::uniform(2), {}, SolverPath::Standard, {}, probes);
  const auto b = newton_solve(m, material(), LoadProgram::uniform(2), {}, SolverPath::Rb, {}, probes);
  for (const auto* res : {&a, &b}) {
    const auto& incs = res->trace.increments;
    ASSERT_EQ(incs.size(), 2u);
    // Lifting predictor first, imposed displacement reached exactly.
    EXPECT_EQ(incs[0].iterations[0].iteration, 0);
    EXPECT_NEAR(incs[1].displacement[0], -0.01, 1e-15);
    EXPECT_NEAR(incs[0].displacement[0], -0.005, 1e-15);
    // Force needed to hold the squeeze, growing with it.
    EXPECT_LT(incs[1].reaction[0], incs[0].reaction[0]);
    EXPECT_LT(incs[0].reaction[0], 0.0);
  }
  EXPECT_LE(rel(b.u, a.u), 1e-6);
  EXPECT_NEAR(b.trace.increments[1].reaction[0], a.trace.increments[1].reaction[0],
              1e-4 * std::abs(a.trace.increments[1].reaction[0]));
}

TEST(Newton, InitialPrimalLevelIsKept) {
  const auto m = uc1_model(2, 1, 2, 1, cantilever(0.01));
  RbSettings rb;
  rb.initial_level = 1;
  const auto res = newton_solve(m, material(), LoadProgram::uniform(1), {}, SolverPath::Rb, rb);
  EXPECT_EQ(res.trace.final_level, 1);
  for (const auto& it : res.trace.increments[0].iterations) EXPECT_EQ(it.level, 1);
}

TEST(Newton, RejectsBadEpsilon) {
  const auto m = uc1_model(1, 1, 2, 1, cantilever(0.01));
  RbSettings rb;
  rb.epsilon = 0.0;
  EXPECT_THROW(newton_solve(m, material(), LoadProgram::uniform(1), {}, SolverPath::Rb, rb), DomainError);
}
