#include "latro/rom.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/QR>

using namespace latro;
using namespace latro::testing;

namespace {

MatrixXd random_matrix(int r, int c, unsigned seed) {
  MatrixXd m(r, c);
  const VectorXd v = random_vector(r * c, 1.0, seed);
  for (int j = 0; j < c; ++j) m.col(j) = v.segment(j * r, r);
  return m;
}

double max_certificate(const ReducedBasis& b, const MatrixXd& T) {
  double worst = 0;
  for (int s = 0; s < T.cols(); ++s) {
    if (b.norms[s] == 0) continue;
    const VectorXd d = T.col(s) / b.norms[s] - b.Z * b.beta.col(s);
    worst = std::max(worst, d.lpNorm<Eigen::Infinity>());
  }
  return worst;
}

}  // namespace

TEST(Greedy, IdenticalColumns) {
  const VectorXd c = random_vector(30, 1.0, 1);
  const MatrixXd T = c.replicate(1, 7);
  const auto b = greedy_select(T, 1e-8);
  ASSERT_EQ(b.num_principal(), 1);
  EXPECT_EQ(b.principal[0], 0);
}

TEST(Greedy, RankThreeMatchesOrthogonalFactorization) {
  const MatrixXd T = random_matrix(50, 3, 2) * random_matrix(3, 20, 3);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(T);
  qr.setThreshold(1e-10);
  const auto b = greedy_select(T, 1e-10);
  EXPECT_EQ(b.num_principal(), static_cast<int>(qr.rank()));
  EXPECT_EQ(b.num_principal(), 3);
}

TEST(Greedy, CertificateOrthonormalityMonotonicity) {
  MatrixXd T = random_matrix(40, 6, 4) * random_matrix(6, 25, 5);
  T += 1e-3 * random_matrix(40, 25, 6);
  for (double eps : {1e-1, 1e-2, 3e-4, 1e-8}) {
    const auto b = greedy_select(T, eps);
    EXPECT_LE(max_certificate(b, T), eps * (1 + 1e-12));
    EXPECT_LE(b.certified_residual(), eps);
    const MatrixXd I = MatrixXd::Identity(b.num_principal(), b.num_principal());
    EXPECT_LE((b.Z.transpose() * b.Z - I).lpNorm<Eigen::Infinity>(), 1e-10);
    // Per-column residuals shrink in the 2-norm; the max-norm maximum can
    // rise slightly between selections on unstructured data.
    double prev = 1.0 + 1e-15;
    for (int i = 0; i <= b.num_principal(); ++i) {
      double worst = 0;
      for (int s = 0; s < T.cols(); ++s) {
        const VectorXd d = T.col(s) / b.norms[s] - b.Z.leftCols(i) * b.beta.col(s).head(i);
        worst = std::max(worst, d.norm());
      }
      EXPECT_LE(worst, prev);
      prev = worst;
    }
    EXPECT_LE(b.num_principal(), 25);
  }
}

TEST(Greedy, MaxNormResidualMonotoneOnNestedColumns) {
  // Columns e_1, e_1 + e_2 / 2, e_1 + e_2 / 2 + e_3 / 4, ...
  MatrixXd T = MatrixXd::Zero(6, 6);
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i <= j; ++i) T(i, j) = std::pow(0.5, i);
  const auto b = greedy_select(T, 1e-12);
  for (std::size_t i = 1; i < b.history.size(); ++i) EXPECT_LE(b.history[i], b.history[i - 1]);
}

TEST(Greedy, IdempotentOnReconstructions) {
  MatrixXd T = random_matrix(40, 5, 7) * random_matrix(5, 30, 8) + 1e-2 * random_matrix(40, 30, 9);
  const auto b = greedy_select(T, 1e-2);
  MatrixXd Tr(T.rows(), T.cols());
  for (int s = 0; s < T.cols(); ++s) Tr.col(s) = reconstruct(b, s);
  EXPECT_LE(greedy_select(Tr, 1e-2).num_principal(), b.num_principal());
}

TEST(Greedy, DeterministicWithLowestIndexTieBreak) {
  MatrixXd T = MatrixXd::Zero(4, 4);
  T(0, 2) = 1;
  T(0, 1) = 1;
  T(1, 3) = 1;
  const auto a = greedy_select(T, 1e-12), b = greedy_select(T, 1e-12);
  EXPECT_EQ(a.principal, b.principal);
  EXPECT_EQ(a.principal.front(), 1);
}

TEST(Greedy, ZeroColumnsFlaggedAndNeverSelected) {
  MatrixXd T = random_matrix(10, 4, 10);
  T.col(2).setZero();
  const auto b = greedy_select(T, 1e-12);
  EXPECT_TRUE(b.zero_column[2]);
  EXPECT_EQ(b.principal_position(2), -1);
  for (int r = 0; r < b.num_principal(); ++r) EXPECT_EQ(b.beta(r, 2), 0.0);
}

TEST(Greedy, RejectsBadInput) {
  EXPECT_THROW(greedy_select(MatrixXd::Ones(3, 2), 0.0), DomainError);
  EXPECT_THROW(greedy_select(MatrixXd(3, 0), 1e-3), DomainError);
}

TEST(Projection, UnitAndExactCombinations) {
  const MatrixXd T = random_matrix(30, 4, 11);
  const auto b = greedy_select(T, 1e-12);
  ASSERT_EQ(b.num_principal(), 4);
  const int s1 = b.principal[0], s2 = b.principal[1];
  VectorXd a = project_coefficients(b, T.col(s1));
  EXPECT_NEAR(a[0], 1.0, 1e-12);
  EXPECT_NEAR(a.tail(3).norm(), 0.0, 1e-12);
  a = project_coefficients(b, 2 * T.col(s1) + 3 * T.col(s2));
  EXPECT_NEAR(a[0], 2.0, 1e-10);
  EXPECT_NEAR(a[1], 3.0, 1e-10);
  EXPECT_NEAR(a.tail(2).norm(), 0.0, 1e-10);
}

TEST(Projection, InSpanReconstructionAndBetaRouteAgree) {
  const MatrixXd T = random_matrix(60, 3, 12) * random_matrix(3, 15, 13);
  auto b = greedy_select(T, 1e-10);
  compute_alpha(b, T);
  for (int s = 0; s < 15; ++s) {
    const VectorXd rec = b.snapshots * b.alpha.col(s);
    EXPECT_LE((rec - T.col(s)).norm() / T.col(s).norm(), 1e-10);
    EXPECT_LE((alpha_from_beta(b, s) - b.alpha.col(s)).norm(), 1e-9 * b.alpha.col(s).norm());
  }
}

TEST(Projection, DegenerateGram) {
  MatrixXd T(3, 2);
  T << 1, 1, 0, 1e-7, 0, 0;
  const auto b = greedy_select(T, 1e-9);
  ASSERT_EQ(b.num_principal(), 2);
  EXPECT_THROW(project_coefficients(b, T.col(0)), DegenerateBasisError);
}

TEST(ApproxTangent, AffineLatticeAtRestUsesOnePrincipal) {
  const auto m = uc1_model(3, 3, 2, 1);
  const Assembler as(m, material());
  const VectorXd zero = VectorXd::Zero(m.cell_dofs());
  MatrixXd T(as.pattern().nnz(), m.num_cells());
  for (int s = 0; s < m.num_cells(); ++s) T.col(s) = as.snapshot(s, zero);
  auto b = greedy_select(T, 3e-4);
  ASSERT_EQ(b.num_principal(), 1);
  compute_alpha(b, T);
  const std::vector<VectorXd> K = {as.local_tangent(b.principal[0], zero)};
  for (int s = 0; s < m.num_cells(); ++s) {
    const VectorXd exact = as.local_tangent(s, zero);
    EXPECT_LE((combine_tangents(b, s, K) - exact).norm() / exact.norm(), 1e-12);
  }
}

TEST(ApproxTangent, CompleteBasisIsExactAndTransferMonitored) {
  BoundarySpec bc;
  bc.faces.push_back({"bottom", BcKind::Fixed, {0, 1}, {}});
  const auto m = build_lattice(glue_reference_cell(uc1_cross(2, 1)), curved_beam_macro(3, 2, 3.0, 2.0, 0.3), bc);
  const Assembler as(m, material());
  const VectorXd u = random_vector(m.num_dofs(), 1e-3, 14);
  MatrixXd T(as.pattern().nnz(), m.num_cells());
  std::vector<VectorXd> exact;
  for (int s = 0; s < m.num_cells(); ++s) {
    T.col(s) = as.snapshot(s, m.gather(s, u));
    exact.push_back(as.local_tangent(s, m.gather(s, u)));
  }
  for (double eps : {1e-14, 3e-4}) {
    auto b = greedy_select(T, eps);
    compute_alpha(b, T);
    std::vector<VectorXd> K;
    for (int s : b.principal) K.push_back(exact[s]);
    double c = 0;
    for (int s = 0; s < m.num_cells(); ++s) {
      const double rel = (combine_tangents(b, s, K) - exact[s]).norm() / exact[s].norm();
      if (b.principal_position(s) >= 0) EXPECT_EQ(rel, 0.0);
      c = std::max(c, rel / eps);
    }
    if (b.num_principal() == m.num_cells()) EXPECT_EQ(c, 0.0);
    RecordProperty("transfer_constant_" + std::to_string(eps), std::to_string(c));
  }
}
