#include "latro/rom.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace latro {

int ReducedBasis::principal_position(int s) const {
  for (int r = 0; r < num_principal(); ++r)
    if (principal[r] == s) return r;
  return -1;
}

ReducedBasis greedy_select(const MatrixXd& T, double epsilon) {
  if (!(epsilon > 0.0)) throw DomainError("greedy tolerance must be positive");
  const int ns = static_cast<int>(T.cols());
  if (ns < 1) throw DomainError("snapshot matrix has no columns");
  const int n = static_cast<int>(T.rows());

  ReducedBasis b;
  b.epsilon = epsilon;
  b.norms.resize(ns);
  b.zero_column.assign(ns, 0);
  MatrixXd delta(n, ns);
  for (int s = 0; s < ns; ++s) {
    b.norms[s] = T.col(s).norm();
    if (b.norms[s] == 0.0) {
      b.zero_column[s] = 1;
      delta.col(s).setZero();
    } else {
      delta.col(s) = T.col(s) / b.norms[s];
    }
  }
  std::vector<VectorXd> zeta;
  std::vector<VectorXd> beta_rows;
  while (true) {
    int best = -1;
    double worst = 0.0;
    for (int s = 0; s < ns; ++s) {
      const double r = delta.col(s).lpNorm<Eigen::Infinity>();
      if (r > worst) {
        worst = r;
        best = s;
      }
    }
    b.history.push_back(worst);
    if (worst <= epsilon || static_cast<int>(zeta.size()) >= std::min(ns, n)) break;

    VectorXd z = delta.col(best);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : zeta) z -= q.dot(z) * q;
    const double zn = z.norm();
    if (zn == 0.0) break;
    z /= zn;
    VectorXd row(ns);
    for (int s = 0; s < ns; ++s) {
      row[s] = z.dot(delta.col(s));
      delta.col(s) -= row[s] * z;
    }
    delta.col(best).setZero();
    zeta.push_back(std::move(z));
    beta_rows.push_back(std::move(row));
    b.principal.push_back(best);
  }

  const int nr = b.num_principal();
  b.Z.resize(n, nr);
  b.beta.resize(nr, ns);
  b.snapshots.resize(n, nr);
  for (int r = 0; r < nr; ++r) {
    b.Z.col(r) = zeta[r];
    b.beta.row(r) = beta_rows[r].transpose();
    b.snapshots.col(r) = T.col(b.principal[r]);
  }
  return b;
}

VectorXd project_coefficients(const ReducedBasis& basis, const VectorXd& t) {
  const int nr = basis.num_principal();
  if (nr == 0) throw DomainError("empty reduced basis");
  // Normal equations on unit-norm columns; alpha is rescaled afterwards.
  const VectorXd scale = basis.snapshots.colwise().norm().transpose();
  const MatrixXd A = basis.snapshots * scale.cwiseInverse().asDiagonal();
  const MatrixXd G = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(G, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) throw DegenerateBasisError("principal snapshot Gram matrix is ill-conditioned");
  const VectorXd y = G.ldlt().solve(A.transpose() * t);
  return y.cwiseQuotient(scale);
}

VectorXd alpha_from_beta(const ReducedBasis& basis, int s) {
  // Z^T t_eps is upper triangular because column r of t_eps lies in span(Z_1..Z_r).
  const MatrixXd R = basis.Z.transpose() * basis.snapshots;
  const VectorXd rhs = basis.norms[s] * basis.beta.col(s);
  return R.triangularView<Eigen::Upper>().solve(rhs);
}

void compute_alpha(ReducedBasis& basis, const MatrixXd& T) {
  const int ns = basis.num_cells(), nr = basis.num_principal();
  basis.alpha = MatrixXd::Zero(nr, ns);
  for (int s = 0; s < ns; ++s) {
    if (basis.zero_column[s]) continue;
    const int r = basis.principal_position(s);
    if (r >= 0) basis.alpha(r, s) = 1.0;
    else basis.alpha.col(s) = project_coefficients(basis, T.col(s));
  }
}

VectorXd reconstruct(const ReducedBasis& basis, int s) {
  return basis.norms[s] * (basis.Z * basis.beta.col(s));
}

VectorXd combine_tangents(const ReducedBasis& basis, int s, const std::vector<VectorXd>& principal_values) {
  VectorXd k = VectorXd::Zero(principal_values.front().size());
  for (int r = 0; r < basis.num_principal(); ++r) {
    const double a = basis.alpha(r, s);
    if (a != 0.0) k += a * principal_values[r];
  }
  return k;
}

}  // namespace latro
