#include "latro/fetidp.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace latro {

using Triplet = Eigen::Triplet<double>;

// ---------------------------------------------------------------- direct

namespace {

double sparse_bytes(const SparseMatrix& A) {
  return 12.0 * static_cast<double>(A.nonZeros()) + 4.0 * (A.outerSize() + 1);
}

// Up to three steps of iterative refinement, keeping the best iterate.
template <class Solver>
VectorXd refine(const Solver& f, const SparseMatrix& K, const VectorXd& b) {
  VectorXd x = f.solve(b);
  double best = (K * x - b).norm();
  for (int it = 0; it < 3 && best > 1e-13 * b.norm(); ++it) {
    const VectorXd y = x + f.solve(b - K * x);
    const double r = (K * y - b).norm();
    if (!(r < best)) break;
    x = y;
    best = r;
  }
  return x;
}

}  // namespace

VectorXd solve_direct(const SparseMatrix& K, const VectorXd& rhs, SolveStats* stats) {
  if (stats) {
    *stats = SolveStats{};
    stats->path = "direct";
    stats->factorizations = 1;
  }
  const double bn = rhs.norm();
  if (bn == 0.0) return VectorXd::Zero(rhs.size());
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(K);
  VectorXd x;
  bool ok = ldlt.info() == Eigen::Success;
  double factor_bytes = 0.0;
  if (ok) factor_bytes = sparse_bytes(ldlt.matrixL().nestedExpression()) + 8.0 * K.rows();
  if (ok) {
    const VectorXd D = ldlt.vectorD();
    const double scale = D.cwiseAbs().maxCoeff();
    for (int i = 0; i < D.size(); ++i) {
      if (!(std::abs(D[i]) > 1e-14 * scale)) ok = false;
      if (D[i] < 0 && stats) ++stats->negative_pivots;
    }
  }
  if (ok) {
    x = refine(ldlt, K, rhs);
    ok = x.allFinite() && (K * x - rhs).norm() <= 1e-12 * bn;
  }
  if (!ok) {
    Eigen::SparseLU<SparseMatrix> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success) throw SolverError("tangent matrix is singular");
    x = refine(lu, K, rhs);
    factor_bytes = 2.0 * sparse_bytes(K);  // lower bound; SparseLU does not expose its fill
    if (!x.allFinite()) throw SolverError("tangent matrix is singular");
  }
  if (stats) {
    const double r = (K * x - rhs).norm();
    stats->achieved_residual = r / bn;
    stats->backward_error = r / (K.norm() * x.norm() + bn);
  }
  if (stats) stats->memory_bytes = sparse_bytes(K) + factor_bytes;
  return x;
}

// ---------------------------------------------------------- cell operators

namespace {

SparseMatrix masked_full(const TangentPattern& pat, const VectorXd& values) {
  return pattern_full_matrix(pat, values);
}

}  // namespace

VectorXd CellOperators::apply(int s, const VectorXd& x) const {
  const auto& m = masks[s];
  VectorXd xm = x;
  for (int i = 0; i < xm.size(); ++i)
    if (m[i]) xm[i] = 0.0;
  VectorXd y = VectorXd::Zero(x.size());
  for (int r = 0; r < num_principal(); ++r) {
    const double a = alpha(r, s);
    if (a != 0.0) y += a * (principal[r] * xm);
  }
  for (int i = 0; i < y.size(); ++i)
    if (m[i]) y[i] = x[i];
  return y;
}

SparseMatrix CellOperators::cell_matrix(int s) const {
  const auto& m = masks[s];
  const int n = static_cast<int>(m.size());
  SparseMatrix K(n, n);
  for (int r = 0; r < num_principal(); ++r)
    if (alpha(r, s) != 0.0) K += alpha(r, s) * principal[r];
  std::vector<Triplet> t;
  for (int c = 0; c < K.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(K, c); it; ++it)
      if (!m[it.row()] && !m[it.col()]) t.emplace_back(it.row(), it.col(), it.value());
  for (int i = 0; i < n; ++i)
    if (m[i]) t.emplace_back(i, i, 1.0);
  SparseMatrix out(n, n);
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

double CellOperators::memory_bytes() const {
  double b = 8.0 * static_cast<double>(alpha.size());
  for (const auto& K : principal) b += sparse_bytes(K);
  return b;
}

CellOperators CellOperators::exact(const Assembler& as, const std::vector<VectorXd>& tangent_values) {
  CellOperators ops;
  const int ns = as.model().num_cells();
  ops.alpha = MatrixXd::Identity(ns, ns);
  for (int s = 0; s < ns; ++s) {
    ops.principal_cells.push_back(s);
    ops.principal.push_back(masked_full(as.pattern(), tangent_values[s]));
    ops.masks.push_back(as.cell_mask(s));
  }
  return ops;
}

CellOperators CellOperators::reduced(const Assembler& as, const ReducedBasis& basis,
                                     const std::vector<VectorXd>& principal_values) {
  CellOperators ops;
  ops.principal_cells = basis.principal;
  for (const auto& v : principal_values) ops.principal.push_back(masked_full(as.pattern(), v));
  ops.alpha = basis.alpha;
  for (int s = 0; s < as.model().num_cells(); ++s) ops.masks.push_back(as.cell_mask(s));
  return ops;
}

// ----------------------------------------------------------- saddle system

SaddleSystem::SaddleSystem(const LatticeModel& model, const DofPartition& partition, const CellOperators& ops)
    : model_(&model), part_(&partition), ops_(&ops) {
  n_r_ = partition.n_remaining();
  n_r_total_ = n_r_ * model.num_cells();
  n_pi_ = partition.num_primal;
  n_lambda_ = partition.num_multipliers;
  n_mu_ = partition.num_edge_constraints();
}

VectorXd SaddleSystem::cell_vector(int s, const VectorXd& x) const {
  const auto& p = *part_;
  VectorXd v(model_->cell_dofs());
  for (int k = 0; k < n_r_; ++k) v[p.remaining_dofs[k]] = x[s * n_r_ + k];
  for (int k = 0; k < p.n_primal_local(); ++k) v[p.primal_dofs[k]] = x[n_r_total_ + p.cell_primal[s][k]];
  return v;
}

void SaddleSystem::add_jump_transpose(int s, const VectorXd& lambda, double* y_r) const {
  for (const auto& j : part_->jumps[s]) y_r[j.rpos] += j.sign * lambda[j.row];
}

void SaddleSystem::add_edge_transpose(int s, const VectorXd& mu, double* y_r) const {
  const int d = part_->dim;
  for (const auto& at : part_->attached[s])
    for (int c = 0; c < d; ++c)
      for (int rp : part_->side_rdofs[at.side][c]) y_r[rp] += at.sign * mu[at.edge * d + c];
}

VectorXd SaddleSystem::apply(const VectorXd& x) const {
  const auto& p = *part_;
  VectorXd y = VectorXd::Zero(size());
  const VectorXd lambda = x.segment(offset_lambda(), n_lambda_);
  const VectorXd mu = x.segment(offset_mu(), n_mu_);
  for (int s = 0; s < model_->num_cells(); ++s) {
    const VectorXd w = ops_->apply(s, cell_vector(s, x));
    double* yr = y.data() + s * n_r_;
    for (int k = 0; k < n_r_; ++k) yr[k] += w[p.remaining_dofs[k]];
    for (int k = 0; k < p.n_primal_local(); ++k) y[n_r_total_ + p.cell_primal[s][k]] += w[p.primal_dofs[k]];
    add_jump_transpose(s, lambda, yr);
    add_edge_transpose(s, mu, yr);
  }
  y.segment(offset_lambda(), n_lambda_) = jump(x);
  y.segment(offset_mu(), n_mu_) = edge_jump(x);
  return y;
}

VectorXd SaddleSystem::jump(const VectorXd& x) const {
  VectorXd j = VectorXd::Zero(n_lambda_);
  for (int s = 0; s < model_->num_cells(); ++s)
    for (const auto& e : part_->jumps[s]) j[e.row] += e.sign * x[s * n_r_ + e.rpos];
  return j;
}

VectorXd SaddleSystem::edge_jump(const VectorXd& x) const {
  const int d = part_->dim;
  VectorXd q = VectorXd::Zero(n_mu_);
  for (int s = 0; s < model_->num_cells(); ++s)
    for (const auto& at : part_->attached[s])
      for (int c = 0; c < d; ++c)
        for (int rp : part_->side_rdofs[at.side][c]) q[at.edge * d + c] += at.sign * x[s * n_r_ + rp];
  return q;
}

VectorXd SaddleSystem::rhs(const VectorXd& global) const {
  const auto& m = *model_;
  const auto& p = *part_;
  VectorXd b = VectorXd::Zero(size());
  std::vector<char> seen(n_pi_, 0);
  for (int s = 0; s < m.num_cells(); ++s) {
    for (int k = 0; k < n_r_; ++k) {
      const int g = m.global_dof(s, p.remaining_dofs[k]);
      b[s * n_r_ + k] = global[g] / m.multiplicity[g / m.dim];
    }
    for (int k = 0; k < p.n_primal_local(); ++k) {
      const int gp = p.cell_primal[s][k];
      if (seen[gp]) continue;
      seen[gp] = 1;
      b[n_r_total_ + gp] = global[m.global_dof(s, p.primal_dofs[k])];
    }
  }
  return b;
}

VectorXd SaddleSystem::to_global(const VectorXd& x) const {
  const auto& m = *model_;
  const auto& p = *part_;
  VectorXd u = VectorXd::Zero(m.num_dofs());
  VectorXd count = VectorXd::Zero(m.num_dofs());
  for (int s = 0; s < m.num_cells(); ++s) {
    for (int k = 0; k < n_r_; ++k) {
      const int g = m.global_dof(s, p.remaining_dofs[k]);
      u[g] += x[s * n_r_ + k];
      count[g] += 1;
    }
    for (int k = 0; k < p.n_primal_local(); ++k) {
      const int g = m.global_dof(s, p.primal_dofs[k]);
      u[g] = x[n_r_total_ + p.cell_primal[s][k]];
      count[g] = 1;
    }
  }
  for (int i = 0; i < u.size(); ++i)
    if (count[i] > 1) u[i] /= count[i];
  return u;
}

// ---------------------------------------------------------- preconditioner

namespace {

// Data of one principal cell.
struct PrincipalData {
  Eigen::SimplicialLDLT<SparseMatrix> krr;
  MatrixXd Y;        // K_RR^{-1} [K_RPi | W_loc], n_R x (n_pl + n_w)
  MatrixXd S;        // K_PiPi - K_PiR K_RR^{-1} K_RPi
  MatrixXd X;        // K_PiR K_RR^{-1} W_loc
  MatrixXd Www;      // W_loc^T K_RR^{-1} W_loc
  MatrixXd Yd;       // rows of Y at Delta
  MatrixXd Fdd;      // (K_RR^{-1})_{Delta Delta}
  MatrixXd Sdd;      // Dirichlet Schur complement on Delta
};

MatrixXd dense_block(const SparseMatrix& K, const std::vector<int>& rows, const std::vector<int>& cols) {
  std::vector<int> ci(K.cols(), -1);
  for (std::size_t j = 0; j < cols.size(); ++j) ci[cols[j]] = static_cast<int>(j);
  std::vector<int> ri(K.rows(), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) ri[rows[i]] = static_cast<int>(i);
  MatrixXd out = MatrixXd::Zero(rows.size(), cols.size());
  for (int c = 0; c < K.outerSize(); ++c) {
    if (ci[c] < 0) continue;
    for (SparseMatrix::InnerIterator it(K, c); it; ++it)
      if (ri[it.row()] >= 0) out(ri[it.row()], ci[c]) = it.value();
  }
  return out;
}

SparseMatrix sparse_block(const SparseMatrix& K, const std::vector<int>& rows, const std::vector<int>& cols) {
  std::vector<int> ci(K.cols(), -1);
  for (std::size_t j = 0; j < cols.size(); ++j) ci[cols[j]] = static_cast<int>(j);
  std::vector<int> ri(K.rows(), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) ri[rows[i]] = static_cast<int>(i);
  std::vector<Triplet> t;
  for (int c = 0; c < K.outerSize(); ++c) {
    if (ci[c] < 0) continue;
    for (SparseMatrix::InnerIterator it(K, c); it; ++it)
      if (ri[it.row()] >= 0) t.emplace_back(ri[it.row()], ci[c], it.value());
  }
  SparseMatrix out(rows.size(), cols.size());
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

// Coarse column of (side, comp) in the local W block.
struct CoarseLink {
  int wcol;    // side * d + comp
  int global;  // index into [u_Pi; mu] coarse vector
  double sign;
};

}  // namespace

struct FetiDpPreconditioner::Impl {
  const SaddleSystem* sys = nullptr;
  SolverSettings settings;
  int n_r = 0, n_pl = 0, n_w = 0, n_pi = 0, n_mu = 0, d = 0;
  std::vector<int> delta_pos;       // positions in R of dual DOFs
  std::vector<int> delta_index;     // R position -> index in delta_pos or -1
  std::vector<std::unique_ptr<PrincipalData>> pr;
  // Per cell weights for degree 1, 0, -1 quantities.
  MatrixXd c1, c0, cm1;
  std::vector<std::vector<CoarseLink>> links;  // per cell, mu links
  Eigen::SparseLU<SparseMatrix> coarse;
  int coarse_size = 0;
  double coarse_nnz = 0.0;
  VectorXd q_diag;  // diag(Q^T Q)

  void build_principal(int r, const SparseMatrix& K, int cell);
  VectorXd coarse_solve(const VectorXd& rhs) const;
  // Approximate K_aug^{-1} on [u_R; u_Pi; mu].
  void aug_solve(const VectorXd& bR, const VectorXd& bPi, const VectorXd& bMu, VectorXd& uR, VectorXd& uPi,
                 VectorXd& mu) const;
  VectorXd interface_apply(const VectorXd& lambda) const;
  VectorXd dirichlet_apply(const VectorXd& lambda) const;
  VectorXd project(const VectorXd& lambda) const;
  VectorXd pcg(const VectorXd& rhs, int& iterations) const;
};

void FetiDpPreconditioner::Impl::build_principal(int r, const SparseMatrix& K, int cell) {
  const auto& p = sys->partition();
  auto& P = *pr[r];
  std::vector<int> R = p.remaining_dofs, Pi = p.primal_dofs;
  const SparseMatrix Krr = sparse_block(K, R, R);
  P.krr.compute(Krr);
  if (P.krr.info() != Eigen::Success) throw NeedsEnrichment("remaining block factorization failed", {cell});
  const VectorXd D = P.krr.vectorD();
  const double scale = Krr.diagonal().cwiseAbs().maxCoeff();
  for (int i = 0; i < D.size(); ++i)
    if (!(D[i] > 1e-12 * scale)) throw NeedsEnrichment("remaining block is not positive definite", {cell});

  MatrixXd rhs = MatrixXd::Zero(n_r, n_pl + n_w);
  rhs.leftCols(n_pl) = dense_block(K, R, Pi);
  for (int side = 0; side < 2 * d; ++side)
    for (int c = 0; c < d; ++c)
      for (int rp : p.side_rdofs[side][c]) rhs(rp, n_pl + side * d + c) = 1.0;
  P.Y = P.krr.solve(rhs);
  const MatrixXd Kpp = dense_block(K, Pi, Pi);
  const MatrixXd Kpr = rhs.leftCols(n_pl).transpose();
  P.S = Kpp - Kpr * P.Y.leftCols(n_pl);
  P.X = Kpr * P.Y.rightCols(n_w);
  P.Www = rhs.rightCols(n_w).transpose() * P.Y.rightCols(n_w);

  const int nd = static_cast<int>(delta_pos.size());
  MatrixXd E = MatrixXd::Zero(n_r, nd);
  for (int k = 0; k < nd; ++k) E(delta_pos[k], k) = 1.0;
  const MatrixXd G = P.krr.solve(E);
  P.Fdd.resize(nd, nd);
  P.Yd.resize(nd, n_pl + n_w);
  for (int k = 0; k < nd; ++k) {
    P.Fdd.row(k) = G.row(delta_pos[k]);
    P.Yd.row(k) = P.Y.row(delta_pos[k]);
  }

  // Dirichlet Schur complement on Delta from the interior block.
  std::vector<int> I;
  for (int k = 0; k < n_r; ++k)
    if (delta_index[k] < 0) I.push_back(k);
  const MatrixXd Kdd = dense_block(Krr, delta_pos, delta_pos);
  if (I.empty()) {
    P.Sdd = Kdd;
  } else {
    Eigen::SimplicialLDLT<SparseMatrix> kii(sparse_block(Krr, I, I));
    const MatrixXd Kid = dense_block(Krr, I, delta_pos);
    P.Sdd = Kdd - Kid.transpose() * kii.solve(Kid);
  }
}

VectorXd FetiDpPreconditioner::Impl::coarse_solve(const VectorXd& rhs) const {
  if (coarse_size == 0) return VectorXd();
  return coarse.solve(rhs);
}

void FetiDpPreconditioner::Impl::aug_solve(const VectorXd& bR, const VectorXd& bPi, const VectorXd& bMu,
                                           VectorXd& uR, VectorXd& uPi, VectorXd& mu) const {
  const auto& m = sys->model();
  const auto& p = sys->partition();
  const int ns = m.num_cells();
  const int nr_p = static_cast<int>(pr.size());
  uR = VectorXd::Zero(bR.size());
  // g_s = sum_r cm1_rs K_RR^r^{-1} b_s, batched per principal.
  for (int r = 0; r < nr_p; ++r) {
    std::vector<int> cells;
    for (int s = 0; s < ns; ++s)
      if (cm1(r, s) != 0.0) cells.push_back(s);
    if (cells.empty()) continue;
    MatrixXd B(n_r, cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) B.col(k) = bR.segment(cells[k] * n_r, n_r);
    const MatrixXd G = pr[r]->krr.solve(B);
    for (std::size_t k = 0; k < cells.size(); ++k)
      uR.segment(cells[k] * n_r, n_r) += cm1(r, cells[k]) * G.col(k);
  }
  VectorXd crhs = VectorXd::Zero(coarse_size);
  crhs.head(n_pi) = bPi;
  crhs.tail(n_mu) = bMu;
  std::vector<VectorXd> yb(ns);
  for (int s = 0; s < ns; ++s) {
    VectorXd t = VectorXd::Zero(n_pl + n_w);
    for (int r = 0; r < nr_p; ++r)
      if (c0(r, s) != 0.0) t += c0(r, s) * (pr[r]->Y.transpose() * bR.segment(s * n_r, n_r));
    for (int k = 0; k < n_pl; ++k) crhs[p.cell_primal[s][k]] -= t[k];
    for (const auto& l : links[s]) crhs[l.global] -= l.sign * t[n_pl + l.wcol];
    yb[s] = std::move(t);
  }
  const VectorXd c = coarse_solve(crhs);
  uPi = c.head(n_pi);
  mu = c.tail(n_mu);
  for (int s = 0; s < ns; ++s) {
    VectorXd loc = VectorXd::Zero(n_pl + n_w);
    for (int k = 0; k < n_pl; ++k) loc[k] = uPi[p.cell_primal[s][k]];
    for (const auto& l : links[s]) loc[n_pl + l.wcol] = l.sign * mu[l.global - n_pi];
    for (int r = 0; r < nr_p; ++r)
      if (c0(r, s) != 0.0) uR.segment(s * n_r, n_r) -= c0(r, s) * (pr[r]->Y * loc);
  }
}

VectorXd FetiDpPreconditioner::Impl::interface_apply(const VectorXd& lambda) const {
  const auto& m = sys->model();
  const auto& p = sys->partition();
  const int ns = m.num_cells();
  const int nd = static_cast<int>(delta_pos.size());
  const int nr_p = static_cast<int>(pr.size());
  std::vector<VectorXd> q(ns), g(ns);
  VectorXd crhs = VectorXd::Zero(coarse_size);
  VectorXd tmp(n_r);
  for (int s = 0; s < ns; ++s) {
    tmp.setZero();
    sys->add_jump_transpose(s, lambda, tmp.data());
    q[s].resize(nd);
    for (int k = 0; k < nd; ++k) q[s][k] = tmp[delta_pos[k]];
    g[s] = VectorXd::Zero(nd);
    VectorXd t = VectorXd::Zero(n_pl + n_w);
    for (int r = 0; r < nr_p; ++r) {
      if (cm1(r, s) != 0.0) g[s] += cm1(r, s) * (pr[r]->Fdd * q[s]);
      if (c0(r, s) != 0.0) t += c0(r, s) * (pr[r]->Yd.transpose() * q[s]);
    }
    for (int k = 0; k < n_pl; ++k) crhs[p.cell_primal[s][k]] -= t[k];
    for (const auto& l : links[s]) crhs[l.global] -= l.sign * t[n_pl + l.wcol];
  }
  const VectorXd c = coarse_solve(crhs);
  VectorXd out = VectorXd::Zero(lambda.size());
  for (int s = 0; s < ns; ++s) {
    VectorXd loc = VectorXd::Zero(n_pl + n_w);
    for (int k = 0; k < n_pl; ++k) loc[k] = c[p.cell_primal[s][k]];
    for (const auto& l : links[s]) loc[n_pl + l.wcol] = l.sign * c[l.global];
    VectorXd od = g[s];
    for (int r = 0; r < nr_p; ++r) {
      if (c0(r, s) != 0.0) od -= c0(r, s) * (pr[r]->Yd * loc);
    }
    for (const auto& j : p.jumps[s]) out[j.row] += j.sign * od[delta_index[j.rpos]];
  }
  return out;
}

VectorXd FetiDpPreconditioner::Impl::dirichlet_apply(const VectorXd& lambda) const {
  const auto& m = sys->model();
  const auto& p = sys->partition();
  const int nd = static_cast<int>(delta_pos.size());
  VectorXd out = VectorXd::Zero(lambda.size());
  VectorXd tmp(n_r);
  for (int s = 0; s < m.num_cells(); ++s) {
    if (p.jumps[s].empty()) continue;
    tmp.setZero();
    sys->add_jump_transpose(s, lambda, tmp.data());
    VectorXd q(nd);
    for (int k = 0; k < nd; ++k) q[k] = 0.5 * tmp[delta_pos[k]];
    VectorXd y = VectorXd::Zero(nd);
    for (std::size_t r = 0; r < pr.size(); ++r)
      if (c1(r, s) != 0.0) y += c1(r, s) * (pr[r]->Sdd * q);
    for (const auto& j : p.jumps[s]) out[j.row] += 0.5 * j.sign * y[delta_index[j.rpos]];
  }
  return out;
}

VectorXd FetiDpPreconditioner::Impl::project(const VectorXd& lambda) const {
  // I - Q (Q^T Q)^{-1} Q^T; Q has one unit entry per row.
  const auto& p = sys->partition();
  VectorXd avg = VectorXd::Zero(n_mu);
  for (const auto& e : p.edges)
    for (std::size_t k = 0; k < e.rows.size(); ++k)
      avg[(&e - p.edges.data()) * d + static_cast<int>(k) % d] += lambda[e.rows[k]];
  VectorXd out = lambda;
  for (const auto& e : p.edges) {
    const int ei = static_cast<int>(&e - p.edges.data());
    for (std::size_t k = 0; k < e.rows.size(); ++k) {
      const int col = ei * d + static_cast<int>(k) % d;
      out[e.rows[k]] -= avg[col] / q_diag[col];
    }
  }
  return out;
}

VectorXd FetiDpPreconditioner::Impl::pcg(const VectorXd& rhs, int& iterations) const {
  VectorXd x = VectorXd::Zero(rhs.size());
  VectorXd r = project(rhs);
  const double r0 = r.norm();
  iterations = 0;
  if (r0 == 0.0) return x;
  VectorXd z = project(dirichlet_apply(r));
  VectorXd pdir = z;
  double rz = r.dot(z);
  for (int it = 0; it < settings.max_inner; ++it) {
    const VectorXd Fp = project(interface_apply(pdir));
    const double pFp = pdir.dot(Fp);
    if (!(pFp > 0.0)) break;
    const double a = rz / pFp;
    x += a * pdir;
    r -= a * Fp;
    ++iterations;
    if (r.norm() <= settings.inner_tol * r0) break;
    z = project(dirichlet_apply(r));
    const double rz_new = r.dot(z);
    pdir = z + (rz_new / rz) * pdir;
    rz = rz_new;
  }
  return x;
}

FetiDpPreconditioner::FetiDpPreconditioner(const SaddleSystem& system, const SolverSettings& settings)
    : impl_(std::make_unique<Impl>()) {
  Impl& I = *impl_;
  I.sys = &system;
  I.settings = settings;
  const auto& m = system.model();
  const auto& p = system.partition();
  const auto& ops = system.operators();
  I.d = m.dim;
  I.n_r = p.n_remaining();
  I.n_pl = p.n_primal_local();
  I.n_w = 2 * I.d * I.d;
  I.n_pi = p.num_primal;
  I.n_mu = p.num_edge_constraints();
  I.coarse_size = I.n_pi + I.n_mu;
  I.delta_index.assign(I.n_r, -1);
  for (int a : p.dual_fn)
    for (int c = 0; c < I.d; ++c) {
      const int rp = p.rpos[I.d * a + c];
      I.delta_index[rp] = static_cast<int>(I.delta_pos.size());
      I.delta_pos.push_back(rp);
    }
  std::sort(I.delta_pos.begin(), I.delta_pos.end());
  for (std::size_t k = 0; k < I.delta_pos.size(); ++k) I.delta_index[I.delta_pos[k]] = static_cast<int>(k);

  const int ns = m.num_cells();
  const int nrp = ops.num_principal();
  for (int r = 0; r < nrp; ++r) I.pr.push_back(std::make_unique<PrincipalData>());
  std::vector<int> bad;
  for (int r = 0; r < nrp; ++r) {
    try {
      I.build_principal(r, ops.cell_matrix(ops.principal_cells[r]), ops.principal_cells[r]);
    } catch (const NeedsEnrichment& e) {
      bad.insert(bad.end(), e.cells().begin(), e.cells().end());
    }
  }
  if (!bad.empty()) throw NeedsEnrichment("principal remaining blocks are not definite", bad);

  I.c1 = ops.alpha;
  I.c0.resize(nrp, ns);
  I.cm1.resize(nrp, ns);
  for (int s = 0; s < ns; ++s) {
    double sum = ops.alpha.col(s).sum();
    if (!(std::abs(sum) > 1e-14 * ops.alpha.col(s).lpNorm<1>())) sum = 1.0;
    I.c0.col(s) = ops.alpha.col(s) / sum;
    I.cm1.col(s) = ops.alpha.col(s) / (sum * sum);
  }

  I.links.assign(ns, {});
  for (int s = 0; s < ns; ++s)
    for (const auto& at : p.attached[s])
      for (int c = 0; c < I.d; ++c) I.links[s].push_back({at.side * I.d + c, I.n_pi + at.edge * I.d + c, at.sign});

  I.q_diag = VectorXd::Zero(I.n_mu);
  for (std::size_t e = 0; e < p.edges.size(); ++e)
    for (std::size_t k = 0; k < p.edges[e].rows.size(); ++k) I.q_diag[e * I.d + k % I.d] += 1.0;

  if (I.coarse_size > 0) {
    std::vector<Triplet> t;
    for (int s = 0; s < ns; ++s) {
      MatrixXd S = MatrixXd::Zero(I.n_pl, I.n_pl), X = MatrixXd::Zero(I.n_pl, I.n_w),
               W = MatrixXd::Zero(I.n_w, I.n_w);
      for (int r = 0; r < nrp; ++r) {
        if (I.c1(r, s) != 0.0) S += I.c1(r, s) * I.pr[r]->S;
        if (I.c0(r, s) != 0.0) X += I.c0(r, s) * I.pr[r]->X;
        if (I.cm1(r, s) != 0.0) W += I.cm1(r, s) * I.pr[r]->Www;
      }
      const auto& cp = p.cell_primal[s];
      for (int a = 0; a < I.n_pl; ++a)
        for (int b = 0; b < I.n_pl; ++b) t.emplace_back(cp[a], cp[b], S(a, b));
      for (const auto& la : I.links[s]) {
        for (int a = 0; a < I.n_pl; ++a) {
          t.emplace_back(cp[a], la.global, -la.sign * X(a, la.wcol));
          t.emplace_back(la.global, cp[a], -la.sign * X(a, la.wcol));
        }
        for (const auto& lb : I.links[s]) t.emplace_back(la.global, lb.global, -la.sign * lb.sign * W(la.wcol, lb.wcol));
      }
    }
    SparseMatrix C(I.coarse_size, I.coarse_size);
    C.setFromTriplets(t.begin(), t.end());
    I.coarse_nnz = static_cast<double>(C.nonZeros());
    I.coarse.compute(C);
    if (I.coarse.info() != Eigen::Success) throw SolverError("coarse problem is singular");
  }
}

FetiDpPreconditioner::~FetiDpPreconditioner() = default;

int FetiDpPreconditioner::num_factorizations() const { return static_cast<int>(impl_->pr.size()); }

double FetiDpPreconditioner::memory_bytes() const {
  const Impl& I = *impl_;
  double b = 0.0;
  auto dense = [](const MatrixXd& m) { return 8.0 * static_cast<double>(m.size()); };
  for (const auto& p : I.pr) {
    b += sparse_bytes(p->krr.matrixL().nestedExpression()) + 8.0 * I.n_r;
    b += dense(p->Y) + dense(p->S) + dense(p->X) + dense(p->Www) + dense(p->Yd) + dense(p->Fdd) + dense(p->Sdd);
  }
  b += 8.0 * static_cast<double>(I.c1.size() + I.c0.size() + I.cm1.size());
  b += 2.0 * I.coarse_nnz * 12.0;
  return b;
}

VectorXd FetiDpPreconditioner::apply_interface(const VectorXd& lambda) const {
  return impl_->interface_apply(lambda);
}

VectorXd FetiDpPreconditioner::apply(const VectorXd& b) const {
  const Impl& I = *impl_;
  const SaddleSystem& sys = *I.sys;
  const int ns = sys.model().num_cells();
  const int nR = I.n_r * ns;
  const int nl = sys.partition().num_multipliers;
  const VectorXd bR = b.head(nR);
  const VectorXd bPi = b.segment(sys.offset_primal(), I.n_pi);
  const VectorXd bL = b.segment(sys.offset_lambda(), nl);
  const VectorXd bMu = b.segment(sys.offset_mu(), I.n_mu);

  VectorXd tR, tPi, tMu;
  I.aug_solve(bR, bPi, bMu, tR, tPi, tMu);
  VectorXd z = VectorXd::Zero(b.size());
  VectorXd zl = VectorXd::Zero(nl);
  if (nl > 0) {
    VectorXd x = VectorXd::Zero(sys.size());
    x.head(nR) = tR;
    const VectorXd rl = sys.jump(x) - bL;
    int its = 0;
    zl = I.pcg(rl, its);
    inner_iterations_ += its;
  }
  VectorXd bR2 = bR;
  for (int s = 0; s < ns; ++s) {
    VectorXd tmp = VectorXd::Zero(I.n_r);
    sys.add_jump_transpose(s, zl, tmp.data());
    bR2.segment(s * I.n_r, I.n_r) -= tmp;
  }
  I.aug_solve(bR2, bPi, bMu, tR, tPi, tMu);
  z.head(nR) = tR;
  z.segment(sys.offset_primal(), I.n_pi) = tPi;
  z.segment(sys.offset_lambda(), nl) = zl;
  z.segment(sys.offset_mu(), I.n_mu) = tMu;
  return z;
}

// ------------------------------------------------------------------ solve

namespace {

// Flexible GMRES without restart; Arnoldi with modified Gram-Schmidt.
template <class Op, class Prec>
VectorXd fgmres(const Op& A, const Prec& M, const VectorXd& b, double tol, int max_it, int& iterations,
                double& rel_res) {
  const int n = static_cast<int>(b.size());
  VectorXd x = VectorXd::Zero(n);
  const double bn = b.norm();
  iterations = 0;
  rel_res = 0.0;
  if (bn == 0.0) return x;
  std::vector<VectorXd> V, Z;
  MatrixXd H = MatrixXd::Zero(max_it + 1, max_it);
  VectorXd g = VectorXd::Zero(max_it + 1), cs = VectorXd::Zero(max_it), sn = VectorXd::Zero(max_it);
  V.push_back(b / bn);
  g[0] = bn;
  int k = 0;
  for (; k < max_it; ++k) {
    Z.push_back(M(V[k]));
    VectorXd w = A(Z[k]);
    for (int j = 0; j <= k; ++j) {
      H(j, k) = V[j].dot(w);
      w -= H(j, k) * V[j];
    }
    H(k + 1, k) = w.norm();
    for (int j = 0; j < k; ++j) {
      const double t = cs[j] * H(j, k) + sn[j] * H(j + 1, k);
      H(j + 1, k) = -sn[j] * H(j, k) + cs[j] * H(j + 1, k);
      H(j, k) = t;
    }
    const double den = std::hypot(H(k, k), H(k + 1, k));
    cs[k] = den > 0 ? H(k, k) / den : 1.0;
    sn[k] = den > 0 ? H(k + 1, k) / den : 0.0;
    const double hk1 = H(k + 1, k);
    H(k, k) = den;
    H(k + 1, k) = 0.0;
    g[k + 1] = -sn[k] * g[k];
    g[k] = cs[k] * g[k];
    rel_res = std::abs(g[k + 1]) / bn;
    if (rel_res <= tol || hk1 == 0.0) {
      ++k;
      break;
    }
    V.push_back(w / hk1);
  }
  iterations = k;
  const VectorXd y = H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
  for (int j = 0; j < k; ++j) x += y[j] * Z[j];
  return x;
}

}  // namespace

VectorXd solve_rb(const LatticeModel& model, const DofPartition& partition, const CellOperators& ops,
                  const VectorXd& rhs, const SolverSettings& settings, SolveStats* stats) {
  SaddleSystem sys(model, partition, ops);
  SolveStats st;
  st.path = "rb";
  const VectorXd b = sys.rhs(rhs);
  std::unique_ptr<FetiDpPreconditioner> P;
  if (settings.precondition) {
    P = std::make_unique<FetiDpPreconditioner>(sys, settings);
    st.factorizations = P->num_factorizations();
    st.memory_bytes = P->memory_bytes();
  }
  st.memory_bytes += ops.memory_bytes();
  auto A = [&](const VectorXd& v) { return sys.apply(v); };
  auto M = [&](const VectorXd& v) { return P ? P->apply(v) : v; };
  const double bn = b.norm();
  VectorXd x = VectorXd::Zero(b.size());
  // Restart on the true residual if rounding leaves it above the estimate.
  while (true) {
    const VectorXd r = b - sys.apply(x);
    st.achieved_residual = bn > 0 ? r.norm() / bn : 0.0;
    if (st.achieved_residual <= settings.outer_tol || st.outer_iterations >= settings.max_outer) break;
    int its = 0;
    double est = 0.0;
    const double tol = settings.outer_tol * bn / r.norm();
    x += fgmres(A, M, r, tol, settings.max_outer - st.outer_iterations, its, est);
    st.outer_iterations += its;
    if (its == 0) break;
  }
  st.inner_iterations = P ? P->inner_iterations() : 0;
  st.jump_inf = partition.num_multipliers > 0 ? sys.jump(x).lpNorm<Eigen::Infinity>() : 0.0;
  st.edge_jump_inf = partition.num_edge_constraints() > 0 ? sys.edge_jump(x).lpNorm<Eigen::Infinity>() : 0.0;
  if (stats) *stats = st;
  if (!(st.achieved_residual <= settings.outer_tol)) {
    throw NonConvergenceError("saddle-point solve did not reach the outer tolerance in " +
                              std::to_string(st.outer_iterations) + " iterations");
  }
  return sys.to_global(x);
}

}  // namespace latro
