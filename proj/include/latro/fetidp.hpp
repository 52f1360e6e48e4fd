#pragma once

// Tangent solves: the sparse-direct reference path and the reduced-basis
// path on the FETI-DP saddle-point system with edge-average coarse
// augmentation and an inexact block preconditioner built from the
// principal cells only.

#include "latro/assembly.hpp"
#include "latro/lattice.hpp"
#include "latro/rom.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <memory>
#include <string>
#include <vector>

namespace latro {

struct SolverSettings {
  double outer_tol = 1e-8;
  double inner_tol = 1e-2;
  int max_outer = 300;
  int max_inner = 200;
  bool precondition = true;
};

struct SolveStats {
  std::string path;            // "direct" or "rb"
  int outer_iterations = 0;
  int inner_iterations = 0;
  int enrichment_events = 0;
  int factorizations = 0;      // stored local factorizations
  double achieved_residual = 0.0;
  double jump_inf = 0.0;       // ||B u_R||_inf on exit
  double edge_jump_inf = 0.0;  // ||Q^T B u_R||_inf on exit
  int negative_pivots = 0;     // direct path, LDL^T inertia
  double backward_error = 0.0; // direct path, ||Kx - b|| / (||K||_F ||x|| + ||b||)
  double memory_bytes = 0.0;   // stored matrices and factorizations
};

/// Reference path: sparse LDL^T with one refinement step, LU if that fails.
/// SolverError if K is singular.
VectorXd solve_direct(const SparseMatrix& K, const VectorXd& rhs, SolveStats* stats = nullptr);

/// Local tangents of all cells, stored as coefficients on the principal
/// cells' matrices: K~^s = M_s (sum_r alpha_rs K^{s_r}) M_s + (I - M_s).
struct CellOperators {
  std::vector<int> principal_cells;
  std::vector<SparseMatrix> principal;   // full symmetric, Dirichlet rows/cols zero
  MatrixXd alpha;                        // N_r x N_s
  std::vector<std::vector<char>> masks;  // Dirichlet flags per cell DOF

  int num_cells() const { return static_cast<int>(alpha.cols()); }
  int num_principal() const { return static_cast<int>(principal.size()); }
  VectorXd apply(int s, const VectorXd& x) const;
  SparseMatrix cell_matrix(int s) const;
  double memory_bytes() const;

  /// Every cell is its own principal.
  static CellOperators exact(const Assembler& as, const std::vector<VectorXd>& tangent_values);
  /// Principal tangents at full quadrature with alpha from the basis.
  static CellOperators reduced(const Assembler& as, const ReducedBasis& basis,
                               const std::vector<VectorXd>& principal_values);
};

/// Augmented saddle-point operator on x = [u_R (cells stacked); u_Pi; lambda; mu].
class SaddleSystem {
 public:
  SaddleSystem(const LatticeModel& model, const DofPartition& partition, const CellOperators& ops);

  int size() const { return n_r_total_ + n_pi_ + n_lambda_ + n_mu_; }
  int offset_primal() const { return n_r_total_; }
  int offset_lambda() const { return n_r_total_ + n_pi_; }
  int offset_mu() const { return n_r_total_ + n_pi_ + n_lambda_; }

  VectorXd apply(const VectorXd& x) const;
  /// Right-hand side from a global vector (Dirichlet rows already zero).
  VectorXd rhs(const VectorXd& global) const;
  /// Global vector from [u_R; u_Pi]; shared dual DOFs are averaged.
  VectorXd to_global(const VectorXd& x) const;

  /// B u_R and Q^T B u_R.
  VectorXd jump(const VectorXd& x) const;
  VectorXd edge_jump(const VectorXd& x) const;

  const LatticeModel& model() const { return *model_; }
  const DofPartition& partition() const { return *part_; }
  const CellOperators& operators() const { return *ops_; }

  /// Local cell vector from [u_R^s; u_Pi].
  VectorXd cell_vector(int s, const VectorXd& x) const;
  /// Adds B_s^T lambda to y_R^s.
  void add_jump_transpose(int s, const VectorXd& lambda, double* y_r) const;
  void add_edge_transpose(int s, const VectorXd& mu, double* y_r) const;

 private:
  const LatticeModel* model_;
  const DofPartition* part_;
  const CellOperators* ops_;
  int n_r_ = 0, n_r_total_ = 0, n_pi_ = 0, n_lambda_ = 0, n_mu_ = 0;
};

class FetiDpPreconditioner {
 public:
  /// Factorizes the remaining blocks of the principal cells only.
  /// NeedsEnrichment with the offending cells if one is not definite.
  FetiDpPreconditioner(const SaddleSystem& system, const SolverSettings& settings);
  ~FetiDpPreconditioner();

  VectorXd apply(const VectorXd& b) const;
  int num_factorizations() const;
  double memory_bytes() const;
  int inner_iterations() const { return inner_iterations_; }

  /// Interface operator F = B K_aug^{-1} B^T on multipliers.
  VectorXd apply_interface(const VectorXd& lambda) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  mutable int inner_iterations_ = 0;
};

/// RB saddle-point solve. K Delta u = rhs in the sense of the cell
/// operators; NonConvergenceError if max_outer is exceeded.
VectorXd solve_rb(const LatticeModel& model, const DofPartition& partition, const CellOperators& ops,
                  const VectorXd& rhs, const SolverSettings& settings, SolveStats* stats = nullptr);

}  // namespace latro
