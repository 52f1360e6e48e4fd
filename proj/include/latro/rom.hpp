#pragma once

// Greedy selection of principal cells from tangent snapshots and the
// reduced-basis reconstruction of every local tangent from them.

#include "latro/types.hpp"

#include <vector>

namespace latro {

struct ReducedBasis {
  double epsilon = 0.0;
  std::vector<int> principal;     // S, in selection order
  MatrixXd Z;                     // orthonormal, n_nz x N_r
  VectorXd norms;                 // ||t^s||_2
  MatrixXd beta;                  // N_r x N_s
  std::vector<char> zero_column;  // flagged zero-norm snapshots
  std::vector<double> history;    // max_s ||Delta^s||_inf before each selection and at exit
  MatrixXd snapshots;             // raw principal snapshots, n_nz x N_r
  MatrixXd alpha;                 // N_r x N_s, filled by compute_alpha

  int num_principal() const { return static_cast<int>(principal.size()); }
  int num_cells() const { return static_cast<int>(norms.size()); }
  double certified_residual() const { return history.empty() ? 0.0 : history.back(); }
  /// Position of cell s in S, or -1.
  int principal_position(int s) const;
};

/// Greedy principal-cell selection on the columns of T (one per cell).
/// Stops when every normalized column is reproduced to epsilon in the
/// max norm. Ties go to the lowest column index.
ReducedBasis greedy_select(const MatrixXd& T, double epsilon);

/// Least-squares coefficients of t onto the raw principal snapshots via
/// the normal equations. DegenerateBasisError if the column-scaled Gram
/// matrix has condition number above 1e12.
VectorXd project_coefficients(const ReducedBasis& basis, const VectorXd& t);

/// Coefficients from the certified decomposition ||t^s|| Z beta^s instead.
VectorXd alpha_from_beta(const ReducedBasis& basis, int s);

/// alpha for every column of T; principal cells get unit vectors and
/// zero-norm columns zero.
void compute_alpha(ReducedBasis& basis, const MatrixXd& T);

/// ||t^s|| Z beta^s.
VectorXd reconstruct(const ReducedBasis& basis, int s);

/// sum_r alpha_r^s K^{s_r} on the shared pattern.
VectorXd combine_tangents(const ReducedBasis& basis, int s, const std::vector<VectorXd>& principal_values);

}  // namespace latro
