#pragma once

// Quadrature on the reference cell and cell-local operators pulled back to
// it: internal and external forces, tangents on a fixed sparsity pattern,
// reduced-quadrature snapshots and the global residual.

#include "latro/hyperelastic.hpp"
#include "latro/lattice.hpp"

#include <Eigen/Sparse>

#include <vector>

namespace latro {

/// Gauss-Legendre nodes and weights on [0, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

/// Quadrature data of one knot-span element of one patch. Parametric data
/// are precomputed once and shared by every cell.
struct ElementQuadrature {
  int patch = 0;
  std::vector<int> functions;      // cell functions nonzero on the element
  std::vector<Vec> xi;             // S(theta_q), macro parametric coordinates
  std::vector<double> weight;      // Gauss weight * |det J_S|
  std::vector<double> param_weight;
  MatrixXd phi;                    // n_q x n_loc
  std::vector<MatrixXd> grad;      // per point: n_loc x d, gradient in xi

  int num_points() const { return static_cast<int>(xi.size()); }
};

struct QuadratureRule {
  int dim = 0;
  int points_per_dir = 0;
  std::vector<ElementQuadrature> elements;
  int num_points() const;
};

/// points_per_dir Gauss points per direction on every element of every patch.
QuadratureRule make_rule(const ReferenceUnitCell& ref, int points_per_dir);
/// (p+1)^d points per element.
QuadratureRule full_rule(const ReferenceUnitCell& ref, int p);
/// 2^d points per element by default.
QuadratureRule reduced_rule(const ReferenceUnitCell& ref, int points_per_dir = 2);

/// Upper triangle (with diagonal) of the reference-cell tangent pattern in
/// compressed column order, and element -> value position maps.
struct TangentPattern {
  int n = 0;
  SparseMatrix upper;
  std::vector<std::vector<int>> element_pos;  // (n_loc d)^2 per element, -1 below diagonal
  int nnz() const { return static_cast<int>(upper.nonZeros()); }
};

TangentPattern build_pattern(const QuadratureRule& rule, int dim);

/// Symmetric matrix with the given upper-pattern values.
SparseMatrix pattern_matrix(const TangentPattern& pattern, const VectorXd& values);
SparseMatrix pattern_full_matrix(const TangentPattern& pattern, const VectorXd& values);

class Assembler {
 public:
  Assembler(const LatticeModel& model, const MaterialParams& params, int reduced_points = 2);

  const LatticeModel& model() const { return *model_; }
  const MaterialParams& material() const { return params_; }
  const QuadratureRule& full() const { return full_; }
  const QuadratureRule& reduced() const { return reduced_; }
  const TangentPattern& pattern() const { return pattern_; }

  /// Internal force of cell s, full quadrature. InvertedElementError with
  /// the cell id if det F <= 0 at any point.
  VectorXd local_internal_force(int s, const VectorXd& us) const;

  /// Tangent values of cell s on the reference pattern; Dirichlet rows and
  /// columns zeroed unless `masked` is false.
  VectorXd local_tangent(int s, const VectorXd& us, bool masked = true) const;
  VectorXd local_tangent(int s, const VectorXd& us, const QuadratureRule& rule, bool masked) const;

  /// Reduced-quadrature tangent values, masked, in pattern order.
  VectorXd snapshot(int s, const VectorXd& us) const;

  /// External force of cell s at unit load factor; independent of u.
  const VectorXd& local_external_force(int s) const { return fext_[s]; }
  const VectorXd& external_force() const { return fext_global_; }

  /// r = f_int(u) - load * f_ext. `raw` receives r before Dirichlet rows
  /// are zeroed.
  VectorXd global_residual(const VectorXd& u, double load, VectorXd* raw = nullptr) const;

  /// Assembled tangent with Dirichlet elimination (unit diagonal).
  SparseMatrix global_tangent(const VectorXd& u) const;

  /// K_fd du with du nonzero only on Dirichlet DOFs, rows of Dirichlet
  /// DOFs zeroed. Only cells touching nonzero entries are evaluated.
  VectorXd dirichlet_coupling(const VectorXd& u, const VectorXd& du) const;

  const std::vector<char>& cell_mask(int s) const { return masks_[s]; }

 private:
  void compute_external();

  const LatticeModel* model_;
  MaterialParams params_;
  QuadratureRule full_, reduced_;
  TangentPattern pattern_;
  std::vector<std::vector<char>> masks_;
  std::vector<std::vector<int>> masked_pos_;  // pattern positions touching masked DOFs
  std::vector<VectorXd> fext_;
  VectorXd fext_global_;
};

}  // namespace latro
