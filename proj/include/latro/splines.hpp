#pragma once

// B-spline, NURBS and Bernstein evaluation on open knot vectors.
//
// Only the p+1 functions that can be nonzero at a parameter are ever
// evaluated; downstream assembly relies on that locality.

#include "latro/types.hpp"

#include <vector>

namespace latro {

class KnotVector {
 public:
  KnotVector() = default;
  /// Throws DomainError unless the vector is open on [0, 1] with interior
  /// multiplicities <= degree.
  KnotVector(int degree, std::vector<double> knots);

  static KnotVector open_uniform(int degree, int elements);
  static KnotVector bezier(int degree) { return open_uniform(degree, 1); }

  int degree() const { return degree_; }
  const std::vector<double>& knots() const { return knots_; }
  int num_basis() const { return static_cast<int>(knots_.size()) - degree_ - 1; }

  /// Distinct knot values, i.e. element boundaries.
  std::vector<double> breakpoints() const;
  int num_elements() const { return static_cast<int>(breakpoints().size()) - 1; }

  /// Index k with knots[k] <= xi < knots[k+1] (last nonempty span for xi = 1).
  int find_span(double xi) const;

  /// Greville abscissa of basis function i.
  double greville(int i) const;

 private:
  int degree_ = 0;
  std::vector<double> knots_;
};

/// Local basis values at one parameter: ders(k, j) is the k-th derivative of
/// basis function first + j.
struct BasisEval {
  int first = 0;
  int degree = 0;
  int order = 0;
  std::vector<double> data;

  double operator()(int k, int j) const { return data[k * (degree + 1) + j]; }
  double& operator()(int k, int j) { return data[k * (degree + 1) + j]; }
};

/// Cox-de Boor evaluation of the p+1 nonzero functions and up to
/// `deriv_order` (<= 2) derivatives.
BasisEval eval_basis(const KnotVector& kv, double xi, int deriv_order);

/// Same, with the knot span supplied by the caller (element-wise loops).
BasisEval eval_basis_in_span(const KnotVector& kv, int span, double xi, int deriv_order);

/// Tensor-product B-spline or NURBS patch. Control point (i_0, ..., i_{d-1})
/// is stored at i_0 + n_0 * (i_1 + n_1 * i_2), first direction fastest.
class SplinePatch {
 public:
  SplinePatch() = default;
  SplinePatch(std::vector<KnotVector> knots, std::vector<Vec> points,
              std::vector<double> weights = {});

  int dim() const { return static_cast<int>(knots_.size()); }
  const KnotVector& knots(int dir) const { return knots_[dir]; }
  const std::vector<KnotVector>& knot_vectors() const { return knots_; }
  int num_basis(int dir) const { return knots_[dir].num_basis(); }
  int num_basis() const;
  int degree(int dir) const { return knots_[dir].degree(); }

  const std::vector<Vec>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }
  /// Physical dimension of the control points (may exceed dim() for embedded
  /// patches, equal in everything this library builds).
  int space_dim() const { return points_.empty() ? 0 : static_cast<int>(points_[0].size()); }

  bool rational() const { return rational_; }
  int index(const std::vector<int>& multi) const;
  std::vector<int> multi_index(int linear) const;

 private:
  std::vector<KnotVector> knots_;
  std::vector<Vec> points_;
  std::vector<double> weights_;
  bool rational_ = false;
};

struct MappingEval {
  Vec x;
  Mat jacobian;  // jacobian(i, j) = d x_i / d theta_j
};

/// Nonzero (rational) basis functions of a patch at one parameter, with
/// parametric gradients: grad(a, j) = d R_a / d theta_j.
struct PatchBasisEval {
  std::vector<int> indices;
  std::vector<double> values;
  MatrixXd grad;
};

void eval_patch_basis(const SplinePatch& patch, const Vec& theta, PatchBasisEval& out);

/// As above with the knot span of every direction given.
void eval_patch_basis_in_spans(const SplinePatch& patch, const std::vector<int>& spans,
                               const Vec& theta, PatchBasisEval& out);

MappingEval eval_patch(const SplinePatch& patch, const Vec& theta);

/// One macro-element of a Bezier-extracted macro model: a polynomial patch
/// whose knot vectors are single-element (Bernstein).
class BezierMacroElement {
 public:
  BezierMacroElement() = default;
  BezierMacroElement(std::vector<int> degrees, std::vector<Vec> points);

  int dim() const { return patch_.dim(); }
  int degree(int dir) const { return patch_.degree(dir); }
  const std::vector<Vec>& points() const { return patch_.points(); }
  const SplinePatch& patch() const { return patch_; }

 private:
  SplinePatch patch_;
};

/// Evaluate B^s at a macro parameter xi in [0,1]^d (tolerance 1e-12).
MappingEval eval_macro(const BezierMacroElement& macro, const Vec& xi);

/// Point (B o S)(theta) and chain-rule Jacobian J_B(S(theta)) * J_S(theta).
MappingEval eval_composed(const BezierMacroElement& macro, const SplinePatch& micro,
                          const Vec& theta);

}  // namespace latro
