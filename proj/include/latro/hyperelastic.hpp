#pragma once

// Compressible neo-Hookean law in spatial form.

#include "latro/types.hpp"

#include <array>

namespace latro {

struct MaterialParams {
  double E = 0.0;
  double nu = 0.0;
  double lambda = 0.0;
  double mu = 0.0;

  /// Throws DomainError unless E > 0 and -1 < nu < 0.5.
  static MaterialParams from_young(double E, double nu);
};

/// Dense fourth-order tensor for d <= 3, T(i, j, k, l).
struct Tensor4 {
  int d = 0;
  std::array<double, 81> v{};

  explicit Tensor4(int dim = 0) : d(dim) {}
  double& operator()(int i, int j, int k, int l) { return v[((i * d + j) * d + k) * d + l]; }
  double operator()(int i, int j, int k, int l) const { return v[((i * d + j) * d + k) * d + l]; }
};

/// F = I + grad_u; InvertedElementError if det F <= 0.
Mat deformation_gradient(const Mat& grad_u);

Mat cauchy_stress(const Mat& F, const MaterialParams& m);

/// C_ijkl = (lambda/J) d_ij d_kl + ((mu - lambda ln J)/J)(d_ik d_jl + d_il d_jk)
Tensor4 moduli(const Mat& F, const MaterialParams& m);

/// D_ijkl = C_ikjl + d_ij sigma_kl; i, j are displacement components of the
/// test and trial functions, k, l the derivative directions.
Tensor4 combined_tensor(const Mat& F, const MaterialParams& m);
Tensor4 combined_tensor(const Mat& F, const Mat& sigma, const MaterialParams& m);

/// Pull the last two (derivative) slots back to parametric coordinates:
/// D_ref_ijkl = sum D_ij ab Jinv_ka Jinv_lb |det J|, with Jinv = J^-1
/// indexed (parametric, spatial). GeometryError for singular J.
Tensor4 pullback_D(const Tensor4& D, const Mat& J);

}  // namespace latro
