#include "latro/hyperelastic.hpp"

#include <cmath>

namespace latro {

namespace {

double checked_det(const Mat& F) {
  const double J = F.determinant();
  if (!(J > 0.0)) throw InvertedElementError("non-positive Jacobian determinant of F");
  return J;
}

}  // namespace

MaterialParams MaterialParams::from_young(double E, double nu) {
  if (!(E > 0.0) || !(nu > -1.0 && nu < 0.5)) {
    throw DomainError("material needs E > 0 and -1 < nu < 0.5");
  }
  MaterialParams m;
  m.E = E;
  m.nu = nu;
  m.lambda = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  m.mu = E / (2.0 * (1.0 + nu));
  return m;
}

Mat deformation_gradient(const Mat& grad_u) {
  Mat F = Mat::Identity(grad_u.rows(), grad_u.cols()) + grad_u;
  checked_det(F);
  return F;
}

Mat cauchy_stress(const Mat& F, const MaterialParams& m) {
  const double J = checked_det(F);
  const int d = static_cast<int>(F.rows());
  const Mat I = Mat::Identity(d, d);
  return (m.mu / J) * (F * F.transpose() - I) + (m.lambda / J) * std::log(J) * I;
}

Tensor4 moduli(const Mat& F, const MaterialParams& m) {
  const double J = checked_det(F);
  const int d = static_cast<int>(F.rows());
  const double a = m.lambda / J;
  const double b = (m.mu - m.lambda * std::log(J)) / J;
  Tensor4 C(d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l)
          C(i, j, k, l) = a * (i == j) * (k == l) + b * ((i == k) * (j == l) + (i == l) * (j == k));
  return C;
}

Tensor4 combined_tensor(const Mat& F, const Mat& sigma, const MaterialParams& m) {
  const Tensor4 C = moduli(F, m);
  const int d = C.d;
  Tensor4 D(d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) D(i, j, k, l) = C(i, k, j, l) + (i == j) * sigma(k, l);
  return D;
}

Tensor4 combined_tensor(const Mat& F, const MaterialParams& m) {
  return combined_tensor(F, cauchy_stress(F, m), m);
}

Tensor4 pullback_D(const Tensor4& D, const Mat& J) {
  const double det = J.determinant();
  if (!(std::abs(det) > 1e-300)) throw GeometryError("singular mapping Jacobian");
  const Mat Ji = J.inverse();
  const int d = D.d;
  // Contract one slot at a time: d^5 instead of d^6 operations.
  Tensor4 tmp(d), out(d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int b = 0; b < d; ++b) {
          double s = 0.0;
          for (int a = 0; a < d; ++a) s += D(i, j, a, b) * Ji(k, a);
          tmp(i, j, k, b) = s;
        }
  const double w = std::abs(det);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) {
          double s = 0.0;
          for (int b = 0; b < d; ++b) s += tmp(i, j, k, b) * Ji(l, b);
          out(i, j, k, l) = s * w;
        }
  return out;
}

}  // namespace latro
