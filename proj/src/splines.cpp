#include "latro/splines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace latro {

namespace {

constexpr double kParamTol = 1e-12;

void check_param(double xi) {
  if (!(xi >= -kParamTol && xi <= 1.0 + kParamTol)) {
    std::ostringstream os;
    os << "parameter " << xi << " outside [0,1]";
    throw DomainError(os.str());
  }
}

double clamp01(double xi) { return std::min(1.0, std::max(0.0, xi)); }

}  // namespace

KnotVector::KnotVector(int degree, std::vector<double> knots)
    : degree_(degree), knots_(std::move(knots)) {
  if (degree_ < 0) throw DomainError("negative spline degree");
  const int m = static_cast<int>(knots_.size());
  if (m < 2 * (degree_ + 1)) throw DomainError("knot vector too short for its degree");
  for (int i = 1; i < m; ++i) {
    if (knots_[i] < knots_[i - 1]) throw DomainError("knot vector is not nondecreasing");
  }
  for (int i = 0; i <= degree_; ++i) {
    if (knots_[i] != 0.0 || knots_[m - 1 - i] != 1.0) {
      throw DomainError("knot vector must be open on [0,1]");
    }
  }
  if (knots_[degree_ + 1] == 0.0 || knots_[m - degree_ - 2] == 1.0) {
    throw DomainError("end knots repeated more than p+1 times");
  }
  int run = 1;
  for (int i = degree_ + 2; i < m - degree_ - 1; ++i) {
    run = (knots_[i] == knots_[i - 1]) ? run + 1 : 1;
    if (run > degree_) throw DomainError("interior knot multiplicity exceeds degree");
  }
}

KnotVector KnotVector::open_uniform(int degree, int elements) {
  if (elements < 1) throw DomainError("need at least one element");
  std::vector<double> k(degree + 1, 0.0);
  for (int e = 1; e < elements; ++e) k.push_back(static_cast<double>(e) / elements);
  k.insert(k.end(), degree + 1, 1.0);
  return KnotVector(degree, std::move(k));
}

std::vector<double> KnotVector::breakpoints() const {
  std::vector<double> b;
  for (double k : knots_) {
    if (b.empty() || k != b.back()) b.push_back(k);
  }
  return b;
}

int KnotVector::find_span(double xi) const {
  check_param(xi);
  xi = clamp01(xi);
  const int n = num_basis();
  if (xi >= knots_[n]) return n - 1;
  auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + n + 1, xi);
  return static_cast<int>(it - knots_.begin()) - 1;
}

double KnotVector::greville(int i) const {
  if (degree_ == 0) return 0.5 * (knots_[i] + knots_[i + 1]);
  double s = 0.0;
  for (int k = 1; k <= degree_; ++k) s += knots_[i + k];
  return s / degree_;
}

BasisEval eval_basis(const KnotVector& kv, double xi, int deriv_order) {
  return eval_basis_in_span(kv, kv.find_span(xi), clamp01(xi), deriv_order);
}

// Piegl & Tiller, algorithm A2.3.
BasisEval eval_basis_in_span(const KnotVector& kv, int span, double xi, int deriv_order) {
  check_param(xi);
  if (deriv_order < 0 || deriv_order > 2) throw DomainError("derivative order must be 0..2");
  const int p = kv.degree();
  const auto& U = kv.knots();
  BasisEval out;
  out.first = span - p;
  out.degree = p;
  out.order = deriv_order;
  out.data.assign((deriv_order + 1) * (p + 1), 0.0);

  double ndu[4][4];
  double left[4], right[4];
  if (p > 3) throw DomainError("degree above 3 is not supported");
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = xi - U[span + 1 - j];
    right[j] = U[span + j] - xi;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (int j = 0; j <= p; ++j) out(0, j) = ndu[j][p];

  double a[2][4];
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= deriv_order; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = (rk >= -1) ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      out(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double fac = p;
  for (int k = 1; k <= deriv_order; ++k) {
    for (int j = 0; j <= p; ++j) out(k, j) *= fac;
    fac *= (p - k);
  }
  return out;
}

SplinePatch::SplinePatch(std::vector<KnotVector> knots, std::vector<Vec> points,
                         std::vector<double> weights)
    : knots_(std::move(knots)), points_(std::move(points)), weights_(std::move(weights)) {
  if (knots_.empty() || knots_.size() > 3) throw DomainError("patch dimension must be 1..3");
  const int n = num_basis();
  if (static_cast<int>(points_.size()) != n) {
    throw DomainError("control point count does not match the basis count");
  }
  if (weights_.empty()) weights_.assign(n, 1.0);
  if (static_cast<int>(weights_.size()) != n) throw DomainError("weight count mismatch");
  for (double w : weights_) {
    if (!(w > 0.0)) throw DomainError("weights must be strictly positive");
    if (w != 1.0) rational_ = true;
  }
  for (const auto& p : points_) {
    if (p.size() != points_[0].size()) throw DomainError("inconsistent control point size");
  }
}

int SplinePatch::num_basis() const {
  int n = 1;
  for (const auto& k : knots_) n *= k.num_basis();
  return n;
}

int SplinePatch::index(const std::vector<int>& multi) const {
  int idx = 0, stride = 1;
  for (int j = 0; j < dim(); ++j) {
    idx += multi[j] * stride;
    stride *= num_basis(j);
  }
  return idx;
}

std::vector<int> SplinePatch::multi_index(int linear) const {
  std::vector<int> m(dim());
  for (int j = 0; j < dim(); ++j) {
    m[j] = linear % num_basis(j);
    linear /= num_basis(j);
  }
  return m;
}

void eval_patch_basis(const SplinePatch& patch, const Vec& theta, PatchBasisEval& out) {
  std::vector<int> spans(patch.dim());
  for (int j = 0; j < patch.dim(); ++j) spans[j] = patch.knots(j).find_span(theta[j]);
  eval_patch_basis_in_spans(patch, spans, theta, out);
}

void eval_patch_basis_in_spans(const SplinePatch& patch, const std::vector<int>& spans,
                               const Vec& theta, PatchBasisEval& out) {
  const int d = patch.dim();
  if (theta.size() != d) throw DomainError("parameter dimension mismatch");
  BasisEval b[3];
  int local[3] = {1, 1, 1};
  int total = 1;
  for (int j = 0; j < d; ++j) {
    b[j] = eval_basis_in_span(patch.knots(j), spans[j], clamp01(theta[j]), 1);
    local[j] = patch.degree(j) + 1;
    total *= local[j];
  }
  out.indices.resize(total);
  out.values.resize(total);
  out.grad.resize(total, d);

  const auto& w = patch.weights();
  double W = 0.0;
  double dW[3] = {0.0, 0.0, 0.0};
  int m[3] = {0, 0, 0};
  for (int a = 0; a < total; ++a) {
    int rest = a;
    for (int j = 0; j < d; ++j) {
      m[j] = rest % local[j];
      rest /= local[j];
    }
    double N = 1.0;
    for (int j = 0; j < d; ++j) N *= b[j](0, m[j]);
    int gidx = 0, stride = 1;
    for (int j = 0; j < d; ++j) {
      gidx += (b[j].first + m[j]) * stride;
      stride *= patch.num_basis(j);
    }
    out.indices[a] = gidx;
    out.values[a] = N;
    for (int k = 0; k < d; ++k) {
      double g = 1.0;
      for (int j = 0; j < d; ++j) g *= (j == k) ? b[j](1, m[j]) : b[j](0, m[j]);
      out.grad(a, k) = g;
    }
    if (patch.rational()) {
      const double wa = w[gidx];
      W += wa * N;
      for (int k = 0; k < d; ++k) dW[k] += wa * out.grad(a, k);
    }
  }
  if (!patch.rational()) return;
  for (int a = 0; a < total; ++a) {
    const double wa = w[out.indices[a]];
    const double N = out.values[a];
    out.values[a] = wa * N / W;
    for (int k = 0; k < d; ++k) {
      out.grad(a, k) = wa * (out.grad(a, k) * W - N * dW[k]) / (W * W);
    }
  }
}

MappingEval eval_patch(const SplinePatch& patch, const Vec& theta) {
  for (int j = 0; j < theta.size(); ++j) check_param(theta[j]);
  PatchBasisEval be;
  eval_patch_basis(patch, theta, be);
  const int sd = patch.space_dim();
  const int d = patch.dim();
  MappingEval e;
  e.x = Vec::Zero(sd);
  e.jacobian = Mat::Zero(sd, d);
  for (std::size_t a = 0; a < be.indices.size(); ++a) {
    const Vec& P = patch.points()[be.indices[a]];
    e.x += be.values[a] * P;
    for (int k = 0; k < d; ++k) e.jacobian.col(k) += be.grad(a, k) * P;
  }
  return e;
}

BezierMacroElement::BezierMacroElement(std::vector<int> degrees, std::vector<Vec> points) {
  std::vector<KnotVector> kv;
  for (int q : degrees) kv.push_back(KnotVector::bezier(q));
  patch_ = SplinePatch(std::move(kv), std::move(points));
}

MappingEval eval_macro(const BezierMacroElement& macro, const Vec& xi) {
  for (int j = 0; j < xi.size(); ++j) {
    if (xi[j] < -kParamTol || xi[j] > 1.0 + kParamTol) {
      throw GeometryError("micro image leaves the macro parametric domain");
    }
  }
  return eval_patch(macro.patch(), xi);
}

MappingEval eval_composed(const BezierMacroElement& macro, const SplinePatch& micro,
                          const Vec& theta) {
  const MappingEval s = eval_patch(micro, theta);
  const MappingEval b = eval_macro(macro, s.x);
  return {b.x, b.jacobian * s.jacobian};
}

}  // namespace latro
