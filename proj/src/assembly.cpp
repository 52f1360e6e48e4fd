#include "latro/assembly.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace latro {

// Golub-Welsch: eigen-decomposition of the Legendre Jacobi matrix.
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw DomainError("need at least one quadrature point");
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) T(k, k - 1) = T(k - 1, k) = k / std::sqrt(4.0 * k * k - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = 0.5 * (1.0 + es.eigenvalues()[i]);
    weights[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
}

int QuadratureRule::num_points() const {
  int n = 0;
  for (const auto& e : elements) n += e.num_points();
  return n;
}

QuadratureRule make_rule(const ReferenceUnitCell& ref, int points_per_dir) {
  if (points_per_dir < 1) throw DomainError("points_per_dir must be >= 1");
  QuadratureRule rule;
  rule.dim = ref.dim;
  rule.points_per_dir = points_per_dir;
  const int d = ref.dim;
  std::vector<double> gx, gw;
  gauss_legendre(points_per_dir, gx, gw);
  int npts = 1;
  for (int j = 0; j < d; ++j) npts *= points_per_dir;

  for (std::size_t k = 0; k < ref.patches.size(); ++k) {
    const SplinePatch& patch = ref.patches[k];
    std::vector<std::vector<double>> bp(d);
    int nel = 1;
    for (int j = 0; j < d; ++j) {
      bp[j] = patch.knots(j).breakpoints();
      nel *= static_cast<int>(bp[j].size()) - 1;
    }
    for (int e = 0; e < nel; ++e) {
      std::vector<int> ei(d), spans(d);
      int rest = e;
      for (int j = 0; j < d; ++j) {
        const int nj = static_cast<int>(bp[j].size()) - 1;
        ei[j] = rest % nj;
        rest /= nj;
        spans[j] = patch.knots(j).find_span(0.5 * (bp[j][ei[j]] + bp[j][ei[j] + 1]));
      }
      ElementQuadrature eq;
      eq.patch = static_cast<int>(k);
      PatchBasisEval be;
      for (int q = 0; q < npts; ++q) {
        Vec theta(d);
        double w = 1.0;
        int r = q;
        for (int j = 0; j < d; ++j) {
          const int qi = r % points_per_dir;
          r /= points_per_dir;
          const double a = bp[j][ei[j]], b = bp[j][ei[j] + 1];
          theta[j] = a + (b - a) * gx[qi];
          w *= (b - a) * gw[qi];
        }
        eval_patch_basis_in_spans(patch, spans, theta, be);
        const int nloc = static_cast<int>(be.indices.size());
        if (q == 0) {
          for (int i : be.indices) eq.functions.push_back(ref.glue_map[k][i]);
          eq.phi.resize(npts, nloc);
        }
        Vec x = Vec::Zero(d);
        Mat JS = Mat::Zero(d, d);
        for (int a = 0; a < nloc; ++a) {
          const Vec& P = patch.points()[be.indices[a]];
          x += be.values[a] * P;
          for (int j = 0; j < d; ++j) JS.col(j) += be.grad(a, j) * P;
        }
        const double det = JS.determinant();
        if (!(det > 0.0)) throw GeometryError("reference patch with non-positive Jacobian");
        eq.xi.push_back(x);
        eq.param_weight.push_back(w);
        eq.weight.push_back(w * det);
        for (int a = 0; a < nloc; ++a) eq.phi(q, a) = be.values[a];
        eq.grad.push_back(be.grad * JS.inverse());
      }
      rule.elements.push_back(std::move(eq));
    }
  }
  return rule;
}

QuadratureRule full_rule(const ReferenceUnitCell& ref, int p) { return make_rule(ref, p + 1); }

QuadratureRule reduced_rule(const ReferenceUnitCell& ref, int points_per_dir) {
  return make_rule(ref, points_per_dir);
}

TangentPattern build_pattern(const QuadratureRule& rule, int dim) {
  TangentPattern pat;
  int nref = 0;
  for (const auto& e : rule.elements)
    for (int f : e.functions) nref = std::max(nref, f + 1);
  pat.n = dim * nref;
  std::vector<std::set<int>> cols(pat.n);
  for (const auto& e : rule.elements) {
    for (int fa : e.functions)
      for (int fb : e.functions)
        for (int i = 0; i < dim; ++i)
          for (int j = 0; j < dim; ++j) {
            const int r = dim * fa + i, c = dim * fb + j;
            if (r <= c) cols[c].insert(r);
          }
  }
  std::vector<Eigen::Triplet<double>> t;
  for (int c = 0; c < pat.n; ++c)
    for (int r : cols[c]) t.emplace_back(r, c, 1.0);
  pat.upper.resize(pat.n, pat.n);
  pat.upper.setFromTriplets(t.begin(), t.end());
  pat.upper.makeCompressed();
  const int* outer = pat.upper.outerIndexPtr();
  const int* inner = pat.upper.innerIndexPtr();
  auto position = [&](int r, int c) {
    const int* lo = inner + outer[c];
    const int* hi = inner + outer[c + 1];
    return static_cast<int>(std::lower_bound(lo, hi, r) - inner);
  };
  for (const auto& e : rule.elements) {
    const int nl = static_cast<int>(e.functions.size()) * dim;
    std::vector<int> pos(nl * nl, -1);
    for (int A = 0; A < nl; ++A)
      for (int B = 0; B < nl; ++B) {
        const int r = dim * e.functions[A / dim] + A % dim;
        const int c = dim * e.functions[B / dim] + B % dim;
        if (r <= c) pos[A * nl + B] = position(r, c);
      }
    pat.element_pos.push_back(std::move(pos));
  }
  return pat;
}

SparseMatrix pattern_matrix(const TangentPattern& pattern, const VectorXd& values) {
  SparseMatrix U = pattern.upper;
  std::copy(values.data(), values.data() + values.size(), U.valuePtr());
  return U;
}

SparseMatrix pattern_full_matrix(const TangentPattern& pattern, const VectorXd& values) {
  const SparseMatrix U = pattern_matrix(pattern, values);
  SparseMatrix full = U.selfadjointView<Eigen::Upper>();
  return full;
}

Assembler::Assembler(const LatticeModel& model, const MaterialParams& params, int reduced_points)
    : model_(&model), params_(params) {
  const int p = model.ref.patches.front().degree(0);
  full_ = full_rule(model.ref, p);
  reduced_ = reduced_rule(model.ref, reduced_points);
  pattern_ = build_pattern(full_, model.dim);
  if (pattern_.n != model.cell_dofs()) throw GeometryError("cell functions without quadrature support");
  const int* outer = pattern_.upper.outerIndexPtr();
  const int* inner = pattern_.upper.innerIndexPtr();
  for (int s = 0; s < model.num_cells(); ++s) {
    masks_.push_back(model.cell_dirichlet(s));
    std::vector<int> pos;
    for (int c = 0; c < pattern_.n; ++c)
      for (int k = outer[c]; k < outer[c + 1]; ++k)
        if (masks_[s][c] || masks_[s][inner[k]]) pos.push_back(k);
    masked_pos_.push_back(std::move(pos));
  }
  compute_external();
}

namespace {

struct PointKinematics {
  MatrixXd gradX;  // n_loc x d, reference-configuration gradients
  Mat F, JPsi;
  double detB = 0.0;
};

void kinematics(const BezierMacroElement& macro, const ElementQuadrature& e, int q,
                const VectorXd& us, int d, PointKinematics& k) {
  const MappingEval b = eval_macro(macro, e.xi[q]);
  k.detB = b.jacobian.determinant();
  if (!(k.detB > 0.0)) throw GeometryError("macro element with non-positive Jacobian");
  const Mat JBi = b.jacobian.inverse();
  k.gradX = e.grad[q] * JBi;
  k.F = Mat::Identity(d, d);
  for (std::size_t a = 0; a < e.functions.size(); ++a) {
    for (int i = 0; i < d; ++i) {
      const double ua = us[d * e.functions[a] + i];
      for (int j = 0; j < d; ++j) k.F(i, j) += ua * k.gradX(a, j);
    }
  }
  k.JPsi = k.F * b.jacobian;
}

}  // namespace

VectorXd Assembler::local_internal_force(int s, const VectorXd& us) const {
  const int d = model_->dim;
  VectorXd f = VectorXd::Zero(model_->cell_dofs());
  PointKinematics k;
  const auto& macro = model_->macro.elements[s];
  try {
    for (const auto& e : full_.elements) {
      for (int q = 0; q < e.num_points(); ++q) {
        kinematics(macro, e, q, us, d, k);
        const Mat sig = cauchy_stress(k.F, params_);
        const double detP = k.JPsi.determinant();
        // sigma J_Psi^-T grad_xi phi |det J_Psi|
        const Mat A = sig * k.JPsi.inverse().transpose() * (e.weight[q] * std::abs(detP));
        for (std::size_t a = 0; a < e.functions.size(); ++a) {
          for (int i = 0; i < d; ++i) {
            double v = 0.0;
            for (int j = 0; j < d; ++j) v += A(i, j) * e.grad[q](a, j);
            f[d * e.functions[a] + i] += v;
          }
        }
      }
    }
  } catch (const InvertedElementError&) {
    throw InvertedElementError("inverted element in cell " + std::to_string(s), s);
  }
  return f;
}

VectorXd Assembler::local_tangent(int s, const VectorXd& us, bool masked) const {
  return local_tangent(s, us, full_, masked);
}

VectorXd Assembler::local_tangent(int s, const VectorXd& us, const QuadratureRule& rule,
                                  bool masked) const {
  const int d = model_->dim;
  VectorXd vals = VectorXd::Zero(pattern_.nnz());
  PointKinematics k;
  const auto& macro = model_->macro.elements[s];
  std::vector<double> T;
  try {
    for (std::size_t ie = 0; ie < rule.elements.size(); ++ie) {
      const auto& e = rule.elements[ie];
      const auto& pos = pattern_.element_pos[ie];
      const int nf = static_cast<int>(e.functions.size());
      const int nl = nf * d;
      T.assign(static_cast<std::size_t>(nf) * d * d * d, 0.0);
      for (int q = 0; q < e.num_points(); ++q) {
        kinematics(macro, e, q, us, d, k);
        const Mat sig = cauchy_stress(k.F, params_);
        const Tensor4 Dr = pullback_D(combined_tensor(k.F, sig, params_), k.JPsi);
        const double w = e.weight[q];
        const MatrixXd& g = e.grad[q];
        // T_b(i,j,k) = sum_l Dref_ijkl g_bl
        for (int b = 0; b < nf; ++b)
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
              for (int kk = 0; kk < d; ++kk) {
                double v = 0.0;
                for (int l = 0; l < d; ++l) v += Dr(i, j, kk, l) * g(b, l);
                T[((b * d + i) * d + j) * d + kk] = v * w;
              }
        for (int a = 0; a < nf; ++a)
          for (int b = 0; b < nf; ++b)
            for (int i = 0; i < d; ++i)
              for (int j = 0; j < d; ++j) {
                const int p = pos[(a * d + i) * nl + (b * d + j)];
                if (p < 0) continue;
                double v = 0.0;
                for (int kk = 0; kk < d; ++kk) v += g(a, kk) * T[((b * d + i) * d + j) * d + kk];
                vals[p] += v;
              }
      }
    }
  } catch (const InvertedElementError&) {
    throw InvertedElementError("inverted element in cell " + std::to_string(s), s);
  }
  if (masked) {
    for (int p : masked_pos_[s]) vals[p] = 0.0;
  }
  return vals;
}

VectorXd Assembler::snapshot(int s, const VectorXd& us) const {
  return local_tangent(s, us, reduced_, true);
}

void Assembler::compute_external() {
  const LatticeModel& m = *model_;
  const int d = m.dim;
  fext_.assign(m.num_cells(), VectorXd::Zero(m.cell_dofs()));
  if (m.body_force.norm() > 0.0) {
    for (int s = 0; s < m.num_cells(); ++s) {
      for (const auto& e : full_.elements) {
        for (int q = 0; q < e.num_points(); ++q) {
          const double detB = eval_macro(m.macro.elements[s], e.xi[q]).jacobian.determinant();
          for (std::size_t a = 0; a < e.functions.size(); ++a)
            for (int i = 0; i < d; ++i)
              fext_[s][d * e.functions[a] + i] += e.weight[q] * e.phi(q, a) * m.body_force[i] * detB;
        }
      }
    }
  }
  std::vector<double> gx, gw;
  PatchBasisEval be;
  for (const auto& tr : m.tractions) {
    for (const PatchFace& face : m.ref.side_faces[tr.side]) {
      const SplinePatch& patch = m.ref.patches[face.patch];
      const int pd = face.side / 2;
      const double pval = face.side % 2;
      if (d != 2) throw ConfigError("tractions are implemented for 2-D lattices");
      const int td = 1 - pd;
      gauss_legendre(patch.degree(td) + 1, gx, gw);
      const auto bp = patch.knots(td).breakpoints();
      for (std::size_t el = 0; el + 1 < bp.size(); ++el) {
        for (std::size_t q = 0; q < gx.size(); ++q) {
          Vec theta(2);
          theta[pd] = pval;
          theta[td] = bp[el] + (bp[el + 1] - bp[el]) * gx[q];
          const double w = (bp[el + 1] - bp[el]) * gw[q];
          const MappingEval c = eval_composed(m.macro.elements[tr.cell], patch, theta);
          const double len = c.jacobian.col(td).norm();
          eval_patch_basis(patch, theta, be);
          for (std::size_t a = 0; a < be.indices.size(); ++a) {
            const int f = m.ref.glue_map[face.patch][be.indices[a]];
            for (int i = 0; i < d; ++i) fext_[tr.cell][d * f + i] += w * len * be.values[a] * tr.g[i];
          }
        }
      }
    }
  }
  fext_global_ = VectorXd::Zero(m.num_dofs());
  for (int s = 0; s < m.num_cells(); ++s) m.scatter_add(s, fext_[s], fext_global_);
}

VectorXd Assembler::global_residual(const VectorXd& u, double load, VectorXd* raw) const {
  const LatticeModel& m = *model_;
  VectorXd r = -load * fext_global_;
  for (int s = 0; s < m.num_cells(); ++s) m.scatter_add(s, local_internal_force(s, m.gather(s, u)), r);
  if (raw) *raw = r;
  for (int i = 0; i < m.num_dofs(); ++i)
    if (m.dirichlet[i]) r[i] = 0.0;
  return r;
}

SparseMatrix Assembler::global_tangent(const VectorXd& u) const {
  const LatticeModel& m = *model_;
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(m.num_cells()) * pattern_.nnz() * 2);
  const int* outer = pattern_.upper.outerIndexPtr();
  const int* inner = pattern_.upper.innerIndexPtr();
  for (int s = 0; s < m.num_cells(); ++s) {
    const VectorXd v = local_tangent(s, m.gather(s, u), true);
    for (int c = 0; c < pattern_.n; ++c) {
      const int gc = m.global_dof(s, c);
      for (int k = outer[c]; k < outer[c + 1]; ++k) {
        if (v[k] == 0.0) continue;
        const int gr = m.global_dof(s, inner[k]);
        t.emplace_back(gr, gc, v[k]);
        if (gr != gc) t.emplace_back(gc, gr, v[k]);
      }
    }
  }
  for (int i = 0; i < m.num_dofs(); ++i)
    if (m.dirichlet[i]) t.emplace_back(i, i, 1.0);
  SparseMatrix K(m.num_dofs(), m.num_dofs());
  K.setFromTriplets(t.begin(), t.end());
  return K;
}

VectorXd Assembler::dirichlet_coupling(const VectorXd& u, const VectorXd& du) const {
  const LatticeModel& m = *model_;
  VectorXd out = VectorXd::Zero(m.num_dofs());
  for (int s = 0; s < m.num_cells(); ++s) {
    const VectorXd dus = m.gather(s, du);
    if (dus.cwiseAbs().maxCoeff() == 0.0) continue;
    const SparseMatrix U = pattern_matrix(pattern_, local_tangent(s, m.gather(s, u), false));
    const VectorXd y = U.selfadjointView<Eigen::Upper>() * dus;
    m.scatter_add(s, y, out);
  }
  for (int i = 0; i < m.num_dofs(); ++i)
    if (m.dirichlet[i]) out[i] = 0.0;
  return out;
}

}  // namespace latro
