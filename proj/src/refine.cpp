#include "refine.hpp"

namespace latro::detail {

namespace {

using Line = std::vector<VectorXd>;

// Homogeneous control net (w P, w) with 1-D access along one direction.
struct Net {
  std::vector<int> n;
  std::vector<VectorXd> pts;
  bool rational = false;

  static Net from(const SplinePatch& p) {
    Net net;
    net.rational = p.rational();
    for (int j = 0; j < p.dim(); ++j) net.n.push_back(p.num_basis(j));
    const int sd = p.space_dim();
    for (int i = 0; i < p.num_basis(); ++i) {
      VectorXd h(sd + 1);
      const double w = p.weights()[i];
      h.head(sd) = w * p.points()[i];
      h[sd] = w;
      net.pts.push_back(h);
    }
    return net;
  }

  int size() const {
    int s = 1;
    for (int k : n) s *= k;
    return s;
  }

  int lin(const std::vector<int>& m) const {
    int idx = 0, stride = 1;
    for (std::size_t j = 0; j < n.size(); ++j) {
      idx += m[j] * stride;
      stride *= n[j];
    }
    return idx;
  }

  // Apply fn to every line along `dir`, fn maps a line to a new line (length may change).
  template <class Fn>
  Net map_lines(int dir, Fn fn) const {
    Net out;
    out.n = n;
    out.rational = rational;
    const int others = size() / n[dir];
    std::vector<Line> lines;
    for (int o = 0; o < others; ++o) {
      std::vector<int> m(n.size());
      int rest = o;
      for (std::size_t j = 0; j < n.size(); ++j) {
        if (static_cast<int>(j) == dir) continue;
        m[j] = rest % n[j];
        rest /= n[j];
      }
      Line line;
      for (int i = 0; i < n[dir]; ++i) {
        m[dir] = i;
        line.push_back(pts[lin(m)]);
      }
      lines.push_back(fn(line));
    }
    out.n[dir] = static_cast<int>(lines[0].size());
    out.pts.assign(out.size(), VectorXd());
    for (int o = 0; o < others; ++o) {
      std::vector<int> m(n.size());
      int rest = o;
      for (std::size_t j = 0; j < n.size(); ++j) {
        if (static_cast<int>(j) == dir) continue;
        m[j] = rest % n[j];
        rest /= n[j];
      }
      for (int i = 0; i < out.n[dir]; ++i) {
        m[dir] = i;
        out.pts[out.lin(m)] = lines[o][i];
      }
    }
    return out;
  }

  SplinePatch to_patch(std::vector<KnotVector> kv) const {
    std::vector<Vec> p;
    std::vector<double> w;
    for (const auto& h : pts) {
      const int sd = static_cast<int>(h.size()) - 1;
      w.push_back(h[sd]);
      p.push_back(h.head(sd) / h[sd]);
    }
    if (!rational) w.clear();
    return SplinePatch(std::move(kv), std::move(p), std::move(w));
  }
};

}  // namespace

SplinePatch elevate_bezier(const SplinePatch& patch, int dir) {
  if (patch.knots(dir).num_elements() != 1) throw DomainError("elevation needs a Bezier direction");
  const int p = patch.degree(dir);
  const Net net = Net::from(patch).map_lines(dir, [p](const Line& P) {
    Line Q(p + 2);
    Q[0] = P[0];
    Q[p + 1] = P[p];
    for (int i = 1; i <= p; ++i) {
      const double a = static_cast<double>(i) / (p + 1);
      Q[i] = a * P[i - 1] + (1.0 - a) * P[i];
    }
    return Q;
  });
  auto kv = patch.knot_vectors();
  kv[dir] = KnotVector::bezier(p + 1);
  return net.to_patch(kv);
}

SplinePatch insert_knot(const SplinePatch& patch, int dir, double u) {
  const KnotVector& kv = patch.knots(dir);
  const int p = kv.degree();
  const auto& U = kv.knots();
  const int k = kv.find_span(u);
  const Net net = Net::from(patch).map_lines(dir, [&](const Line& P) {
    const int n = static_cast<int>(P.size());
    Line Q(n + 1);
    for (int i = 0; i <= n; ++i) {
      if (i <= k - p) {
        Q[i] = P[i];
      } else if (i <= k) {
        const double a = (u - U[i]) / (U[i + p] - U[i]);
        Q[i] = a * P[i] + (1.0 - a) * P[i - 1];
      } else {
        Q[i] = P[i - 1];
      }
    }
    return Q;
  });
  auto knots = U;
  knots.insert(knots.begin() + k + 1, u);
  auto all = patch.knot_vectors();
  all[dir] = KnotVector(p, knots);
  return net.to_patch(all);
}

SplinePatch refine_bezier_patch(const SplinePatch& patch, int degree, int elements) {
  SplinePatch out = patch;
  for (int dir = 0; dir < patch.dim(); ++dir) {
    if (out.degree(dir) > degree) throw DomainError("target degree below patch degree");
    while (out.degree(dir) < degree) out = elevate_bezier(out, dir);
    for (int e = 1; e < elements; ++e) out = insert_knot(out, dir, static_cast<double>(e) / elements);
  }
  return out;
}

}  // namespace latro::detail
