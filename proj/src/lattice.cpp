#include "latro/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

namespace latro {

namespace {

constexpr double kCoincide = 1e-10;
constexpr double kAmbiguous = 1e-4;

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Merge points of different groups closer than tol. Returns the union-find
// and, per point, the distance to the nearest point of another group
// (infinity if none within `window`).
UnionFind match_points(const std::vector<Vec>& pts, const std::vector<int>& group, double tol,
                       double window, std::vector<double>& nearest) {
  const int n = static_cast<int>(pts.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return pts[a][0] < pts[b][0] || (pts[a][0] == pts[b][0] && a < b);
  });
  UnionFind uf(n);
  nearest.assign(n, std::numeric_limits<double>::infinity());
  for (int ii = 0; ii < n; ++ii) {
    const int i = order[ii];
    for (int jj = ii + 1; jj < n; ++jj) {
      const int j = order[jj];
      if (pts[j][0] - pts[i][0] > window) break;
      if (group[i] == group[j]) continue;
      const double dist = (pts[i] - pts[j]).norm();
      nearest[i] = std::min(nearest[i], dist);
      nearest[j] = std::min(nearest[j], dist);
      if (dist <= tol) uf.unite(i, j);
    }
  }
  return uf;
}

double bbox_diameter(const std::vector<Vec>& pts) {
  if (pts.empty()) return 0.0;
  Vec lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

}  // namespace

std::vector<int> patch_face_functions(const SplinePatch& patch, int side) {
  const int dir = side / 2;
  const int fixed = (side % 2 == 0) ? 0 : patch.num_basis(dir) - 1;
  std::vector<int> out;
  for (int i = 0; i < patch.num_basis(); ++i) {
    if (patch.multi_index(i)[dir] == fixed) out.push_back(i);
  }
  return out;
}

ReferenceUnitCell glue_reference_cell(std::vector<SplinePatch> patches) {
  if (patches.empty()) throw GeometryError("reference cell has no patches");
  ReferenceUnitCell cell;
  cell.dim = patches[0].dim();
  for (const auto& p : patches) {
    if (p.dim() != cell.dim || p.space_dim() != cell.dim) {
      throw GeometryError("patches must share their dimension");
    }
    for (int j = 0; j < cell.dim; ++j) {
      if (p.degree(j) != patches[0].degree(0)) throw GeometryError("patches must share one degree");
    }
    for (const auto& x : p.points()) {
      if (x.minCoeff() < -1e-12 || x.maxCoeff() > 1.0 + 1e-12) {
        throw GeometryError("reference cell control points leave [0,1]^d");
      }
    }
  }
  std::vector<Vec> all;
  for (const auto& p : patches) all.insert(all.end(), p.points().begin(), p.points().end());
  cell.diameter = bbox_diameter(all);
  const double tol = kCoincide * cell.diameter;

  // Boundary functions of every patch take part in the gluing.
  std::vector<Vec> pts;
  std::vector<int> group;
  std::vector<std::vector<int>> slot(patches.size());
  for (std::size_t k = 0; k < patches.size(); ++k) {
    std::set<int> bnd;
    for (int side = 0; side < 2 * cell.dim; ++side) {
      for (int i : patch_face_functions(patches[k], side)) bnd.insert(i);
    }
    slot[k].assign(patches[k].num_basis(), -1);
    for (int i : bnd) {
      slot[k][i] = static_cast<int>(pts.size());
      pts.push_back(patches[k].points()[i]);
      group.push_back(static_cast<int>(k));
    }
  }
  std::vector<double> nearest;
  UnionFind uf = match_points(pts, group, tol, kAmbiguous * cell.diameter, nearest);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (nearest[i] > tol && nearest[i] < kAmbiguous * cell.diameter) {
      throw GeometryError("ambiguous patch interface: control points nearly but not exactly coincide");
    }
  }

  std::vector<int> id(pts.size(), -1);
  cell.glue_map.resize(patches.size());
  for (std::size_t k = 0; k < patches.size(); ++k) {
    cell.glue_map[k].resize(patches[k].num_basis());
    for (int i = 0; i < patches[k].num_basis(); ++i) {
      int f;
      if (slot[k][i] >= 0) {
        int& r = id[uf.find(slot[k][i])];
        if (r < 0) {
          r = cell.n_ref++;
          cell.anchors.push_back(patches[k].points()[i]);
        }
        f = r;
      } else {
        f = cell.n_ref++;
        cell.anchors.push_back(patches[k].points()[i]);
      }
      cell.glue_map[k][i] = f;
    }
  }

  cell.side_functions.resize(2 * cell.dim);
  cell.side_faces.resize(2 * cell.dim);
  for (std::size_t k = 0; k < patches.size(); ++k) {
    for (int pside = 0; pside < 2 * cell.dim; ++pside) {
      const auto fns = patch_face_functions(patches[k], pside);
      for (int side = 0; side < 2 * cell.dim; ++side) {
        const int dir = side / 2;
        const double val = side % 2;
        bool on = true;
        for (int i : fns) on = on && std::abs(patches[k].points()[i][dir] - val) <= tol;
        if (!on) continue;
        cell.side_faces[side].push_back({static_cast<int>(k), pside});
        for (int i : fns) cell.side_functions[side].push_back(cell.glue_map[k][i]);
      }
    }
  }
  for (auto& s : cell.side_functions) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  cell.patches = std::move(patches);
  return cell;
}

const std::vector<std::string>& face_names() {
  static const std::vector<std::string> names = {"left", "right", "bottom", "top", "back", "front"};
  return names;
}

bool LatticeModel::has_interfaces() const {
  for (const auto& n : neighbor)
    for (const auto& c : n)
      if (c.cell >= 0) return true;
  return false;
}

std::string LatticeModel::side_tag(int s, int side) const {
  return neighbor[s][side].cell >= 0 ? std::string() : face_names()[side];
}

VectorXd LatticeModel::gather(int s, const VectorXd& u) const {
  VectorXd out(cell_dofs());
  for (int l = 0; l < cell_dofs(); ++l) out[l] = u[global_dof(s, l)];
  return out;
}

void LatticeModel::scatter_add(int s, const VectorXd& local, VectorXd& global) const {
  for (int l = 0; l < cell_dofs(); ++l) global[global_dof(s, l)] += local[l];
}

std::vector<char> LatticeModel::cell_dirichlet(int s) const {
  std::vector<char> m(cell_dofs());
  for (int l = 0; l < cell_dofs(); ++l) m[l] = dirichlet[global_dof(s, l)];
  return m;
}

LatticeModel build_lattice(ReferenceUnitCell ref, MacroModel macro, const BoundarySpec& bc) {
  if (macro.elements.empty()) throw GeometryError("macro model has no elements");
  if (macro.dim() != ref.dim) throw GeometryError("macro and cell dimensions differ");
  LatticeModel m;
  m.dim = ref.dim;
  const int d = m.dim;
  const int ns = static_cast<int>(macro.elements.size());
  const int nsides = ref.num_sides();

  std::vector<char> boundary(ref.n_ref, 0);
  std::vector<std::vector<int>> sides_of(ref.n_ref);
  for (int side = 0; side < nsides; ++side) {
    for (int f : ref.side_functions[side]) {
      boundary[f] = 1;
      sides_of[f].push_back(side);
    }
  }

  std::vector<Vec> pts;
  std::vector<int> group;
  std::vector<std::vector<int>> slot(ns, std::vector<int>(ref.n_ref, -1));
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < ref.n_ref; ++a) {
      if (!boundary[a]) continue;
      slot[s][a] = static_cast<int>(pts.size());
      pts.push_back(eval_macro(macro.elements[s], ref.anchors[a]).x);
      group.push_back(s);
    }
  }
  const double diam = bbox_diameter(pts);
  std::vector<double> nearest;
  UnionFind uf = match_points(pts, group, kCoincide * diam, kAmbiguous * diam, nearest);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (nearest[i] > kCoincide * diam && nearest[i] < kAmbiguous * diam) {
      throw GeometryError("non-conforming macro tiling: cell boundaries nearly but not exactly meet");
    }
  }

  std::vector<int> id(pts.size(), -1);
  m.cell_functions.assign(ns, std::vector<int>(ref.n_ref));
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < ref.n_ref; ++a) {
      if (slot[s][a] >= 0) {
        int& r = id[uf.find(slot[s][a])];
        if (r < 0) r = m.num_functions++;
        m.cell_functions[s][a] = r;
      } else {
        m.cell_functions[s][a] = m.num_functions++;
      }
    }
  }
  m.multiplicity.assign(m.num_functions, 0);
  std::vector<std::vector<std::pair<int, int>>> owners(m.num_functions);
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < ref.n_ref; ++a) {
      ++m.multiplicity[m.cell_functions[s][a]];
      owners[m.cell_functions[s][a]].push_back({s, a});
    }
  }

  // Neighbours: a side is either fully shared with one side of one other
  // cell, or shares at most functions that sit on several sides (corners).
  m.neighbor.assign(ns, std::vector<CellSide>(nsides));
  for (int s = 0; s < ns; ++s) {
    for (int side = 0; side < nsides; ++side) {
      const auto& fns = ref.side_functions[side];
      std::map<int, int> count;
      bool edge_shared = false;
      for (int a : fns) {
        for (auto [c, b] : owners[m.cell_functions[s][a]]) {
          if (c == s) continue;
          ++count[c];
          if (sides_of[a].size() == 1) edge_shared = true;
        }
      }
      for (auto [c, k] : count) {
        if (k != static_cast<int>(fns.size())) continue;
        std::set<int> local;
        for (int a : fns) {
          for (auto [c2, b] : owners[m.cell_functions[s][a]]) {
            if (c2 == c) local.insert(b);
          }
        }
        for (int side2 = 0; side2 < nsides; ++side2) {
          const auto& f2 = ref.side_functions[side2];
          if (std::set<int>(f2.begin(), f2.end()) == local) m.neighbor[s][side] = {c, side2};
        }
      }
      if (m.neighbor[s][side].cell < 0 && edge_shared) {
        throw GeometryError("cell side only partially matches its neighbour");
      }
    }
  }

  m.dirichlet.assign(m.num_dofs(), 0);
  m.dirichlet_value.assign(m.num_dofs(), 0.0);
  const auto& names = face_names();
  for (const auto& fc : bc.faces) {
    const auto it = std::find(names.begin(), names.begin() + nsides, fc.face);
    if (it == names.begin() + nsides) throw ConfigError("unknown face '" + fc.face + "'");
    const int side = static_cast<int>(it - names.begin());
    bool found = false;
    for (int s = 0; s < ns; ++s) {
      if (m.neighbor[s][side].cell >= 0) continue;
      found = true;
      if (fc.kind == BcKind::Traction) {
        if (static_cast<int>(fc.values.size()) != d) {
          throw ConfigError("traction on '" + fc.face + "' needs " + std::to_string(d) + " values");
        }
        m.tractions.push_back({s, side, Eigen::Map<const Eigen::VectorXd>(fc.values.data(), d)});
        continue;
      }
      if (fc.kind == BcKind::Displacement && fc.values.size() != fc.components.size()) {
        throw ConfigError("displacement on '" + fc.face + "' needs one value per component");
      }
      for (std::size_t k = 0; k < fc.components.size(); ++k) {
        const int comp = fc.components[k];
        if (comp < 0 || comp >= d) throw ConfigError("component out of range on '" + fc.face + "'");
        const double val = fc.kind == BcKind::Displacement ? fc.values[k] : 0.0;
        for (int a : ref.side_functions[side]) {
          const int dof = d * m.cell_functions[s][a] + comp;
          if (m.dirichlet[dof] && m.dirichlet_value[dof] != val) {
            throw ConfigError("conflicting Dirichlet values at a shared boundary DOF");
          }
          m.dirichlet[dof] = 1;
          m.dirichlet_value[dof] = val;
        }
      }
    }
    if (!found) throw ConfigError("face '" + fc.face + "' is not on the lattice boundary");
  }
  m.body_force = Vec::Zero(d);
  if (!bc.body_force.empty()) {
    if (static_cast<int>(bc.body_force.size()) != d) throw ConfigError("body force needs d values");
    for (int i = 0; i < d; ++i) m.body_force[i] = bc.body_force[i];
  }
  m.ref = std::move(ref);
  m.macro = std::move(macro);
  return m;
}

namespace {

std::vector<int> corner_functions(const ReferenceUnitCell& ref) {
  std::vector<int> out;
  for (int c = 0; c < (1 << ref.dim); ++c) {
    Vec x(ref.dim);
    for (int j = 0; j < ref.dim; ++j) x[j] = (c >> j) & 1;
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int a = 0; a < ref.n_ref; ++a) {
      const double dist = (ref.anchors[a] - x).norm();
      if (dist < bd) {
        bd = dist;
        best = a;
      }
    }
    out.push_back(best);
  }
  return out;
}

// Corners plus `level` farthest-point insertions per side. Returns false if
// some side ran out of candidates.
bool select_primal(const ReferenceUnitCell& ref, int level, std::vector<int>& primal) {
  const auto corners = corner_functions(ref);
  std::set<int> chosen(corners.begin(), corners.end());
  bool ok = true;
  for (int side = 0; side < ref.num_sides(); ++side) {
    const auto& fns = ref.side_functions[side];
    std::vector<int> sel;
    for (int c : corners) {
      if (std::abs(ref.anchors[c][side / 2] - side % 2) < 1e-9) sel.push_back(c);
    }
    for (int l = 0; l < level; ++l) {
      int best = -1;
      double bd = -1.0;
      for (int a : fns) {
        if (std::find(sel.begin(), sel.end(), a) != sel.end()) continue;
        double dmin = std::numeric_limits<double>::infinity();
        for (int b : sel) dmin = std::min(dmin, (ref.anchors[a] - ref.anchors[b]).norm());
        if (dmin > bd + 1e-12) {
          bd = dmin;
          best = a;
        }
      }
      if (best < 0) {
        ok = false;
        break;
      }
      sel.push_back(best);
    }
    chosen.insert(sel.begin(), sel.end());
  }
  primal.assign(chosen.begin(), chosen.end());
  return ok;
}

}  // namespace

DofPartition partition_dofs(const LatticeModel& model, int level) {
  if (level < 0) throw DomainError("primal level must be >= 0");
  const auto& ref = model.ref;
  const int d = model.dim;
  DofPartition part;
  part.level = level;
  part.dim = d;
  if (!select_primal(ref, level, part.primal_fn)) {
    throw EnrichmentExhausted("no free DOF left on a cell side for primal enrichment");
  }
  part.role.assign(ref.n_ref, 0);
  for (int a : part.primal_fn) part.role[a] = 2;
  if (model.has_interfaces()) {
    for (const auto& fns : ref.side_functions)
      for (int a : fns)
        if (part.role[a] == 0) part.role[a] = 1;
  }
  for (int a = 0; a < ref.n_ref; ++a) {
    if (part.role[a] == 1) part.dual_fn.push_back(a);
    if (part.role[a] == 0) part.interior_fn.push_back(a);
    if (part.role[a] != 2) part.remaining_fn.push_back(a);
  }
  part.rpos.assign(d * ref.n_ref, -1);
  part.ppos.assign(d * ref.n_ref, -1);
  for (int a : part.remaining_fn) {
    for (int i = 0; i < d; ++i) {
      part.rpos[d * a + i] = static_cast<int>(part.remaining_dofs.size());
      part.remaining_dofs.push_back(d * a + i);
    }
  }
  for (int a : part.primal_fn) {
    for (int i = 0; i < d; ++i) {
      part.ppos[d * a + i] = static_cast<int>(part.primal_dofs.size());
      part.primal_dofs.push_back(d * a + i);
    }
  }

  const int ns = model.num_cells();
  std::unordered_map<int, int> primal_index;
  part.cell_primal.assign(ns, {});
  for (int s = 0; s < ns; ++s) {
    for (int a : part.primal_fn) {
      const int g = model.cell_functions[s][a];
      auto [it, fresh] = primal_index.try_emplace(g, static_cast<int>(primal_index.size()));
      for (int i = 0; i < d; ++i) part.cell_primal[s].push_back(d * it->second + i);
    }
    for (int a : part.remaining_fn) {
      if (model.multiplicity[model.cell_functions[s][a]] > 2) {
        throw GeometryError("a non-primal DOF is shared by more than two cells");
      }
    }
  }
  part.num_primal = d * static_cast<int>(primal_index.size());

  part.jumps.assign(ns, {});
  part.attached.assign(ns, {});
  for (int s = 0; s < ns; ++s) {
    for (int side = 0; side < ref.num_sides(); ++side) {
      const auto nb = model.neighbor[s][side];
      if (nb.cell < 0 || nb.cell < s) continue;
      std::unordered_map<int, int> local_b;
      for (int b : ref.side_functions[nb.side]) local_b[model.cell_functions[nb.cell][b]] = b;
      InterfaceEdge edge{s, side, nb.cell, nb.side, {}};
      const int e = static_cast<int>(part.edges.size());
      for (int a : ref.side_functions[side]) {
        const int b = local_b.at(model.cell_functions[s][a]);
        if ((part.role[a] == 2) != (part.role[b] == 2)) {
          throw GeometryError("cell sides carry incompatible primal sets");
        }
        if (part.role[a] == 2) continue;
        for (int i = 0; i < d; ++i) {
          const int row = part.num_multipliers++;
          edge.rows.push_back(row);
          part.jumps[s].push_back({row, part.rpos[d * a + i], 1.0});
          part.jumps[nb.cell].push_back({row, part.rpos[d * b + i], -1.0});
        }
      }
      part.edges.push_back(std::move(edge));
      part.attached[s].push_back({e, side, 1.0});
      part.attached[nb.cell].push_back({e, nb.side, -1.0});
    }
  }

  part.side_rdofs.assign(ref.num_sides(), std::vector<std::vector<int>>(d));
  for (int side = 0; side < ref.num_sides(); ++side) {
    for (int a : ref.side_functions[side]) {
      if (part.role[a] != 1) continue;
      for (int i = 0; i < d; ++i) part.side_rdofs[side][i].push_back(part.rpos[d * a + i]);
    }
  }
  return part;
}

DofPartition enrich_primal(const LatticeModel& model, const DofPartition& partition) {
  return partition_dofs(model, partition.level + 1);
}

SparseMatrix DofPartition::jump_matrix(int num_cells) const {
  std::vector<Eigen::Triplet<double>> t;
  for (int s = 0; s < num_cells; ++s)
    for (const auto& j : jumps[s]) t.emplace_back(j.row, s * n_remaining() + j.rpos, j.sign);
  SparseMatrix B(num_multipliers, num_cells * n_remaining());
  B.setFromTriplets(t.begin(), t.end());
  return B;
}

SparseMatrix DofPartition::edge_matrix() const {
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    for (std::size_t k = 0; k < edges[e].rows.size(); ++k) {
      t.emplace_back(edges[e].rows[k], static_cast<int>(e) * dim + static_cast<int>(k) % dim, 1.0);
    }
  }
  SparseMatrix Q(num_multipliers, num_edge_constraints());
  Q.setFromTriplets(t.begin(), t.end());
  return Q;
}

}  // namespace latro
