#pragma once

// Reference cell gluing, lattice tiling, global numbering and the
// primal/dual/interior partition used by the domain-decomposition solver.

#include "latro/geometry.hpp"
#include "latro/splines.hpp"

#include <Eigen/Sparse>

#include <string>
#include <vector>

namespace latro {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Face of a patch: side = 2 * dir + (0 for theta_dir = 0, 1 for theta_dir = 1).
struct PatchFace {
  int patch = 0;
  int side = 0;
};

struct ReferenceUnitCell {
  int dim = 0;
  std::vector<SplinePatch> patches;
  /// glue_map[k][i]: cell function of basis function i of patch k.
  std::vector<std::vector<int>> glue_map;
  int n_ref = 0;
  /// Control point of every cell function, in [0,1]^d.
  std::vector<Vec> anchors;
  double diameter = 0.0;
  /// Cell sides 0: x=0, 1: x=1, 2: y=0, 3: y=1 (4, 5 for z). Functions on
  /// each side sorted by local index, and the patch faces that lie on it.
  std::vector<std::vector<int>> side_functions;
  std::vector<std::vector<PatchFace>> side_faces;

  int num_sides() const { return 2 * dim; }
};

/// Identify coincident boundary control points of the patches.
/// Throws GeometryError on near-miss interfaces.
ReferenceUnitCell glue_reference_cell(std::vector<SplinePatch> patches);

/// Basis functions of `patch` lying on face `side`.
std::vector<int> patch_face_functions(const SplinePatch& patch, int side);

enum class BcKind { Fixed, Displacement, Traction };

struct FaceCondition {
  std::string face;  // left, right, bottom, top (back, front in 3D)
  BcKind kind = BcKind::Fixed;
  std::vector<int> components;  // Fixed / Displacement
  std::vector<double> values;   // Displacement: per component; Traction: vector of length d
};

struct BoundarySpec {
  std::vector<FaceCondition> faces;
  std::vector<double> body_force;  // empty or length d
};

const std::vector<std::string>& face_names();

struct Traction {
  int cell = 0;
  int side = 0;
  Vec g;
};

struct CellSide {
  int cell = -1;
  int side = -1;
};

struct LatticeModel {
  int dim = 0;
  ReferenceUnitCell ref;
  MacroModel macro;
  int num_functions = 0;
  /// Assembly map on scalar functions: cell_functions[s][a] is the global
  /// function of cell function a. DOF of component i is dim * f + i.
  std::vector<std::vector<int>> cell_functions;
  std::vector<int> multiplicity;
  /// neighbor[s][side], cell = -1 on the lattice boundary.
  std::vector<std::vector<CellSide>> neighbor;
  std::vector<char> dirichlet;
  /// Imposed value at full load (0 for fixed DOFs).
  std::vector<double> dirichlet_value;
  std::vector<Traction> tractions;
  Vec body_force;

  int num_cells() const { return static_cast<int>(cell_functions.size()); }
  int num_dofs() const { return dim * num_functions; }
  int cell_dofs() const { return dim * ref.n_ref; }
  int global_dof(int s, int local_dof) const {
    return dim * cell_functions[s][local_dof / dim] + local_dof % dim;
  }
  bool has_interfaces() const;
  /// Face tag of an unmatched cell side, empty for interfaces.
  std::string side_tag(int s, int side) const;

  VectorXd gather(int s, const VectorXd& u) const;
  void scatter_add(int s, const VectorXd& local, VectorXd& global) const;
  std::vector<char> cell_dirichlet(int s) const;
};

/// Glue cells through coincident physical anchors of their boundary
/// functions and apply the boundary spec. Non-conforming tilings throw
/// GeometryError, unknown faces ConfigError.
LatticeModel build_lattice(ReferenceUnitCell ref, MacroModel macro, const BoundarySpec& bc);

struct InterfaceEdge {
  int cell_a = 0, side_a = 0;  // cell_a < cell_b
  int cell_b = 0, side_b = 0;
  std::vector<int> rows;       // multiplier rows, all components
};

/// Per-cell entry of the jump operator: row, position in the cell's
/// remaining vector, sign.
struct JumpEntry {
  int row;
  int rpos;
  double sign;
};

struct EdgeAttachment {
  int edge;
  int side;
  double sign;
};

struct DofPartition {
  int level = 0;
  int dim = 0;
  /// Template sets of cell functions, shared by all cells.
  std::vector<int> primal_fn, dual_fn, interior_fn, remaining_fn;
  /// 0 interior, 1 dual, 2 primal, per cell function.
  std::vector<int> role;
  /// Local DOF lists; remaining ordered function-major.
  std::vector<int> remaining_dofs, primal_dofs;
  std::vector<int> rpos, ppos;  // local DOF -> position or -1

  int num_primal = 0;  // global primal DOFs
  std::vector<std::vector<int>> cell_primal;  // per cell: local primal position -> global

  int num_multipliers = 0;
  std::vector<InterfaceEdge> edges;
  std::vector<std::vector<JumpEntry>> jumps;           // per cell
  std::vector<std::vector<EdgeAttachment>> attached;   // per cell
  /// side_rdofs[side][comp]: remaining positions of dual DOFs on a side.
  std::vector<std::vector<std::vector<int>>> side_rdofs;

  int n_remaining() const { return static_cast<int>(remaining_dofs.size()); }
  int n_primal_local() const { return static_cast<int>(primal_dofs.size()); }
  int num_edge_constraints() const { return static_cast<int>(edges.size()) * dim; }

  /// B: L x (N_s * n_remaining), cells stacked.
  SparseMatrix jump_matrix(int num_cells) const;
  /// Q: L x (num edges * d).
  SparseMatrix edge_matrix() const;
};

DofPartition partition_dofs(const LatticeModel& model, int level);

/// Same partition with one more primal DOF per cell side.
/// Throws EnrichmentExhausted when no side has a free DOF left.
DofPartition enrich_primal(const LatticeModel& model, const DofPartition& partition);

}  // namespace latro
