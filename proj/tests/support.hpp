#pragma once

#include "latro/assembly.hpp"
#include "latro/lattice.hpp"

#include <random>

namespace latro::testing {

inline Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

inline SplinePatch square_patch(int p, int ne) {
  const auto kv = KnotVector::open_uniform(p, ne);
  std::vector<Vec> pts;
  for (int j = 0; j < kv.num_basis(); ++j)
    for (int i = 0; i < kv.num_basis(); ++i) pts.push_back(vec2(kv.greville(i), kv.greville(j)));
  return SplinePatch({kv, kv}, pts);
}

inline LatticeModel uc1_model(int nx, int ny, int p, int ne, const BoundarySpec& bc = {}) {
  return build_lattice(glue_reference_cell(uc1_cross(p, ne)),
                       rectangle_macro(nx, ny, nx, ny), bc);
}

inline VectorXd random_vector(int n, double amp, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline const MaterialParams& material() {
  static const MaterialParams m = MaterialParams::from_young(500.0, 0.40);
  return m;
}

}  // namespace latro::testing
