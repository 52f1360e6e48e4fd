#pragma once

// Built-in unit cells and macro-element models.

#include "latro/splines.hpp"

#include <string>
#include <vector>

namespace latro {

/// Cross-braced square cell: a square frame with two diagonal struts, split
/// into 24 bilinear patches and refined to degree p with n_e elements per
/// direction per patch. Thicknesses are in unit-cell lengths.
std::vector<SplinePatch> uc1_cross(int p, int n_e, double frame = 0.05, double strut = 0.08);

/// Square cell with a central circular hole, 4 rational patches (p >= 2).
std::vector<SplinePatch> uc3_hole(int p, int n_e, double radius = 0.35);

struct MacroModel {
  std::vector<BezierMacroElement> elements;
  int dim() const { return elements.empty() ? 0 : elements.front().dim(); }
};

/// Bezier-extracted macro grid from a C0 control net of (q nx + 1) x (q ny + 1)
/// points (first index fastest). Element (ix, iy) uses the (q+1)^2 block
/// starting at (q ix, q iy).
MacroModel macro_grid(int nx, int ny, int q, const std::vector<Vec>& net);

MacroModel rectangle_macro(int nx, int ny, double width, double height);

/// Quadratic arch: the rectangle with its centre line lifted by `bow`.
MacroModel curved_beam_macro(int nx, int ny, double width, double height, double bow);

struct GeometryModel {
  std::vector<SplinePatch> patches;
  MacroModel macro;
};

GeometryModel read_geometry_file(const std::string& path);
void write_geometry_file(const std::string& path, const GeometryModel& geometry);

}  // namespace latro
