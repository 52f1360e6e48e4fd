#pragma once

// Offline refinement used by the built-in cell generators. Not public API.

#include "latro/splines.hpp"

namespace latro::detail {

/// Elevate every direction of a single-element (Bezier) patch to `degree`,
/// then insert the interior knots i/elements. The mapping is unchanged.
SplinePatch refine_bezier_patch(const SplinePatch& patch, int degree, int elements);

/// Boehm insertion of one knot in direction `dir`.
SplinePatch insert_knot(const SplinePatch& patch, int dir, double knot);

/// Degree elevation by one of a patch that is a single element in `dir`.
SplinePatch elevate_bezier(const SplinePatch& patch, int dir);

}  // namespace latro::detail
