#pragma once

#include "json.hpp"
#include "latro/splines.hpp"

namespace latro {

/// {degree:[...], knots:[[...]], points:[[...]], weights:[...]}
nlohmann::json patch_to_json(const SplinePatch& patch);
SplinePatch patch_from_json(const nlohmann::json& j);

}  // namespace latro
