#include "latro/serialize.hpp"

namespace latro {

nlohmann::json patch_to_json(const SplinePatch& patch) {
  nlohmann::json j;
  for (const auto& kv : patch.knot_vectors()) {
    j["degree"].push_back(kv.degree());
    j["knots"].push_back(kv.knots());
  }
  j["points"] = nlohmann::json::array();
  for (const auto& p : patch.points()) {
    j["points"].push_back(std::vector<double>(p.data(), p.data() + p.size()));
  }
  j["weights"] = patch.weights();
  return j;
}

SplinePatch patch_from_json(const nlohmann::json& j) {
  try {
    const auto degrees = j.at("degree").get<std::vector<int>>();
    const auto knots = j.at("knots").get<std::vector<std::vector<double>>>();
    if (degrees.size() != knots.size()) throw GeometryError("degree/knots length mismatch");
    std::vector<KnotVector> kv;
    for (std::size_t i = 0; i < degrees.size(); ++i) kv.emplace_back(degrees[i], knots[i]);
    std::vector<Vec> pts;
    for (const auto& p : j.at("points")) {
      const auto v = p.get<std::vector<double>>();
      pts.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
    }
    std::vector<double> w;
    if (j.contains("weights")) w = j["weights"].get<std::vector<double>>();
    return SplinePatch(std::move(kv), std::move(pts), std::move(w));
  } catch (const nlohmann::json::exception& e) {
    throw GeometryError(std::string("malformed patch: ") + e.what());
  }
}

}  // namespace latro
