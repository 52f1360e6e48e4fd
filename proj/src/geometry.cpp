#include "latro/geometry.hpp"

#include "latro/serialize.hpp"
#include "refine.hpp"

#include <cmath>
#include <fstream>

namespace latro {

namespace {

Vec v2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

double cross(const Vec& a, const Vec& b) { return a[0] * b[1] - a[1] * b[0]; }

// Bilinear patch from a counter-clockwise quad.
SplinePatch bilinear(std::vector<Vec> q) {
  if (cross(q[1] - q[0], q[3] - q[0]) < 0) std::swap(q[1], q[3]);
  const auto kv = KnotVector::bezier(1);
  return SplinePatch({kv, kv}, {q[0], q[1], q[3], q[2]});
}

}  // namespace

std::vector<SplinePatch> uc1_cross(int p, int n_e, double frame, double strut) {
  if (p < 1 || n_e < 1) throw DomainError("uc1_cross needs p >= 1 and n_e >= 1");
  // Work on [-1,1]^2; t is the frame thickness, s the strut offset along x.
  const double t = 2.0 * frame;
  const double s = 2.0 * strut / std::sqrt(2.0);
  if (!(t > 0 && s > 0 && s + t < 1.0)) throw DomainError("uc1_cross thicknesses out of range");
  const Vec O = v2(0, 0), S = v2(s, 0), Q = v2(1 - t, 1 - t - s), P = v2(1 - t, 1 - t);
  const Vec F = v2(1 - t, 0), M = v2(1, 0), A = v2(1, 1 - t - s), C = v2(1, 1);
  const std::vector<std::vector<Vec>> base = {{O, S, Q, P}, {F, M, A, Q}, {Q, A, C, P}};

  std::vector<SplinePatch> patches;
  for (int swap = 0; swap < 2; ++swap) {
    for (int sx : {1, -1}) {
      for (int sy : {1, -1}) {
        for (const auto& quad : base) {
          std::vector<Vec> q;
          for (const Vec& v : quad) {
            Vec w = swap ? v2(v[1], v[0]) : v;
            w[0] *= sx;
            w[1] *= sy;
            q.push_back(0.5 * (w + v2(1, 1)));
          }
          patches.push_back(detail::refine_bezier_patch(bilinear(q), p, n_e));
        }
      }
    }
  }
  return patches;
}

std::vector<SplinePatch> uc3_hole(int p, int n_e, double radius) {
  if (p < 2 || n_e < 1) throw DomainError("uc3_hole needs p >= 2 and n_e >= 1");
  if (!(radius > 0.0 && radius < 0.5)) throw DomainError("uc3_hole radius must lie in (0, 0.5)");
  const double w = std::sqrt(0.5);
  const double r = radius;
  const Vec c = v2(0.5, 0.5);
  // Bottom patch: direction 0 along the side, direction 1 towards the hole.
  const std::vector<Vec> bottom = {v2(0, 0),
                                   v2(0.5, 0),
                                   v2(1, 0),
                                   c + r * v2(-w, -w),
                                   c + v2(0, -r * std::sqrt(2.0)),
                                   c + r * v2(w, -w)};
  const std::vector<double> weights = {1, w, 1, 1, w, 1};
  std::vector<SplinePatch> patches;
  for (int k = 0; k < 4; ++k) {
    const double a = k * M_PI / 2;
    Mat R(2, 2);
    R << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    std::vector<Vec> pts;
    for (const Vec& x : bottom) {
      Vec y = c + R * (x - c);
      for (int i = 0; i < 2; ++i) {
        if (std::abs(y[i]) < 1e-15) y[i] = 0.0;
        if (std::abs(y[i] - 1.0) < 1e-15) y[i] = 1.0;
      }
      pts.push_back(y);
    }
    const SplinePatch patch({KnotVector::bezier(2), KnotVector::bezier(1)}, pts, weights);
    patches.push_back(detail::refine_bezier_patch(patch, p, n_e));
  }
  return patches;
}

MacroModel macro_grid(int nx, int ny, int q, const std::vector<Vec>& net) {
  if (nx < 1 || ny < 1 || q < 1) throw GeometryError("macro grid needs nx, ny, q >= 1");
  const int mx = q * nx + 1, my = q * ny + 1;
  if (static_cast<int>(net.size()) != mx * my) throw GeometryError("macro net size mismatch");
  MacroModel m;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      std::vector<Vec> pts;
      for (int j = 0; j <= q; ++j)
        for (int i = 0; i <= q; ++i) pts.push_back(net[(q * ix + i) + mx * (q * iy + j)]);
      m.elements.emplace_back(std::vector<int>{q, q}, std::move(pts));
    }
  }
  return m;
}

MacroModel rectangle_macro(int nx, int ny, double width, double height) {
  std::vector<Vec> net;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) net.push_back(v2(width * i / nx, height * j / ny));
  return macro_grid(nx, ny, 1, net);
}

MacroModel curved_beam_macro(int nx, int ny, double width, double height, double bow) {
  std::vector<Vec> net;
  for (int j = 0; j <= 2 * ny; ++j) {
    for (int i = 0; i <= 2 * nx; ++i) {
      const double s = static_cast<double>(i) / (2 * nx);
      net.push_back(v2(width * s, height * j / (2 * ny) + bow * 4 * s * (1 - s)));
    }
  }
  return macro_grid(nx, ny, 2, net);
}

GeometryModel read_geometry_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open geometry file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("geometry file is not valid JSON: ") + e.what());
  }
  GeometryModel g;
  try {
    for (const auto& p : j.at("ref_cell").at("patches")) g.patches.push_back(patch_from_json(p));
    const auto& macro = j.at("macro");
    auto to_vec = [](const nlohmann::json& a) {
      const auto v = a.get<std::vector<double>>();
      return Vec(Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
    };
    if (macro.contains("elements")) {
      for (const auto& e : macro["elements"]) {
        std::vector<Vec> pts;
        for (const auto& p : e.at("points")) pts.push_back(to_vec(p));
        g.macro.elements.emplace_back(e.at("degree").get<std::vector<int>>(), std::move(pts));
      }
    } else {
      const auto grid = macro.at("grid").get<std::vector<int>>();
      if (grid.size() != 2) throw GeometryError("macro grid must be [nx, ny]");
      std::vector<Vec> net;
      for (const auto& p : macro.at("points")) net.push_back(to_vec(p));
      g.macro = macro_grid(grid[0], grid[1], macro.at("degree").get<int>(), net);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed geometry file: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid geometry file: ") + e.what());
  }
  if (g.patches.empty() || g.macro.elements.empty()) throw ConfigError("geometry file has no cells");
  return g;
}

void write_geometry_file(const std::string& path, const GeometryModel& geometry) {
  nlohmann::json j;
  for (const auto& p : geometry.patches) j["ref_cell"]["patches"].push_back(patch_to_json(p));
  for (const auto& e : geometry.macro.elements) {
    nlohmann::json el;
    for (int d = 0; d < e.dim(); ++d) el["degree"].push_back(e.degree(d));
    for (const auto& p : e.points()) el["points"].push_back(std::vector<double>(p.data(), p.data() + p.size()));
    j["macro"]["elements"].push_back(el);
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write geometry file " + path);
  out << j.dump(1) << "\n";
}

}  // namespace latro
