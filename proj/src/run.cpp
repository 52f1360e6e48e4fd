#include "latro/run.hpp"

#include "latro/geometry.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

namespace latro {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_fail(int line, const std::string& msg) {
  throw ConfigError(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_name(const std::string& s, bool dotted) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || (dotted && c == '.'))) return false;
  }
  return s.front() != '.' && s.back() != '.' && s.find("..") == std::string::npos;
}

class ValueParser {
 public:
  ValueParser(const std::string& s, int line) : s_(s), line_(line) {}

  ConfigValue parse_all() {
    ConfigValue v = value();
    skip_ws();
    if (i_ != s_.size()) config_fail(line_, "unexpected text after value");
    return v;
  }

 private:
  void skip_ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }

  ConfigValue value() {
    skip_ws();
    if (i_ >= s_.size()) config_fail(line_, "missing value");
    ConfigValue v;
    v.line = line_;
    const char c = s_[i_];
    if (c == '"') {
      v.kind = ConfigValue::String;
      ++i_;
      while (true) {
        if (i_ >= s_.size()) config_fail(line_, "unterminated string");
        const char d = s_[i_++];
        if (d == '"') break;
        if (d == '\\') {
          if (i_ >= s_.size()) config_fail(line_, "unterminated string");
          const char e = s_[i_++];
          if (e == '"' || e == '\\') v.text += e;
          else if (e == 'n') v.text += '\n';
          else if (e == 't') v.text += '\t';
          else config_fail(line_, "unsupported escape in string");
        } else {
          v.text += d;
        }
      }
      return v;
    }
    if (c == '[') {
      v.kind = ConfigValue::Array;
      ++i_;
      while (true) {
        skip_ws();
        if (i_ < s_.size() && s_[i_] == ']') {
          ++i_;
          return v;
        }
        ConfigValue item = value();
        if (item.kind == ConfigValue::Array) config_fail(line_, "nested arrays are not supported");
        v.items.push_back(std::move(item));
        skip_ws();
        if (i_ < s_.size() && s_[i_] == ',') {
          ++i_;
        } else if (i_ < s_.size() && s_[i_] == ']') {
          ++i_;
          return v;
        } else {
          config_fail(line_, "expected ',' or ']' in array");
        }
      }
    }
    std::size_t j = i_;
    while (j < s_.size() && s_[j] != ',' && s_[j] != ']' && s_[j] != ' ' && s_[j] != '\t') ++j;
    const std::string tok = s_.substr(i_, j - i_);
    i_ = j;
    if (tok == "true" || tok == "false") {
      v.kind = ConfigValue::Bool;
      v.flag = tok == "true";
      return v;
    }
    char* end = nullptr;
    const double x = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size() || !std::isfinite(x)) {
      config_fail(line_, "cannot parse value '" + tok + "'");
    }
    v.kind = ConfigValue::Number;
    v.number = x;
    return v;
  }

  const std::string& s_;
  std::size_t i_ = 0;
  int line_;
};

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string && c == '\\') {
      ++i;
    } else if (c == '"') {
      in_string = !in_string;
    } else if (c == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

double number(const ConfigValue& v, const std::string& key) {
  if (v.kind != ConfigValue::Number) config_fail(v.line, key + " must be a number");
  return v.number;
}

int integer(const ConfigValue& v, const std::string& key) {
  const double x = number(v, key);
  if (x != std::floor(x) || std::abs(x) > 1e9) config_fail(v.line, key + " must be an integer");
  return static_cast<int>(x);
}

std::string text(const ConfigValue& v, const std::string& key) {
  if (v.kind != ConfigValue::String) config_fail(v.line, key + " must be a string");
  return v.text;
}

bool flag(const ConfigValue& v, const std::string& key) {
  if (v.kind != ConfigValue::Bool) config_fail(v.line, key + " must be true or false");
  return v.flag;
}

std::vector<double> numbers(const ConfigValue& v, const std::string& key) {
  if (v.kind != ConfigValue::Array) config_fail(v.line, key + " must be an array");
  std::vector<double> out;
  for (const auto& item : v.items) out.push_back(number(item, key));
  return out;
}

std::vector<int> integers(const ConfigValue& v, const std::string& key) {
  if (v.kind != ConfigValue::Array) config_fail(v.line, key + " must be an array");
  std::vector<int> out;
  for (const auto& item : v.items) out.push_back(integer(item, key));
  return out;
}

const char* kind_name(BcKind k) {
  switch (k) {
    case BcKind::Fixed: return "fixed";
    case BcKind::Displacement: return "displacement";
    case BcKind::Traction: return "traction";
  }
  return "";
}

std::string fmt(double x, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

const char* component_name(int c) { return c == 0 ? "x" : c == 1 ? "y" : "z"; }

}  // namespace

ConfigTable parse_config_text(const std::string& src) {
  ConfigTable table;
  std::istringstream in(src);
  std::string raw, section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') config_fail(line, "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (!is_name(section, true)) config_fail(line, "invalid section name '" + section + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) config_fail(line, "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (!is_name(key, false)) config_fail(line, "invalid key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) config_fail(line, "duplicate key '" + full + "'");
    table[full] = ValueParser(trim(s.substr(eq + 1)), line).parse_all();
  }
  return table;
}

int RunConfig::elements_per_patch() const { return static_cast<int>(std::lround(1.0 / h)); }

LoadProgram RunConfig::program() const {
  if (factors.empty()) return LoadProgram::uniform(increments);
  return LoadProgram{factors};
}

MaterialParams RunConfig::material() const { return MaterialParams::from_young(E, nu); }

RunConfig config_from_table(const ConfigTable& table) {
  RunConfig c;
  struct FaceEntry {
    std::string kind;
    int kind_line = 0;
    std::vector<int> components;
    bool has_components = false;
    std::vector<double> values;
    bool has_values = false;
  };
  std::map<std::string, FaceEntry> faces;
  bool increments_set = false;

  using Setter = std::function<void(const ConfigValue&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"geometry.cell", [&](auto& v, auto& k) { c.cell = text(v, k); }},
      {"geometry.file", [&](auto& v, auto& k) { c.geometry_file = text(v, k); }},
      {"geometry.nx", [&](auto& v, auto& k) { c.nx = integer(v, k); }},
      {"geometry.ny", [&](auto& v, auto& k) { c.ny = integer(v, k); }},
      {"geometry.p", [&](auto& v, auto& k) { c.p = integer(v, k); }},
      {"geometry.h", [&](auto& v, auto& k) { c.h = number(v, k); }},
      {"geometry.width", [&](auto& v, auto& k) { c.width = number(v, k); }},
      {"geometry.height", [&](auto& v, auto& k) { c.height = number(v, k); }},
      {"geometry.macro", [&](auto& v, auto& k) { c.macro = text(v, k); }},
      {"geometry.bow", [&](auto& v, auto& k) { c.bow = number(v, k); }},
      {"geometry.frame", [&](auto& v, auto& k) { c.frame = number(v, k); }},
      {"geometry.strut", [&](auto& v, auto& k) { c.strut = number(v, k); }},
      {"geometry.radius", [&](auto& v, auto& k) { c.radius = number(v, k); }},
      {"material.E", [&](auto& v, auto& k) { c.E = number(v, k); }},
      {"material.nu", [&](auto& v, auto& k) { c.nu = number(v, k); }},
      {"load.body_force", [&](auto& v, auto& k) { c.bc.body_force = numbers(v, k); }},
      {"program.increments",
       [&](auto& v, auto& k) {
         c.increments = integer(v, k);
         increments_set = true;
       }},
      {"program.factors", [&](auto& v, auto& k) { c.factors = numbers(v, k); }},
      {"program.target", [&](auto& v, auto& k) { c.target = number(v, k); }},
      {"solver.path",
       [&](auto& v, auto& k) {
         const std::string s = text(v, k);
         if (s == "standard") c.path = SolverPath::Standard;
         else if (s == "rb") c.path = SolverPath::Rb;
         else config_fail(v.line, "solver.path must be \"standard\" or \"rb\"");
       }},
      {"solver.epsilon", [&](auto& v, auto& k) { c.rb.epsilon = number(v, k); }},
      {"solver.outer_tol", [&](auto& v, auto& k) { c.rb.solver.outer_tol = number(v, k); }},
      {"solver.inner_tol", [&](auto& v, auto& k) { c.rb.solver.inner_tol = number(v, k); }},
      {"solver.max_outer", [&](auto& v, auto& k) { c.rb.solver.max_outer = integer(v, k); }},
      {"solver.max_inner", [&](auto& v, auto& k) { c.rb.solver.max_inner = integer(v, k); }},
      {"solver.precondition", [&](auto& v, auto& k) { c.rb.solver.precondition = flag(v, k); }},
      {"solver.initial_level", [&](auto& v, auto& k) { c.rb.initial_level = integer(v, k); }},
      {"solver.reduced_points", [&](auto& v, auto& k) { c.rb.reduced_points = integer(v, k); }},
      {"solver.rel_tol", [&](auto& v, auto& k) { c.newton.rel_tol = number(v, k); }},
      {"solver.max_iter", [&](auto& v, auto& k) { c.newton.max_iter = integer(v, k); }},
      {"solver.max_backtracks", [&](auto& v, auto& k) { c.newton.max_backtracks = integer(v, k); }},
      {"solver.beta", [&](auto& v, auto& k) { c.newton.beta = number(v, k); }},
      {"solver.c", [&](auto& v, auto& k) { c.newton.c = number(v, k); }},
      {"output.dir", [&](auto& v, auto& k) { c.output_dir = text(v, k); }},
      {"output.vtk_samples", [&](auto& v, auto& k) { c.vtk_samples = integer(v, k); }},
  };

  const auto& names = face_names();
  for (const auto& [key, v] : table) {
    const auto it = setters.find(key);
    if (it != setters.end()) {
      it->second(v, key);
      continue;
    }
    // bc.<face>.<field>
    const auto a = key.find('.'), b = key.rfind('.');
    if (key.compare(0, a, "bc") == 0 && a != b) {
      const std::string face = key.substr(a + 1, b - a - 1), field = key.substr(b + 1);
      if (std::find(names.begin(), names.end(), face) == names.end()) config_fail(v.line, "unknown face '" + face + "'");
      auto& f = faces[face];
      if (field == "kind") {
        f.kind = text(v, key);
        f.kind_line = v.line;
        continue;
      }
      if (field == "components") {
        f.components = integers(v, key);
        f.has_components = true;
        continue;
      }
      if (field == "values") {
        f.values = numbers(v, key);
        f.has_values = true;
        continue;
      }
    }
    config_fail(v.line, "unknown key '" + key + "'");
  }

  if (c.cell != "uc1" && c.cell != "uc3" && c.cell != "file") config_fail(0, "geometry.cell must be uc1, uc3 or file");
  if (c.cell == "file" && c.geometry_file.empty()) config_fail(0, "geometry.file is required for cell = \"file\"");
  if (c.cell != "file") {
    if (c.nx < 1 || c.ny < 1) config_fail(0, "geometry.nx and geometry.ny must be >= 1");
    if (c.p < 1 || c.p > 3) config_fail(0, "geometry.p must be 1, 2 or 3");
    if (c.cell == "uc3" && c.p < 2) config_fail(0, "the uc3 cell needs p >= 2");
    if (!(c.h > 0.0 && c.h <= 1.0) || std::abs(1.0 / c.h - std::round(1.0 / c.h)) > 1e-9) {
      config_fail(0, "geometry.h must be 1/n for an integer n >= 1");
    }
    if (c.width < 0.0 || c.height < 0.0) config_fail(0, "geometry.width and geometry.height must be positive");
    if (c.macro != "rectangle" && c.macro != "curved") config_fail(0, "geometry.macro must be rectangle or curved");
    if (c.cell == "uc1" && !(c.frame > 0.0 && c.strut > 0.0 && c.frame < 0.25 && c.strut < 0.25)) {
      config_fail(0, "geometry.frame and geometry.strut must lie in (0, 0.25)");
    }
    if (c.cell == "uc3" && !(c.radius > 0.0 && c.radius < 0.5)) config_fail(0, "geometry.radius must lie in (0, 0.5)");
  }
  if (!(c.E > 0.0)) config_fail(0, "material.E must be positive");
  if (!(c.nu > -1.0 && c.nu < 0.5)) config_fail(0, "material.nu must lie in (-1, 0.5)");

  bool dirichlet = false;
  for (const auto& [face, f] : faces) {
    FaceCondition fc;
    fc.face = face;
    if (f.kind == "fixed") {
      fc.kind = BcKind::Fixed;
      if (f.has_values) config_fail(f.kind_line, "bc." + face + ": fixed faces take no values");
      fc.components = f.components;  // empty: all components
      dirichlet = true;
    } else if (f.kind == "displacement") {
      fc.kind = BcKind::Displacement;
      if (!f.has_components || !f.has_values || f.components.size() != f.values.size()) {
        config_fail(f.kind_line, "bc." + face + ": displacement needs matching components and values");
      }
      fc.components = f.components;
      fc.values = f.values;
      dirichlet = true;
    } else if (f.kind == "traction") {
      fc.kind = BcKind::Traction;
      if (f.has_components) config_fail(f.kind_line, "bc." + face + ": traction takes values only");
      if (!f.has_values) config_fail(f.kind_line, "bc." + face + ": traction needs values");
      fc.values = f.values;
    } else {
      config_fail(f.kind_line, "bc." + face + ".kind must be fixed, displacement or traction");
    }
    for (int comp : fc.components) {
      if (comp < 0 || comp > 2) config_fail(f.kind_line, "bc." + face + ": component out of range");
    }
    c.bc.faces.push_back(std::move(fc));
  }
  if (!dirichlet) config_fail(0, "at least one face needs a fixed or displacement condition");

  if (!c.factors.empty()) {
    if (increments_set && c.increments != static_cast<int>(c.factors.size())) {
      config_fail(0, "program.increments does not match the length of program.factors");
    }
    c.increments = static_cast<int>(c.factors.size());
  }
  if (c.increments < 1) config_fail(0, "program.increments must be >= 1");
  if (!std::isfinite(c.target) || c.target == 0.0) config_fail(0, "program.target must be finite and nonzero");
  try {
    c.program().validate();
    c.newton.validate();
  } catch (const DomainError& e) {
    config_fail(0, e.what());
  }
  if (!(c.rb.epsilon > 0.0)) config_fail(0, "solver.epsilon must be positive");
  if (!(c.rb.solver.outer_tol > 0.0 && c.rb.solver.inner_tol > 0.0)) config_fail(0, "solver tolerances must be positive");
  if (c.rb.solver.max_outer < 1 || c.rb.solver.max_inner < 1) config_fail(0, "solver iteration limits must be >= 1");
  if (c.rb.initial_level < 0) config_fail(0, "solver.initial_level must be >= 0");
  if (c.rb.reduced_points < 1) config_fail(0, "solver.reduced_points must be >= 1");
  if (c.vtk_samples < 2 || c.vtk_samples > 16) config_fail(0, "output.vtk_samples must lie in [2, 16]");
  if (c.output_dir.empty()) config_fail(0, "output.dir must not be empty");
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_table(parse_config_text(ss.str()));
}

LatticeModel build_model(const RunConfig& cfg) {
  std::vector<SplinePatch> patches;
  MacroModel macro;
  if (cfg.cell == "file") {
    GeometryModel g = read_geometry_file(cfg.geometry_file);
    patches = std::move(g.patches);
    macro = std::move(g.macro);
  } else {
    const int ne = cfg.elements_per_patch();
    patches = cfg.cell == "uc1" ? uc1_cross(cfg.p, ne, cfg.frame, cfg.strut) : uc3_hole(cfg.p, ne, cfg.radius);
    const double w = cfg.width > 0.0 ? cfg.width : cfg.nx, h = cfg.height > 0.0 ? cfg.height : cfg.ny;
    macro = cfg.macro == "curved" ? curved_beam_macro(cfg.nx, cfg.ny, w, h, cfg.bow)
                                  : rectangle_macro(cfg.nx, cfg.ny, w, h);
  }
  BoundarySpec bc = cfg.bc;
  const int d = macro.dim();
  for (auto& f : bc.faces) {
    if (f.kind == BcKind::Fixed && f.components.empty())
      for (int c = 0; c < d; ++c) f.components.push_back(c);
    for (double& v : f.values) v *= cfg.target;
  }
  for (double& v : bc.body_force) v *= cfg.target;
  return build_lattice(glue_reference_cell(std::move(patches)), std::move(macro), bc);
}

nlohmann::json problem_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["cell"] = cfg.cell;
  if (cfg.cell == "file") {
    j["geometry_file"] = cfg.geometry_file;
  } else {
    j["nx"] = cfg.nx;
    j["ny"] = cfg.ny;
    j["p"] = cfg.p;
    j["h"] = cfg.h;
    j["width"] = cfg.width > 0.0 ? cfg.width : cfg.nx;
    j["height"] = cfg.height > 0.0 ? cfg.height : cfg.ny;
    j["macro"] = cfg.macro;
    if (cfg.macro == "curved") j["bow"] = cfg.bow;
    if (cfg.cell == "uc1") {
      j["frame"] = cfg.frame;
      j["strut"] = cfg.strut;
    } else {
      j["radius"] = cfg.radius;
    }
  }
  j["E"] = cfg.E;
  j["nu"] = cfg.nu;
  j["bcs"] = nlohmann::json::array();
  for (const auto& f : cfg.bc.faces) {
    nlohmann::json b;
    b["face"] = f.face;
    b["kind"] = kind_name(f.kind);
    if (f.kind != BcKind::Traction) b["components"] = f.components;
    if (f.kind != BcKind::Fixed) b["values"] = f.values;
    j["bcs"].push_back(b);
  }
  if (!cfg.bc.body_force.empty()) j["body_force"] = cfg.bc.body_force;
  j["factors"] = cfg.program().factors;
  j["target"] = cfg.target;
  return j;
}

nlohmann::json trace_json(const NewtonTrace& trace) {
  nlohmann::json j;
  j["path"] = trace.path;
  j["probes"] = nlohmann::json::array();
  for (const auto& p : trace.probes) j["probes"].push_back({{"face", p.face}, {"component", p.component}});
  j["increments"] = nlohmann::json::array();
  for (const auto& inc : trace.increments) {
    nlohmann::json ji;
    ji["index"] = inc.index;
    ji["load"] = inc.load;
    ji["converged"] = inc.converged;
    ji["halved"] = inc.halved;
    ji["reference_residual"] = inc.reference_residual;
    ji["final_residual"] = inc.final_residual;
    ji["start_norm"] = inc.start_norm;
    ji["reaction"] = inc.reaction;
    ji["displacement"] = inc.displacement;
    ji["iterations"] = nlohmann::json::array();
    for (const auto& it : inc.iterations) {
      nlohmann::json r;
      r["iteration"] = it.iteration;
      r["residual"] = it.residual;
      r["step"] = it.step;
      r["backtracks"] = it.backtracks;
      r["num_principal"] = it.num_principal;
      r["principal"] = it.principal;
      r["certificate"] = it.certificate;
      r["level"] = it.level;
      r["enrichment_events"] = it.enrichment_events;
      const auto& st = it.stats;
      r["solver"] = {{"path", st.path},
                     {"outer_iterations", st.outer_iterations},
                     {"inner_iterations", st.inner_iterations},
                     {"factorizations", st.factorizations},
                     {"achieved_residual", st.achieved_residual},
                     {"jump_inf", st.jump_inf},
                     {"edge_jump_inf", st.edge_jump_inf},
                     {"memory_bytes", st.memory_bytes}};
      ji["iterations"].push_back(r);
    }
    j["increments"].push_back(ji);
  }
  j["final_level"] = trace.final_level;
  j["direct_fallback"] = trace.direct_fallback;
  j["warnings"] = trace.warnings;
  j["peak_memory_bytes"] = trace.peak_memory_bytes;
  return j;
}

nlohmann::json timing_json(const NewtonTrace& trace, double wall_seconds) {
  nlohmann::json j;
  double assembly = 0.0, solve = 0.0;
  j["iterations"] = nlohmann::json::array();
  for (const auto& inc : trace.increments) {
    for (const auto& it : inc.iterations) {
      assembly += it.assembly_seconds;
      solve += it.solve_seconds;
      j["iterations"].push_back(
          {{"increment", inc.index}, {"iteration", it.iteration}, {"assembly", it.assembly_seconds},
           {"solve", it.solve_seconds}});
    }
  }
  j["assembly_seconds"] = assembly;
  j["solve_seconds"] = solve;
  j["wall_seconds"] = wall_seconds;
  return j;
}

nlohmann::json report_json(const RunConfig& cfg, const LatticeModel& model, const NewtonResult& result,
                           const std::string& status, const std::string& message) {
  const auto& tr = result.trace;
  nlohmann::json j;
  j["status"] = status;
  j["message"] = message;
  j["problem"] = problem_json(cfg);
  j["solver"] = {{"path", tr.path},
                 {"rel_tol", cfg.newton.rel_tol},
                 {"max_iter", cfg.newton.max_iter},
                 {"epsilon", cfg.rb.epsilon},
                 {"outer_tol", cfg.rb.solver.outer_tol},
                 {"inner_tol", cfg.rb.solver.inner_tol},
                 {"max_outer", cfg.rb.solver.max_outer},
                 {"initial_level", cfg.rb.initial_level},
                 {"reduced_points", cfg.rb.reduced_points}};
  j["dofs"] = model.num_dofs();
  j["cells"] = model.num_cells();
  j["reference_functions"] = model.ref.n_ref;
  j["dirichlet_handling"] = "per-cell masking before snapshot extraction";
  j["total_newton_iterations"] = tr.total_iterations();
  j["increments"] = nlohmann::json::array();
  double worst_rel = 0.0, worst_outer = 0.0, max_cert = 0.0;
  int max_nr = 0;
  for (const auto& inc : tr.increments) {
    nlohmann::json ji;
    const double rel = inc.reference_residual > 0.0 ? inc.final_residual / inc.reference_residual : 0.0;
    if (inc.converged) worst_rel = std::max(worst_rel, rel);
    std::vector<int> nr, fact;
    for (const auto& it : inc.iterations) {
      nr.push_back(it.num_principal);
      fact.push_back(it.stats.factorizations);
      worst_outer = std::max(worst_outer, it.stats.achieved_residual);
      max_cert = std::max(max_cert, it.certificate);
      max_nr = std::max(max_nr, it.num_principal);
    }
    ji["index"] = inc.index;
    ji["load"] = inc.load;
    ji["converged"] = inc.converged;
    ji["halved"] = inc.halved;
    ji["iterations"] = static_cast<int>(inc.iterations.size());
    ji["relative_residual"] = rel;
    ji["num_principal"] = nr;
    ji["factorizations"] = fact;
    ji["reaction"] = inc.reaction;
    ji["displacement"] = inc.displacement;
    j["increments"].push_back(ji);
  }
  j["achieved"] = {{"max_relative_residual", worst_rel},
                   {"max_linear_residual", worst_outer},
                   {"max_certificate", max_cert}};
  j["max_num_principal"] = max_nr;
  j["peak_memory_bytes"] = tr.peak_memory_bytes;
  j["final_primal_level"] = tr.final_level;
  j["direct_fallback"] = tr.direct_fallback;
  j["warnings"] = tr.warnings;
  j["timing_file"] = "timing.json";
  return j;
}

void write_vtk(std::ostream& out, const LatticeModel& model, const VectorXd& u, int samples) {
  const int d = model.dim;
  const int n = samples;
  std::vector<std::array<double, 6>> points;  // x, u
  std::vector<std::vector<int>> cells;
  std::vector<int> cell_id;
  PatchBasisEval be;
  for (int s = 0; s < model.num_cells(); ++s) {
    for (std::size_t k = 0; k < model.ref.patches.size(); ++k) {
      const SplinePatch& patch = model.ref.patches[k];
      std::vector<std::vector<double>> brk(d);
      for (int j = 0; j < d; ++j) brk[j] = patch.knots(j).breakpoints();
      // Every element of the patch, then a sample lattice on it.
      std::vector<int> ne(d), e(d, 0);
      int elements = 1;
      for (int j = 0; j < d; ++j) {
        ne[j] = static_cast<int>(brk[j].size()) - 1;
        elements *= ne[j];
      }
      for (int el = 0; el < elements; ++el) {
        int rest = el;
        for (int j = 0; j < d; ++j) {
          e[j] = rest % ne[j];
          rest /= ne[j];
        }
        const int base = static_cast<int>(points.size());
        int npts = 1;
        for (int j = 0; j < d; ++j) npts *= n;
        for (int q = 0; q < npts; ++q) {
          Vec theta(d);
          int r = q;
          for (int j = 0; j < d; ++j) {
            const int t = r % n;
            r /= n;
            const double a = brk[j][e[j]], b = brk[j][e[j] + 1];
            theta[j] = a + (b - a) * t / (n - 1);
          }
          const Vec x = eval_composed(model.macro.elements[s], patch, theta).x;
          eval_patch_basis(patch, theta, be);
          std::array<double, 6> pt{};
          for (int j = 0; j < d; ++j) pt[j] = x[j];
          for (std::size_t a = 0; a < be.indices.size(); ++a) {
            const int f = model.cell_functions[s][model.ref.glue_map[k][be.indices[a]]];
            for (int c = 0; c < d; ++c) pt[3 + c] += be.values[a] * u[d * f + c];
          }
          points.push_back(pt);
        }
        // Sub-cells of the lattice in VTK vertex order.
        const int sub = d == 2 ? (n - 1) * (n - 1) : (n - 1) * (n - 1) * (n - 1);
        for (int q = 0; q < sub; ++q) {
          const int i = q % (n - 1), jj = (q / (n - 1)) % (n - 1), kk = d == 3 ? q / ((n - 1) * (n - 1)) : 0;
          auto id = [&](int a, int b, int c) { return base + a + n * (b + n * c); };
          if (d == 2) {
            cells.push_back({id(i, jj, 0), id(i + 1, jj, 0), id(i + 1, jj + 1, 0), id(i, jj + 1, 0)});
          } else {
            cells.push_back({id(i, jj, kk), id(i + 1, jj, kk), id(i + 1, jj + 1, kk), id(i, jj + 1, kk),
                             id(i, jj, kk + 1), id(i + 1, jj, kk + 1), id(i + 1, jj + 1, kk + 1),
                             id(i, jj + 1, kk + 1)});
          }
          cell_id.push_back(s);
        }
      }
    }
  }
  out << "# vtk DataFile Version 3.0\nlatro displacement\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << points.size() << " double\n";
  for (const auto& p : points) out << fmt(p[0], 12) << ' ' << fmt(p[1], 12) << ' ' << fmt(p[2], 12) << '\n';
  const int per = d == 2 ? 4 : 8;
  out << "CELLS " << cells.size() << ' ' << cells.size() * (per + 1) << '\n';
  for (const auto& c : cells) {
    out << per;
    for (int v : c) out << ' ' << v;
    out << '\n';
  }
  out << "CELL_TYPES " << cells.size() << '\n';
  for (std::size_t i = 0; i < cells.size(); ++i) out << (d == 2 ? 9 : 12) << '\n';
  out << "POINT_DATA " << points.size() << "\nVECTORS displacement double\n";
  for (const auto& p : points) out << fmt(p[3], 12) << ' ' << fmt(p[4], 12) << ' ' << fmt(p[5], 12) << '\n';
  out << "CELL_DATA " << cells.size() << "\nSCALARS cell int 1\nLOOKUP_TABLE default\n";
  for (int s : cell_id) out << s << '\n';
}

void write_load_displacement(std::ostream& out, const NewtonTrace& trace) {
  out << "increment,load_factor";
  for (const auto& p : trace.probes) {
    const std::string tag = p.face + "_" + component_name(p.component);
    out << ',' << tag << "_displacement," << tag << "_reaction";
  }
  out << "\r\n";
  for (const auto& inc : trace.increments) {
    if (!inc.converged) continue;
    out << inc.index << ',' << fmt(inc.load);
    for (std::size_t i = 0; i < trace.probes.size(); ++i) {
      out << ',' << fmt(inc.displacement[i]) << ',' << fmt(inc.reaction[i]);
    }
    out << "\r\n";
  }
}

void write_residuals(std::ostream& out, const NewtonTrace& trace) {
  out << "increment,iteration,residual,relative_residual,step,backtracks,num_principal,factorizations,"
         "outer_iterations,inner_iterations,level,enrichment_events\r\n";
  for (const auto& inc : trace.increments) {
    for (const auto& it : inc.iterations) {
      out << inc.index << ',' << it.iteration << ',' << fmt(it.residual) << ','
          << fmt(inc.reference_residual > 0.0 ? it.residual / inc.reference_residual : 0.0) << ',' << fmt(it.step)
          << ',' << it.backtracks << ',' << it.num_principal << ',' << it.stats.factorizations << ','
          << it.stats.outer_iterations << ',' << it.stats.inner_iterations << ',' << it.level << ','
          << it.enrichment_events << "\r\n";
    }
  }
}

void write_solution(std::ostream& out, const VectorXd& u) {
  out << "u\r\n";
  for (int i = 0; i < u.size(); ++i) out << fmt(u[i]) << "\r\n";
}

VectorXd read_solution(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::string line;
  std::getline(in, line);
  if (trim(line) != "u") throw ConfigError(path + " is not a solution file");
  std::vector<double> v;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    char* end = nullptr;
    v.push_back(std::strtod(t.c_str(), &end));
    if (end != t.c_str() + t.size()) throw ConfigError(path + ": bad value '" + t + "'");
  }
  return Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

namespace {

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  body(out);
  if (!out) throw Error("failed writing " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_file(path, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

}  // namespace

int run_command(const std::string& config_path, const std::string& out_dir, int verbosity, std::ostream& out,
                std::ostream& err) {
  RunConfig cfg;
  std::unique_ptr<LatticeModel> model;
  try {
    cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    model = std::make_unique<LatticeModel>(build_model(cfg));
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const GeometryError& e) {
    err << "geometry error: " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const DomainError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigInvalid;
  }

  const fs::path dir(cfg.output_dir);
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    err << "cannot create output directory: " << e.what() << '\n';
    return kFailure;
  }

  NewtonCallbacks cb;
  if (verbosity >= 2) {
    cb.before_solve = [&](const IterationContext& c) {
      err << "  increment " << c.increment << " iteration " << c.iteration << " |r| " << fmt(c.rhs.norm(), 6)
          << '\n';
    };
  }
  if (verbosity >= 1) {
    cb.after_increment = [&](const IncrementRecord& r) {
      err << "increment " << r.index << " load " << fmt(r.load, 6) << " iterations " << r.iterations.size()
          << " relative residual "
          << fmt(r.reference_residual > 0 ? r.final_residual / r.reference_residual : 0.0, 3) << '\n';
    };
  }
  if (verbosity >= 1) {
    err << "model: " << model->num_cells() << " cells, " << model->num_dofs() << " dofs, path "
        << (cfg.path == SolverPath::Rb ? "rb" : "standard") << '\n';
  }

  const auto t0 = std::chrono::steady_clock::now();
  NewtonResult result;
  std::string status = "converged", message;
  int code = kOk;
  try {
    result = newton_solve(*model, cfg.material(), cfg.program(), cfg.newton, cfg.path, cfg.rb,
                          default_probes(cfg.bc, model->dim), cb);
  } catch (const NewtonNonConvergence& e) {
    result = e.partial();
    status = "nonconvergence";
    message = e.what();
    code = kNonConvergence;
  } catch (const NewtonStepFailure& e) {
    result = e.partial();
    status = "step_failure";
    message = e.what();
    code = kNonConvergence;
  } catch (const Error& e) {
    err << "solver error: " << e.what() << '\n';
    return kFailure;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  try {
    write_json(dir / "report.json", report_json(cfg, *model, result, status, message));
    write_json(dir / "trace.json", trace_json(result.trace));
    write_json(dir / "timing.json", timing_json(result.trace, wall));
    write_file(dir / "load_displacement.csv", [&](std::ostream& o) { write_load_displacement(o, result.trace); });
    write_file(dir / "residuals.csv", [&](std::ostream& o) { write_residuals(o, result.trace); });
    write_file(dir / "solution.csv", [&](std::ostream& o) { write_solution(o, result.u); });
    write_file(dir / "displacement.vtk", [&](std::ostream& o) { write_vtk(o, *model, result.u, cfg.vtk_samples); });
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kFailure;
  }
  if (code == kNonConvergence) {
    err << "solver did not converge: " << message << "; partial artifacts in " << dir.string() << '\n';
  } else {
    out << "converged in " << result.trace.total_iterations() << " Newton iterations; artifacts in " << dir.string()
        << '\n';
  }
  return code;
}

int validate_command(const std::string& config_path, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = load_config(config_path);
    const LatticeModel m = build_model(cfg);
    out << "valid: " << m.num_cells() << " cells, " << m.num_dofs() << " dofs, " << m.ref.n_ref
        << " functions per cell\n";
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const GeometryError& e) {
    err << "geometry error: " << e.what() << '\n';
  } catch (const DomainError& e) {
    err << "config error: " << e.what() << '\n';
  }
  return kConfigInvalid;
}

namespace {

fs::path report_path(const std::string& arg) {
  fs::path p(arg);
  if (fs::is_directory(p)) p /= "report.json";
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(p.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

int compare_command(const std::string& a, const std::string& b, std::ostream& out, std::ostream& err) {
  try {
    const fs::path pa = report_path(a), pb = report_path(b);
    const nlohmann::json ra = read_json(pa), rb = read_json(pb);
    if (!ra.contains("problem") || !rb.contains("problem")) throw Error("not a run report");
    if (ra["problem"] != rb["problem"]) {
      err << "reports describe different problems\n";
      return kFailure;
    }
    auto timing = [](const fs::path& report, const nlohmann::json& r) {
      const fs::path t = report.parent_path() / r.value("timing_file", std::string("timing.json"));
      return fs::exists(t) ? read_json(t) : nlohmann::json::object();
    };
    const nlohmann::json ta = timing(pa, ra), tb = timing(pb, rb);
    struct Row {
      std::string name;
      double x, y;
    };
    auto num = [](const nlohmann::json& j, const char* k) { return j.contains(k) ? j[k].get<double>() : 0.0; };
    const std::vector<Row> rows = {
        {"dofs", num(ra, "dofs"), num(rb, "dofs")},
        {"cells", num(ra, "cells"), num(rb, "cells")},
        {"newton iterations", num(ra, "total_newton_iterations"), num(rb, "total_newton_iterations")},
        {"max principal cells", num(ra, "max_num_principal"), num(rb, "max_num_principal")},
        {"assembly/init [s]", num(ta, "assembly_seconds"), num(tb, "assembly_seconds")},
        {"solve [s]", num(ta, "solve_seconds"), num(tb, "solve_seconds")},
        {"memory proxy [bytes]", num(ra, "peak_memory_bytes"), num(rb, "peak_memory_bytes")},
    };
    const std::string la = ra["solver"].value("path", std::string("a")), lb = rb["solver"].value("path", std::string("b"));
    out << std::left << std::setw(24) << "metric" << std::right << std::setw(16) << la << std::setw(16) << lb
        << std::setw(12) << "ratio" << '\n';
    for (const auto& r : rows) {
      const double ratio = r.x == r.y ? 1.0 : r.x == 0.0 ? INFINITY : r.y / r.x;
      out << std::left << std::setw(24) << r.name << std::right << std::setw(16) << fmt(r.x, 8) << std::setw(16)
          << fmt(r.y, 8) << std::setw(12) << fmt(ratio, 6) << '\n';
    }
    const fs::path sa = pa.parent_path() / "solution.csv", sb = pb.parent_path() / "solution.csv";
    if (fs::exists(sa) && fs::exists(sb)) {
      const VectorXd ua = read_solution(sa.string()), ub = read_solution(sb.string());
      if (ua.size() != ub.size()) throw Error("solution files differ in length");
      const double denom = ua.norm();
      const double diff = denom > 0.0 ? (ua - ub).norm() / denom : (ua - ub).norm();
      out << "displacement difference (relative l2): " << fmt(diff, 6) << '\n';
    }
    return kOk;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace latro
