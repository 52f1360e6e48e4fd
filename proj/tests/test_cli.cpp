#include "latro/run.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace latro;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"(# small cantilever
[geometry]
cell = "uc1"
nx = 2
ny = 1
p = 2
h = 1.0

[bc.left]
kind = "fixed"

[bc.right]
kind = "traction"
values = [0.0, -0.02]   # downward

[program]
increments = 2

[solver]
path = "standard"
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("latro_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& body) {
  const fs::path p = dir / name;
  std::ofstream(p) << body;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string with(std::string base, const std::string& from, const std::string& to) {
  const auto pos = base.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return base.replace(pos, from.size(), to);
}

}  // namespace

TEST(ConfigParser, ValuesSectionsAndComments) {
  const auto t = parse_config_text(
      "top = 1\n[a.b]\nx = -2.5e-1 # note\ns = \"#not a comment\"\nflag = true\narr = [1, 2.5, \"z\",]\n");
  EXPECT_EQ(t.at("top").number, 1.0);
  EXPECT_EQ(t.at("a.b.x").number, -0.25);
  EXPECT_EQ(t.at("a.b.s").text, "#not a comment");
  EXPECT_TRUE(t.at("a.b.flag").flag);
  ASSERT_EQ(t.at("a.b.arr").items.size(), 3u);
  EXPECT_EQ(t.at("a.b.arr").items[2].text, "z");
  EXPECT_EQ(t.at("a.b.x").line, 3);
}

TEST(ConfigParser, RejectsMalformedInput) {
  for (const char* bad : {"x = \n", "x 1\n", "[a\nx = 1\n", "x = 1\nx = 2\n", "x = [1, [2]]\n", "x = \"open\n",
                          "x = 1 2\n", "x = nan\n", "bad key = 1\n"}) {
    EXPECT_THROW(parse_config_text(bad), ConfigError) << bad;
  }
}

TEST(RunConfig, DefaultsAndOverrides) {
  const RunConfig c = config_from_table(parse_config_text(kSmall));
  EXPECT_EQ(c.cell, "uc1");
  EXPECT_EQ(c.nx, 2);
  EXPECT_EQ(c.elements_per_patch(), 1);
  EXPECT_EQ(c.E, 500.0);
  EXPECT_EQ(c.rb.epsilon, 3e-4);
  EXPECT_EQ(c.program().factors, (std::vector<double>{0.5, 1.0}));
  ASSERT_EQ(c.bc.faces.size(), 2u);
  // Faces are kept in name order of the table.
  EXPECT_EQ(c.bc.faces[0].face, "left");
  EXPECT_EQ(c.bc.faces[1].values, (std::vector<double>{0.0, -0.02}));
}

TEST(RunConfig, RejectsUnknownAndInvalidEntries) {
  const std::string base = kSmall;
  const std::vector<std::string> bad = {
      base + "\n[solver]\ntypo = 1\n",
      with(base, "nx = 2", "nx = 2\nnz = 3"),
      with(base, "h = 1.0", "h = 0.3"),
      with(base, "p = 2", "p = 4"),
      with(base, "path = \"standard\"", "path = \"fast\""),
      with(base, "increments = 2", "increments = 0"),
      with(base, "increments = 2", "increments = 2\nfactors = [0.5, 0.4]"),
      with(base, "kind = \"fixed\"", "kind = \"glued\""),
      with(base, "kind = \"fixed\"", "kind = \"traction\"\nvalues = [0.0, 0.0]"),
      with(base, "nx = 2", "nx = 2.5"),
      with(base, "cell = \"uc1\"", "cell = 1"),
      base + "[bc.middle]\nkind = \"fixed\"\n",
      base + "[material]\nnu = 0.5\n",
  };
  for (const auto& text : bad) EXPECT_THROW(config_from_table(parse_config_text(text)), ConfigError) << text;
}

TEST(RunConfig, TargetScalesLoads) {
  RunConfig c = config_from_table(parse_config_text(with(kSmall, "increments = 2", "increments = 2\ntarget = 3.0")));
  const LatticeModel m = build_model(c);
  double fy = 0.0;
  for (const auto& t : m.tractions) fy += t.g[1];
  EXPECT_LT(fy, 0.0);
  c.target = 1.0;
  const LatticeModel m1 = build_model(c);
  double fy1 = 0.0;
  for (const auto& t : m1.tractions) fy1 += t.g[1];
  EXPECT_NEAR(fy, 3.0 * fy1, 1e-15);
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("run"));
    const auto std_cfg = write_config(*dir_, "std.toml", kSmall);
    const auto rb_cfg = write_config(*dir_, "rb.toml", with(kSmall, "path = \"standard\"", "path = \"rb\""));
    std::ostringstream out, err;
    code_std_ = run_command(std_cfg.string(), (*dir_ / "std").string(), 0, out, err);
    code_std2_ = run_command(std_cfg.string(), (*dir_ / "std2").string(), 0, out, err);
    code_rb_ = run_command(rb_cfg.string(), (*dir_ / "rb").string(), 0, out, err);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static fs::path* dir_;
  static int code_std_, code_std2_, code_rb_;
};

fs::path* CliRun::dir_ = nullptr;
int CliRun::code_std_ = -1;
int CliRun::code_std2_ = -1;
int CliRun::code_rb_ = -1;

TEST_F(CliRun, WritesAllArtifacts) {
  EXPECT_EQ(code_std_, kOk);
  EXPECT_EQ(code_rb_, kOk);
  for (const char* f : {"report.json", "trace.json", "timing.json", "load_displacement.csv", "residuals.csv",
                        "solution.csv", "displacement.vtk"}) {
    EXPECT_TRUE(fs::exists(*dir_ / "std" / f)) << f;
    EXPECT_TRUE(fs::exists(*dir_ / "rb" / f)) << f;
  }
}

TEST_F(CliRun, ReportFields) {
  const auto r = nlohmann::json::parse(slurp(*dir_ / "rb" / "report.json"));
  EXPECT_EQ(r["status"], "converged");
  EXPECT_EQ(r["cells"], 2);
  EXPECT_GT(r["dofs"].get<int>(), 0);
  EXPECT_EQ(r["solver"]["path"], "rb");
  EXPECT_GT(r["total_newton_iterations"].get<int>(), 0);
  EXPECT_GT(r["peak_memory_bytes"].get<double>(), 0.0);
  EXPECT_LE(r["achieved"]["max_relative_residual"].get<double>(), 1e-6);
  EXPECT_LE(r["achieved"]["max_certificate"].get<double>(), 3e-4);
  ASSERT_EQ(r["increments"].size(), 2u);
  EXPECT_GE(r["increments"][0]["num_principal"][0].get<int>(), 1);
}

TEST_F(CliRun, DeterministicOutputs) {
  EXPECT_EQ(code_std2_, kOk);
  for (const char* f : {"report.json", "trace.json", "load_displacement.csv", "residuals.csv", "solution.csv",
                        "displacement.vtk"}) {
    EXPECT_EQ(slurp(*dir_ / "std" / f), slurp(*dir_ / "std2" / f)) << f;
  }
}

TEST_F(CliRun, CsvIsRfc4180) {
  const std::string csv = slurp(*dir_ / "std" / "load_displacement.csv");
  EXPECT_EQ(csv.rfind("increment,load_factor,right_y_displacement,right_y_reaction\r\n", 0), 0u);
  int rows = 0;
  for (std::size_t i = 0; i + 1 < csv.size(); ++i)
    if (csv[i] == '\r' && csv[i + 1] == '\n') ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(csv.find('\n', 0), csv.find("\r\n") + 1);
}

TEST_F(CliRun, LoadDisplacementMatchesAppliedForce) {
  // At equilibrium the force through the loaded face equals the applied resultant.
  const auto r = nlohmann::json::parse(slurp(*dir_ / "std" / "report.json"));
  const double f = r["increments"][1]["reaction"][0].get<double>();
  EXPECT_NEAR(f, -0.02 * 1.0, 1e-8);
  EXPECT_NEAR(r["increments"][0]["reaction"][0].get<double>(), -0.01, 1e-8);
}

TEST_F(CliRun, VtkIsWellFormed) {
  std::ifstream in(*dir_ / "std" / "displacement.vtk");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# vtk DataFile Version 3.0");
  int npts = 0, ncells = 0;
  std::string word;
  while (in >> word) {
    if (word == "POINTS") in >> npts;
    if (word == "CELLS") in >> ncells;
  }
  // 2 cells x 24 patches x 1 element x 3^2 samples and 2^2 quads.
  EXPECT_EQ(npts, 2 * 24 * 9);
  EXPECT_EQ(ncells, 2 * 24 * 4);
}

TEST_F(CliRun, CompareIdenticalAndCrossPath) {
  std::ostringstream out, err;
  ASSERT_EQ(compare_command((*dir_ / "std").string(), (*dir_ / "std2" / "report.json").string(), out, err), kOk);
  const std::string table = out.str();
  EXPECT_NE(table.find("newton iterations"), std::string::npos);
  EXPECT_NE(table.find("displacement difference (relative l2): 0"), std::string::npos);
  std::istringstream rows(table);
  std::string row;
  std::getline(rows, row);
  while (std::getline(rows, row)) {
    if (row.rfind("displacement", 0) == 0 || row.rfind("assembly", 0) == 0 || row.rfind("solve", 0) == 0) continue;
    EXPECT_EQ(row.substr(row.size() - 1), "1") << row;
  }

  std::ostringstream out2;
  ASSERT_EQ(compare_command((*dir_ / "std").string(), (*dir_ / "rb").string(), out2, err), kOk);
  const auto pos = out2.str().find("relative l2): ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LE(std::stod(out2.str().substr(pos + 14)), 1e-6);
}

TEST_F(CliRun, ReportRoundTripIsLossless) {
  const std::string text = slurp(*dir_ / "rb" / "report.json");
  const auto r = nlohmann::json::parse(text);
  EXPECT_EQ(r.dump(2) + "\n", text);
  const auto t = nlohmann::json::parse(slurp(*dir_ / "rb" / "trace.json"));
  EXPECT_EQ(t["increments"][1]["final_residual"].get<double>(),
            r["increments"][1]["relative_residual"].get<double>() * t["increments"][1]["reference_residual"].get<double>());
}

TEST(Cli, CompareErrors) {
  const fs::path dir = scratch("cmp");
  std::ostringstream out, err;
  EXPECT_EQ(compare_command((dir / "none").string(), (dir / "none2").string(), out, err), kFailure);
  std::ofstream(dir / "a.json") << R"({"problem": {"nx": 2}, "solver": {"path": "standard"}})";
  std::ofstream(dir / "b.json") << R"({"problem": {"nx": 3}, "solver": {"path": "rb"}})";
  EXPECT_EQ(compare_command((dir / "a.json").string(), (dir / "b.json").string(), out, err), kFailure);
  fs::remove_all(dir);
}

TEST(Cli, MalformedConfigLeavesOutputUntouched) {
  const fs::path dir = scratch("bad");
  const fs::path out_dir = dir / "never";
  const auto cfg = write_config(dir, "bad.toml", std::string(kSmall) + "\n[solver]\nunknown_key = 1\n");
  std::ostringstream out, err;
  EXPECT_EQ(run_command(cfg.string(), out_dir.string(), 0, out, err), kConfigInvalid);
  EXPECT_FALSE(fs::exists(out_dir));
  EXPECT_NE(err.str().find("unknown_key"), std::string::npos);
  EXPECT_EQ(validate_command(cfg.string(), out, err), kConfigInvalid);
  EXPECT_EQ(run_command((dir / "missing.toml").string(), out_dir.string(), 0, out, err), kConfigInvalid);
  fs::remove_all(dir);
}

TEST(Cli, NonConvergenceKeepsPartialArtifacts) {
  const fs::path dir = scratch("nc");
  const auto cfg = write_config(dir, "nc.toml", with(kSmall, "path = \"standard\"", "path = \"standard\"\nmax_iter = 1"));
  std::ostringstream out, err;
  EXPECT_EQ(run_command(cfg.string(), (dir / "out").string(), 0, out, err), kNonConvergence);
  const auto r = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
  EXPECT_EQ(r["status"], "nonconvergence");
  EXPECT_TRUE(fs::exists(dir / "out" / "trace.json"));
  fs::remove_all(dir);
}

TEST(Cli, ValidateReportsModelSize) {
  const fs::path dir = scratch("val");
  const auto cfg = write_config(dir, "ok.toml", kSmall);
  std::ostringstream out, err;
  EXPECT_EQ(validate_command(cfg.string(), out, err), kOk);
  EXPECT_NE(out.str().find("2 cells"), std::string::npos);
  fs::remove_all(dir);
}
