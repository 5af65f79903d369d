#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sbc/cli.hpp>

using namespace sbc;
namespace fs = std::filesystem;
using cli::json;

namespace {

std::string lab() {
  const char* p = std::getenv("SBC_LAB");
  return p ? p : "sbc-lab";
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("sbc_lab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  auto f = dir / name;
  std::ofstream(f) << j.dump(2);
  return f;
}

int run_lab(const std::string& args, const fs::path& dir) {
  std::string cmd = lab() + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " + (dir / "stderr.txt").string();
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const json& j) {
  try {
    cli::from_json(j);
  } catch (const cli::ConfigError& e) {
    return e.path();
  }
  return "";
}

json base_config(const std::string& kind) {
  cli::ExperimentConfig c;
  c.kind = kind;
  return cli::to_json(c);
}

}  // namespace

TEST(Config, RoundTripIsIdentity) {
  for (const auto& p : cli::presets()) {
    auto j = cli::to_json(p.config);
    auto back = cli::to_json(cli::from_json(j));
    EXPECT_EQ(j, back) << p.name;
    EXPECT_EQ(back.dump(), j.dump()) << p.name;
  }
}

TEST(Config, MissingSectionsTakeDefaults) {
  json j = {{"schema_version", 1}, {"kind", "blockmap"}};
  auto c = cli::from_json(j);
  EXPECT_EQ(c.masses[0], 1.0);
  EXPECT_EQ(c.block.annihilate, 5);
  EXPECT_EQ(cli::to_json(cli::from_json(cli::to_json(c))), cli::to_json(c));
}

TEST(Config, ErrorsCarryTheFieldPath) {
  auto j = base_config("blockmap");
  j["block"]["rhoo"] = 0.2;
  EXPECT_EQ(config_error(j), "block.rhoo");

  j = base_config("blockmap");
  j["block"]["anchor"]["Gamma"][1] = {1.0, 0.5};
  EXPECT_EQ(config_error(j), "block.anchor.Gamma[1]");

  j = base_config("blockmap");
  j["block"]["eps"]["to"] = 0.5;
  EXPECT_EQ(config_error(j), "block.eps.to");

  j = base_config("exponent");
  j["block"]["directions"] = json::array({{0.1, 0.2, 0.3}, {0.1, 2.0, 0.3}});
  EXPECT_EQ(config_error(j), "block.directions[1][1]");

  j = base_config("simulate");
  j["masses"][2] = -1.0;
  EXPECT_EQ(config_error(j), "masses[2]");

  j = base_config("simulate");
  j["schema_version"] = 7;
  EXPECT_EQ(config_error(j), "schema_version");

  j = base_config("simulate");
  j["integrator"]["rtol"] = "tight";
  EXPECT_EQ(config_error(j), "integrator.rtol");

  j = base_config("simulate");
  j["kind"] = "orbit";
  EXPECT_EQ(config_error(j), "kind");
}

TEST(Presets, Catalogue) {
  auto ps = cli::presets();
  EXPECT_GE(ps.size(), 4u);
  std::map<std::string, cli::ExperimentConfig> by;
  for (const auto& p : ps) by[p.name] = p.config;
  ASSERT_TRUE(by.count("collinear") && by.count("caledonian") && by.count("rectangular") && by.count("equal-generic"));

  const auto& col = by["collinear"];
  for (const auto& g : col.block.anchor.Gamma) EXPECT_EQ(g.imag(), 0.0);
  EXPECT_EQ(col.block.anchor.y.imag(), 0.0);
  EXPECT_EQ(col.block.direction[0], 0.0);
  EXPECT_EQ(col.block.direction[2], 0.0);
  for (const auto& z : col.simulate.zeta) EXPECT_EQ(z.imag(), 0.0);
  for (const auto& g : col.simulate.Gamma) EXPECT_EQ(g.imag(), 0.0);
  EXPECT_EQ(col.simulate.x.imag(), 0.0);
  EXPECT_EQ(col.simulate.y.imag(), 0.0);

  const auto& cal = by["caledonian"];
  auto p = derive_params(cal.masses[0], cal.masses[1], cal.masses[2], cal.masses[3]);
  EXPECT_EQ(p.a1, p.a2);
}

TEST(Binary, ListPresets) {
  auto d = scratch("presets");
  ASSERT_EQ(run_lab("list-presets --out " + (d / "p").string(), d), 0);
  auto out = json::parse(slurp(d / "stdout.txt"));
  EXPECT_EQ(out["schema_version"], cli::kSchemaVersion);
  EXPECT_GE(out["presets"].size(), 4u);
  auto cfg = cli::load_config((d / "p" / "collinear.json").string());
  EXPECT_EQ(cfg.kind, "blockmap");
}

TEST(Binary, ConfigErrorsExitWithTwo) {
  auto d = scratch("errors");
  auto j = base_config("simulate");
  j["simulate"]["tau_max"] = -1.0;
  auto f = write_config(d, j);
  EXPECT_EQ(run_lab("simulate --config " + f.string(), d), 2);
  EXPECT_NE(slurp(d / "stderr.txt").find("simulate.tau_max"), std::string::npos);

  EXPECT_EQ(run_lab("blockmap --config " + f.string(), d), 2);
  EXPECT_NE(slurp(d / "stderr.txt").find("kind"), std::string::npos);

  EXPECT_EQ(run_lab("simulate", d), 2);
  EXPECT_EQ(run_lab("simulate --config " + (d / "missing.json").string(), d), 2);
  std::ofstream(d / "broken.json") << "{ \"schema_version\": 1, ";
  EXPECT_EQ(run_lab("simulate --config " + (d / "broken.json").string(), d), 2);
}

TEST(Binary, SimulateIsDeterministicAndStamped) {
  auto d = scratch("simulate");
  auto j = base_config("simulate");
  j["simulate"]["tau_max"] = 1.0;
  auto f = write_config(d, j);
  ASSERT_EQ(run_lab("simulate --config " + f.string() + " --out " + (d / "a").string(), d), 0);
  ASSERT_EQ(run_lab("simulate --config " + f.string() + " --out " + (d / "b").string(), d), 0);
  auto a = slurp(d / "a" / "simulate.csv"), b = slurp(d / "b" / "simulate.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rfind("# sbc-lab schema_version 1 kind simulate", 0), 0u);
  auto s = json::parse(slurp(d / "a" / "simulate_summary.json"));
  EXPECT_EQ(s["schema_version"], cli::kSchemaVersion);
  EXPECT_EQ(s["config"]["simulate"]["tau_max"], 1.0);
  EXPECT_LT(s["H_drift"].get<double>(), 1e-10);
}

TEST(Binary, TotalFailureExitsWithThree) {
  auto d = scratch("failure");
  auto j = base_config("simulate");
  // |zeta| far outside the neighbourhood the integrator accepts after the first step
  j["simulate"]["state"]["zeta"] = {{2000.0, 0.0}, {0.1, 0.0}};
  j["simulate"]["state"]["h"] = {0.0, 0.0};
  auto f = write_config(d, j);
  EXPECT_EQ(run_lab("simulate --config " + f.string() + " --out " + d.string(), d), 3);
}

TEST(Binary, BlockmapThreadsGiveIdenticalOutput) {
  auto d = scratch("threads");
  auto j = base_config("blockmap");
  j["block"]["rho"] = 0.1;
  j["block"]["eps"] = {{"from", 1e-2}, {"to", 1e-3}, {"count", 9}};
  j["block"]["annihilate"] = 2;
  auto f = write_config(d, j);
  ASSERT_EQ(run_lab("blockmap --config " + f.string() + " --threads 1 --out " + (d / "a").string(), d), 0);
  ASSERT_EQ(run_lab("blockmap --config " + f.string() + " --threads 3 --out " + (d / "b").string(), d), 0);
  EXPECT_EQ(slurp(d / "a" / "blockmap.csv"), slurp(d / "b" / "blockmap.csv"));
  EXPECT_EQ(slurp(d / "a" / "blockmap_signal.csv"), slurp(d / "b" / "blockmap_signal.csv"));
}

TEST(Binary, InvariantsReport) {
  auto d = scratch("invariants");
  auto j = base_config("invariants");
  j["invariants"] = {{"trajectories", 4}, {"kepler_trajectories", 2}, {"lemma_states", 20}, {"kseries_states", 1}};
  auto f = write_config(d, j);
  ASSERT_EQ(run_lab("invariants --config " + f.string() + " --out " + d.string(), d), 0);
  auto s = json::parse(slurp(d / "invariants_summary.json"));
  EXPECT_LT(s["max_H_drift"].get<double>(), 1e-10);
  EXPECT_LT(s["max_angular_momentum_drift"].get<double>(), 1e-10);
  EXPECT_LT(s["kepler_max_drift"]["h"].get<double>(), 1e-12);
  EXPECT_TRUE(s["lemma_max_residual"].contains("radial"));
  EXPECT_GE(s["kseries_min_exponent"].get<double>(), 9.5);
}

TEST(Binary, CollisionManifoldReport) {
  auto d = scratch("manifold");
  auto j = base_config("collision-manifold");
  j["precision"] = "extended";
  j["integrator"] = {{"rtol", 1e-22}, {"atol", 1e-22}, {"event_tol", 1e-22}};
  j["collision_manifold"] = {{"orbits", 4}, {"s_span", 5.0}, {"fibers", 2}, {"mass_sets", 2}, {"transversality_points", 10}};
  auto f = write_config(d, j);
  ASSERT_EQ(run_lab("collision-manifold --config " + f.string() + " --out " + d.string(), d), 0);
  auto s = json::parse(slurp(d / "collision-manifold_summary.json"));
  EXPECT_LT(s["max_eigenvalue_error"].get<double>(), 1e-9);
  EXPECT_LT(s["max_kappa1_drift"].get<double>(), 1e-8);
  EXPECT_LT(s["max_kappa2_drift"].get<double>(), 1e-8);
  EXPECT_GT(s["min_transversality_angle"].get<double>(), 1e-3);
}

// five directions in extended precision: about half a minute on one core
TEST(Binary, ExponentMeanSlope) {
  auto d = scratch("exponent");
  cli::ExperimentConfig c;
  for (const auto& p : cli::presets())
    if (p.name == "equal-generic") c = p.config;
  ASSERT_EQ(c.block.random_directions, 5);
  auto f = write_config(d, cli::to_json(c));
  ASSERT_EQ(run_lab("exponent --config " + f.string() + " --out " + d.string(), d), 0);
  auto s = json::parse(slurp(d / "exponent_summary.json"));
  EXPECT_EQ(s["directions_fitted"], 5);
  double m = s["mean_h_slope"].get<double>();
  EXPECT_GE(m, 2.52);
  EXPECT_LE(m, 2.82);
}
