#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "vbsim/errors.hpp"
#include "vbsim/experiments.hpp"

using namespace vbsim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vbsim_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t data_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n - 1;
}

json vector_config() {
  json j = oracle::base_config();
  j["domain"] = {{"plants", {{{"x", 0.3}, {"y", 0.5}}, {{"x", 0.7}, {"y", 0.5}}}}};
  j["rates"] = {{"birth", 2.0},
                {"natural_death", 1.0},
                {"competition", 1.0},
                {"mutation_prob", 0.1},
                {"load", {{"amplitude", 2.0}, {"radius", 0.2}, {"half_saturation", 0.5}}},
                {"unload", {{"amplitude", 1.0}, {"radius", 0.2}}},
                {"sigma_u", 0.3},
                {"sigma_c", 0.3}};
  j["initial"] = {{"mode", "mass"}, {"viruses", {0.3, 0.3}}, {"free_vectors", 0.5}};
  j["ide"] = {{"trait_nodes", 5}, {"space_cells", {10, 10}}, {"dt", 0.01}};
  j["study"] = {{"K_list", {10, 20}}, {"replicates", 4}, {"horizon", 0.5}, {"sample_dt", 0.1},
                {"seed", 3}};
  return j;
}

}  // namespace

TEST(Config, MinimalFileGetsDefaults) {
  const json j = {{"schema_version", 1}, {"domain", {{"plants", {{{"x", 0.5}, {"y", 0.5}}}}}}};
  const RunConfig rc = parse_config_json(j);
  EXPECT_EQ(rc.scaling.K, 1);
  EXPECT_EQ(rc.scaling.lambda, 1.0);
  EXPECT_EQ(rc.simulation.h_max, 1e-3);
  EXPECT_EQ(rc.simulation.population_cap, 10'000'000);
  EXPECT_EQ(rc.study.replicates, 1u);
  EXPECT_EQ(rc.persistence.beta_eval, BetaEval::kAtUnitMass);
  EXPECT_EQ(rc.echo["simulation"]["histogram_bins"], 8);
  EXPECT_EQ(rc.echo["scaling"]["load_argument"], "normalized");
  // The echo parses back to the same config.
  const RunConfig again = parse_config_json(rc.echo);
  EXPECT_EQ(config_digest(again.echo), config_digest(rc.echo));
}

TEST(Config, Rejections) {
  json j = oracle::base_config();
  j["scaling"] = {{"lambda", 1.5}};
  try {
    parse_config_json(j);
    FAIL() << "lambda 1.5 accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("scaling.lambda"), std::string::npos);
  }
  j = oracle::base_config();
  j["study"] = {{"K_list", {100, 50}}};
  EXPECT_THROW(parse_config_json(j), ConfigError);
  j = oracle::base_config();
  j["rates"]["brith"] = 1.0;
  try {
    parse_config_json(j);
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("brith"), std::string::npos);
  }
  j = oracle::base_config();
  j["schema_version"] = 2;
  EXPECT_THROW(parse_config_json(j), ConfigError);
  j.erase("schema_version");
  EXPECT_THROW(parse_config_json(j), ConfigError);
  j = oracle::base_config();
  j["initial"]["charged_vectors"] = 3;
  EXPECT_THROW(parse_config_json(j), ConfigError);
  EXPECT_THROW(parse_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, GaussianPeakForms) {
  json j = oracle::base_config();
  j["rates"]["birth"] = {{"family", "gaussian_peak"}, {"amplitude", 2.0}, {"width", 0.1},
                         {"optimum", 0.5}};
  RunConfig rc = parse_config_json(j);
  EXPECT_NEAR(eval_birth(rc.params, rc.domain, 0, {0.6, 0}), 2 * std::exp(-0.5), 1e-12);
  j["traits"] = {{"dim", 2}};
  j["rates"]["birth"]["optimum"] = {0.5, 0.5};
  rc = parse_config_json(j);
  EXPECT_DOUBLE_EQ(eval_birth(rc.params, rc.domain, 0, {0.5, 0.5}), 2.0);
  j["rates"]["birth"]["optimum"] = {{0.5, 0.5}, {0.1, 0.1}};
  rc = parse_config_json(j);
  EXPECT_EQ(std::get<GaussianPeak>(rc.params.birth).optimum.size(), 2u);
}

TEST(Outputs, EmptyStudyManifest) {
  const RunConfig rc = parse_config_json(oracle::base_config());
  const auto dir = scratch_dir("empty");
  emit_outputs(rc, {}, json(), dir);
  const json m = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["config"], rc.echo);
  EXPECT_EQ(m["config_digest"], config_digest(rc.echo));
  EXPECT_TRUE(m["files"].empty());
}

TEST(Outputs, SimulateRowsAndDeterminism) {
  json j = vector_config();
  j["study"]["horizon"] = 1.0;
  j["study"]["replicates"] = 2;
  j["scaling"] = {{"K", 10}};
  const RunConfig rc = parse_config_json(j);
  const auto a = scratch_dir("sim_a"), b = scratch_dir("sim_b");
  run_study(rc, StudyKind::kSimulate, a);
  run_study(rc, StudyKind::kSimulate, b);
  for (const char* f : {"trajectory_0.csv", "trajectory_1.csv", "histogram_0.csv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(data_rows(a / "trajectory_0.csv"), 11u);
  EXPECT_EQ(data_rows(a / "histogram_0.csv"), 11u * 8u);
  const json m = json::parse(slurp(a / "manifest.json"));
  for (const auto& f : m["files"]) {
    EXPECT_EQ(data_rows(a / f["name"].get<std::string>()), f["rows"].get<std::size_t>());
  }
  std::ifstream in(a / "trajectory_0.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,P_v,N_v,N_u,N_c,plant_0,plant_1");
}

TEST(Outputs, ConvergenceFilesPerK) {
  const RunConfig rc = parse_config_json(vector_config());
  const auto dir = scratch_dir("conv");
  run_study(rc, StudyKind::kConvergence, dir);
  EXPECT_TRUE(fs::exists(dir / "convergence_K10.csv"));
  EXPECT_TRUE(fs::exists(dir / "convergence_K20.csv"));
  EXPECT_EQ(data_rows(dir / "convergence_K10.csv"), 6u);
  EXPECT_EQ(data_rows(dir / "convergence_gaps.csv"), 2u);
  const auto rep = run_convergence(rc);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.regime, 1);
  for (const auto& row : rep.rows) {
    EXPECT_GE(row.gap_mass, 0.0);
    for (double v : row.mean_vector_mass) EXPECT_EQ(v, row.initial_vector_mass);
  }
  EXPECT_TRUE(rep.competition_bound_ok);
}

TEST(Outputs, DegenerateKStillReports) {
  json j = vector_config();
  j["study"]["K_list"] = {1};
  const RunConfig rc = parse_config_json(j);
  const auto rep = run_convergence(rc);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].K, 1);
}

TEST(Outputs, IdeStudies) {
  json j = vector_config();
  j["study"]["horizon"] = 0.2;
  const RunConfig rc = parse_config_json(j);
  const auto d1 = scratch_dir("ide1");
  const auto s1 = run_study(rc, StudyKind::kIde1, d1);
  EXPECT_EQ(data_rows(d1 / "masses.csv"), 3u);
  EXPECT_EQ(data_rows(d1 / "field_g_v.csv"), 3u * 2u * 5u);
  EXPECT_EQ(data_rows(d1 / "field_g_u.csv"), 3u * 100u);
  const auto d2 = scratch_dir("ide2");
  run_study(rc, StudyKind::kIde2, d2);
  EXPECT_TRUE(fs::exists(d2 / "elliptic_log.csv"));
  EXPECT_EQ(data_rows(d2 / "elliptic_log.csv"), 2u);
}

TEST(Outputs, PersistenceIncludesAnalyticR) {
  json j = oracle::base_config();
  const double r = 0.2;
  j["rates"] = {{"birth", 2.0},
                {"natural_death", 0.5},
                {"mutation_prob", 0.1},
                {"load", {{"amplitude", 0.6 / (M_PI * r * r)}, {"radius", r}}}};
  j["initial"] = {{"mode", "mass"}, {"viruses", {0.01}}};
  j["ide"] = {{"trait_nodes", 3}, {"space_cells", {10, 10}}, {"dt", 0.01}};
  j["persistence"] = {{"horizon", 2.0}};
  const RunConfig rc = parse_config_json(j);
  const auto rep = run_persistence(rc);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& row : rep.rows) EXPECT_NEAR(row.R, 1.0, 1e-12);
  const auto dir = scratch_dir("pers");
  run_study(rc, StudyKind::kPersistence, dir);
  EXPECT_EQ(data_rows(dir / "persistence.csv"), 3u);
}

TEST(Outputs, ExtinctionReport) {
  json j = oracle::base_config();
  j["rates"]["birth"] = 0.0;
  j["rates"]["competition"] = 0.5;
  j["initial"]["viruses"] = {20};
  j["study"] = {{"replicates", 50}, {"horizon", 20.0}, {"sample_dt", 1.0},
                {"extinction_times", {1.0, 5.0, 20.0}}};
  const RunConfig rc = parse_config_json(j);
  const auto rep = run_extinction(rc);
  EXPECT_EQ(rep.extinct.back().fraction, 1.0);
  EXPECT_TRUE(rep.monotone);
  EXPECT_TRUE(rep.bound_ok);
  EXPECT_EQ(rep.f0, 20.0);
  ASSERT_EQ(rep.extra_extinct.size(), 3u);
  EXPECT_LE(rep.extra_extinct[0].fraction, rep.extra_extinct[1].fraction);
  j["study"]["extinction_times"] = {30.0};
  EXPECT_THROW(run_extinction(parse_config_json(j)), ConfigError);
}

TEST(Config, ShippedExamplesParse) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(VBSIM_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    SCOPED_TRACE(e.path().string());
    const RunConfig rc = parse_config(e.path());
    EXPECT_NO_THROW(validate(rc));
    ++n;
  }
  EXPECT_GE(n, 6u);
}
