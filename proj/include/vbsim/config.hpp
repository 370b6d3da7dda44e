#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vbsim/ide.hpp"
#include "vbsim/model.hpp"
#include "vbsim/particle.hpp"

namespace vbsim {

inline constexpr int kSchemaVersion = 1;

enum class StudyKind { kSimulate, kIde1, kIde2, kConvergence, kExtinction, kPersistence };

const char* to_string(StudyKind k);
StudyKind parse_study_kind(const std::string& s);

struct ScalingConfig {
  std::int64_t K = 1;
  double lambda = 1.0;
  LoadArgument load_argument = LoadArgument::kNormalized;
};

struct SimulationConfig {
  double h_max = 1e-3;
  std::int64_t population_cap = 10'000'000;
  ThinningScheme scheme = ThinningScheme::kPerCategory;
  std::size_t histogram_bins = 8;
};

struct IdeConfig {
  GridResolution grid;
  double dt = 1e-3;  // upper bound; the solver steps at min(dt, stability limit)
  double speedup = 1.0;
};

struct PersistenceConfig {
  BetaEval beta_eval = BetaEval::kAtUnitMass;
  double horizon = 20.0;
};

struct StudyConfig {
  StudyKind kind = StudyKind::kSimulate;
  std::vector<std::int64_t> K_list;
  std::size_t replicates = 1;
  double horizon = 1.0;
  double sample_dt = 0.1;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::vector<double> extinction_times;  // extra horizons for the extinction curve
};

/// Fully resolved run description; `echo` is the config with defaults filled in.
struct RunConfig {
  DomainConfig domain_config;
  Domain domain;
  ModelParams params;
  ScalingConfig scaling;
  InitialConfig initial;
  SimulationConfig simulation;
  IdeConfig ide;
  PersistenceConfig persistence;
  StudyConfig study;
  nlohmann::json echo;

  ScaledParams scaled() const { return scaled(scaling.K); }
  ScaledParams scaled(std::int64_t K) const;
  SimOptions sim_options() const;
  HistogramSpec histogram() const;
};

/// Throws ConfigError with the offending key path.
RunConfig parse_config_json(const nlohmann::json& j);
RunConfig parse_config(const std::filesystem::path& path);

/// Cross-field checks that do not make the config unusable; returned as
/// human-readable notes.
std::vector<std::string> validate(const RunConfig& config);

/// FNV-1a of the canonical dump of the echoed config, as 16 hex digits.
std::string config_digest(const nlohmann::json& echo);

}  // namespace vbsim
