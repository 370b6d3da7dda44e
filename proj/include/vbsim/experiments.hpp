#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vbsim/config.hpp"
#include "vbsim/ide.hpp"
#include "vbsim/particle.hpp"

namespace vbsim {

// ---------------------------------------------------------------------------
// Deterministic IDE trajectories on a sample grid.
// ---------------------------------------------------------------------------

struct IdeSample {
  double t = 0.0;
  MassTotals masses;
  std::vector<double> trait_hist;  // mass per histogram bin (trait axis 0)
};

struct IdeRun {
  std::vector<IdeSample> samples;
  std::vector<FieldState> fields;            // only when requested
  std::vector<EllipticSolution> elliptic;    // regime 2, one per sample after t = 0
  StepDiagnostics diagnostics;
  std::size_t steps = 0;
};

/// Integrates regime 1 (lambda = 1) or regime 2 (stationary vector fields)
/// from `f0` and records masses on the sample grid. Steps never exceed
/// `dt_max` and shrink to the stability limit when needed.
IdeRun run_ide(const IdeOperator& op, const FieldState& f0, int regime, double horizon,
               double sample_dt, double dt_max, const HistogramSpec& hist,
               bool keep_fields = false);

// ---------------------------------------------------------------------------
// Studies.
// ---------------------------------------------------------------------------

struct ConvergenceRow {
  std::int64_t K = 0;
  std::vector<double> times;
  std::vector<double> mean_mass;         // replicate mean of P_v / K
  std::vector<double> se_mass;
  std::vector<double> ref_mass;
  std::vector<double> mean_vector_mass;  // (N_u + N_c) / K^lambda
  double initial_vector_mass = 0.0;
  double gap_mass = 0.0;                 // sup_t |mean - ref|
  double se_at_gap = 0.0;
  double gap_per_plant = 0.0;
  double gap_histogram = 0.0;
  std::size_t replicates = 0;
};

struct ConvergenceReport {
  int regime = 1;
  std::vector<ConvergenceRow> rows;  // sorted by K
  bool competition_bound_ok = true;
};

ConvergenceReport run_convergence(const RunConfig& config);

struct ExtinctionReport {
  std::vector<double> times;
  std::vector<double> mean_p_v;
  std::vector<double> se_p_v;
  std::vector<ExtinctionEstimate> extinct;  // fraction extinct by each sample time
  std::vector<double> extra_times;
  std::vector<ExtinctionEstimate> extra_extinct;
  double f0 = 0.0;
  double x0 = 0.0;
  double max_excess_se = 0.0;  // max over t of (mean - max(f0, x0)) / SE
  bool bound_ok = true;        // mean <= max(f0, x0) + 4 SE everywhere
  bool monotone = true;
  bool competition_bound_ok = true;
  std::uint64_t events = 0;
};

ExtinctionReport run_extinction(const RunConfig& config);

struct PersistenceRow {
  std::size_t plant = 0;
  std::size_t trait_index = 0;
  Trait z{0.0, 0.0};
  double R = 0.0;
  double initial = 0.0;
  double min_late = 0.0;  // min of g_v over [T/2, T]
  double final = 0.0;
  bool persisted = false;  // min_late >= initial
  bool vanished = false;   // final < 1e-6
  bool agree = false;
};

struct PersistenceReport {
  double horizon = 0.0;
  std::vector<PersistenceRow> rows;
};

PersistenceReport run_persistence(const RunConfig& config);

// ---------------------------------------------------------------------------
// Output.
// ---------------------------------------------------------------------------

struct OutputFile {
  std::string name;
  std::size_t rows = 0;
};

/// CSV with a fixed header; doubles are written with 17 significant digits.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  CsvWriter& operator<<(double v);
  CsvWriter& operator<<(std::int64_t v);
  CsvWriter& operator<<(std::size_t v);
  CsvWriter& operator<<(const std::string& v);
  void end_row();
  std::size_t rows() const { return rows_; }

 private:
  void sep();
  std::ofstream out_;
  std::size_t columns_ = 0;
  std::size_t in_row_ = 0;
  std::size_t rows_ = 0;
};

/// trajectory<suffix>.csv and histogram<suffix>.csv.
std::vector<OutputFile> write_trajectory(const Trajectory& traj, const std::filesystem::path& dir,
                                         const std::string& suffix = "");
std::vector<OutputFile> write_convergence(const ConvergenceReport& report,
                                          const std::filesystem::path& dir);
std::vector<OutputFile> write_extinction(const ExtinctionReport& report,
                                         const std::filesystem::path& dir);
std::vector<OutputFile> write_persistence(const PersistenceReport& report,
                                          const std::filesystem::path& dir);
std::vector<OutputFile> write_ide(const IdeRun& run, const Grids& grids, const Domain& domain,
                                  int regime, const std::filesystem::path& dir);

/// manifest.json: config digest, config echo, file list with row counts,
/// free-form summary and validation notes.
OutputFile emit_outputs(const RunConfig& config, const std::vector<OutputFile>& files,
                        const nlohmann::json& summary, const std::filesystem::path& dir);

/// Runs the configured (or overridden) study and writes everything to `dir`.
/// Returns the summary stored in the manifest.
nlohmann::json run_study(const RunConfig& config, StudyKind kind,
                         const std::filesystem::path& dir);

}  // namespace vbsim
