#include "vbsim/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "vbsim/errors.hpp"

namespace vbsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<double> ide_histogram(const FieldState& f, const Grids& g, const HistogramSpec& h,
                                  bool with_charged) {
  std::vector<double> out(h.bins, 0.0);
  const std::size_t nz = g.n_traits();
  const double width = (h.hi - h.lo) / static_cast<double>(h.bins);
  auto bin_of = [&](double z) {
    const double b = std::floor((z - h.lo) / width);
    return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(h.bins - 1)));
  };
  for (std::size_t k = 0; k < nz; ++k) {
    double m = 0.0;
    for (std::size_t x = 0; x < g.n_plants; ++x) m += f.g_v[x * nz + k];
    if (with_charged && !f.g_c.empty()) {
      for (std::size_t c = 0; c < g.n_cells(); ++c) m += g.cell_area * f.g_c[c * nz + k];
    }
    out[bin_of(g.trait_nodes[k][0])] += g.weights[k] * m;
  }
  return out;
}

using StepHook = std::function<void(const FieldState&)>;

// Advances f to t_target in equal steps no longer than dt_max, halving the
// step on a stability rejection.
void integrate(const IdeOperator& op, FieldState& f, int regime, double t_target, double dt_max,
               double V_total, IdeRun* run, const StepHook& hook) {
  const double len = t_target - f.t;
  if (!(len > 0.0)) return;
  double cap = dt_max;
  if (regime == 1) cap = std::min(cap, 0.95 * op.max_stable_dt(f));
  std::size_t n = static_cast<std::size_t>(std::ceil(len / cap - 1e-9));
  n = std::max<std::size_t>(n, 1);
  for (int attempt = 0; attempt < 30; ++attempt) {
    FieldState g = f;
    StepDiagnostics diag;
    EllipticSolution sol;
    std::vector<FieldState> trail;
    try {
      const double dt = len / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (regime == 1) {
          g = op.step_regime1(g, dt, &diag);
        } else {
          g = op.step_regime2(g, dt, V_total, &sol, &diag);
        }
        if (hook) trail.push_back(g);
      }
    } catch (const CflViolation&) {
      n *= 2;
      continue;
    }
    g.t = t_target;
    if (hook) {
      for (const auto& s : trail) hook(s);
    }
    if (run) {
      run->steps += n;
      run->diagnostics.clipped += diag.clipped;
      run->diagnostics.min_before_clip =
          std::min(run->diagnostics.min_before_clip, diag.min_before_clip);
      if (regime == 2) run->elliptic.push_back(std::move(sol));
    }
    f = std::move(g);
    return;
  }
  throw NumericalError("IDE integration: no stable step size found");
}

double sup_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

int regime_of(const RunConfig& cfg) { return cfg.scaling.lambda < 1.0 ? 2 : 1; }

}  // namespace

IdeRun run_ide(const IdeOperator& op, const FieldState& f0, int regime, double horizon,
               double sample_dt, double dt_max, const HistogramSpec& hist, bool keep_fields) {
  if (regime != 1 && regime != 2) throw ConfigError("run_ide: regime must be 1 or 2");
  if (!(horizon > 0.0) || !(sample_dt > 0.0) || !(dt_max > 0.0)) {
    throw ConfigError("run_ide: horizon, sample_dt and dt must be > 0");
  }
  IdeRun run;
  const Grids& g = op.grids();
  FieldState f = f0;
  const double V_total = op.mass_totals(f0).vector_mass;
  if (regime == 2) {
    // Start from the stationary vector fields so t = 0 is on the slow manifold.
    EllipticSolution sol = op.solve_elliptic_vectors(f, V_total);
    f.g_u = sol.g_u;
    f.g_c = sol.g_c;
  }
  const std::size_t n = sample_count(horizon, sample_dt);
  for (std::size_t k = 0; k < n; ++k) {
    const double tk = f0.t + sample_time(k, horizon, sample_dt);
    integrate(op, f, regime, tk, dt_max, V_total, &run, nullptr);
    IdeSample s;
    s.t = tk;
    s.masses = op.mass_totals(f);
    s.trait_hist = ide_histogram(f, g, hist, regime == 1);
    run.samples.push_back(std::move(s));
    if (keep_fields) run.fields.push_back(f);
  }
  return run;
}

// ---------------------------------------------------------------------------

ConvergenceReport run_convergence(const RunConfig& cfg) {
  const auto& st = cfg.study;
  if (st.K_list.empty()) throw ConfigError("study.K_list: convergence needs at least one K");
  if (st.replicates < 2) throw ConfigError("study.replicates: convergence needs >= 2");
  if (cfg.initial.mode != InitMode::kMass) {
    throw ConfigError("initial.mode: convergence needs mass-mode initial data");
  }
  ConvergenceReport report;
  report.regime = regime_of(cfg);

  const Grids grids = build_grids(cfg.domain, cfg.ide.grid);
  IdeOptions iopt;
  iopt.speedup = cfg.ide.speedup;
  const IdeOperator op(cfg.domain, cfg.params, grids, iopt);
  const HistogramSpec hist = cfg.histogram();
  const FieldState f0 = initial_fields(cfg.initial, grids, 1.0, cfg.scaling.lambda);
  const IdeRun ref = run_ide(op, f0, report.regime, st.horizon, st.sample_dt, cfg.ide.dt, hist);

  const std::size_t n_s = ref.samples.size();
  const std::size_t n_e = cfg.domain.plant_count();
  const SimOptions sopt = cfg.sim_options();

  for (std::int64_t K : st.K_list) {
    const ScaledParams sp = cfg.scaled(K);
    const double Kd = static_cast<double>(K);
    const double Kl = std::pow(Kd, cfg.scaling.lambda);
    const std::uint64_t master = derive_seed(st.seed, static_cast<std::uint64_t>(K), 7);

    std::vector<double> sum(n_s, 0.0), sum2(n_s, 0.0);
    std::vector<std::int64_t> vsum(n_s, 0);
    std::vector<double> plant_sum(n_s * n_e, 0.0), hist_sum(n_s * hist.bins, 0.0);
    double v0 = 0.0;
    for (std::size_t r = 0; r < st.replicates; ++r) {
      RandomStream init_rng(derive_seed(master, r, 1));
      const ParticleState s0 = init_population(cfg.initial, cfg.domain, sp, init_rng);
      if (r == 0) v0 = static_cast<double>(s0.n_u() + s0.n_c()) / Kl;
      const Trajectory tr =
          simulate(cfg.domain, sp, s0, st.horizon, st.sample_dt, derive_seed(master, r, 2), sopt, hist);
      for (std::size_t k = 0; k < n_s; ++k) {
        const Snapshot& s = tr.samples[k];
        const double m = static_cast<double>(s.n_v) / Kd;
        sum[k] += m;
        sum2[k] += m * m;
        vsum[k] += s.n_u + s.n_c;
        for (std::size_t x = 0; x < n_e; ++x) {
          plant_sum[k * n_e + x] += static_cast<double>(s.per_plant[x]) / Kd;
        }
        for (std::size_t b = 0; b < hist.bins; ++b) {
          hist_sum[k * hist.bins + b] += static_cast<double>(s.trait_hist[b]) / Kd;
        }
        if (!competition_lower_bound_holds(s)) report.competition_bound_ok = false;
      }
    }

    ConvergenceRow row;
    row.K = K;
    row.replicates = st.replicates;
    row.initial_vector_mass = v0;
    const double n = static_cast<double>(st.replicates);
    for (std::size_t k = 0; k < n_s; ++k) {
      const double mean = sum[k] / n;
      const double var = std::max(0.0, (sum2[k] - n * mean * mean) / (n - 1.0));
      const double ref_m = ref.samples[k].masses.plant_virus_mass;
      row.times.push_back(ref.samples[k].t);
      row.mean_mass.push_back(mean);
      row.se_mass.push_back(std::sqrt(var / n));
      row.ref_mass.push_back(ref_m);
      // Integer accumulation keeps the conserved vector mean exact.
      row.mean_vector_mass.push_back(static_cast<double>(vsum[k]) / n / Kl);
      const double gap = std::abs(mean - ref_m);
      if (gap >= row.gap_mass) {
        row.gap_mass = gap;
        row.se_at_gap = row.se_mass.back();
      }
      for (std::size_t x = 0; x < n_e; ++x) {
        row.gap_per_plant = std::max(
            row.gap_per_plant,
            std::abs(plant_sum[k * n_e + x] / n - ref.samples[k].masses.per_plant_mass[x]));
      }
      std::vector<double> hm(hist.bins);
      for (std::size_t b = 0; b < hist.bins; ++b) hm[b] = hist_sum[k * hist.bins + b] / n;
      row.gap_histogram = std::max(row.gap_histogram, sup_abs_diff(hm, ref.samples[k].trait_hist));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------

ExtinctionReport run_extinction(const RunConfig& cfg) {
  const auto& st = cfg.study;
  if (st.replicates < 2) throw ConfigError("study.replicates: extinction needs >= 2");
  for (double t : st.extinction_times) {
    if (!(t >= 0.0) || t > st.horizon) {
      throw ConfigError("study.extinction_times: entries must lie in [0, horizon]");
    }
  }
  const ScaledParams sp = cfg.scaled();
  const SimOptions sopt = cfg.sim_options();
  const HistogramSpec hist = cfg.histogram();
  const std::size_t n_s = sample_count(st.horizon, st.sample_dt);

  ExtinctionReport rep;
  std::vector<double> sum(n_s, 0.0), sum2(n_s, 0.0), tau(st.replicates);
  double v0 = 0.0;
  for (std::size_t r = 0; r < st.replicates; ++r) {
    RandomStream init_rng(derive_seed(st.seed, r, 1));
    const ParticleState s0 = init_population(cfg.initial, cfg.domain, sp, init_rng);
    if (r == 0) v0 = static_cast<double>(s0.n_u() + s0.n_c());
    const Trajectory tr =
        simulate(cfg.domain, sp, s0, st.horizon, st.sample_dt, derive_seed(st.seed, r, 2), sopt, hist);
    rep.events += tr.events;
    tau[r] = tr.extinction_time.value_or(std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < n_s; ++k) {
      const double p = static_cast<double>(tr.samples[k].p_v);
      sum[k] += p;
      sum2[k] += p * p;
      if (!competition_lower_bound_holds(tr.samples[k])) rep.competition_bound_ok = false;
    }
  }
  const double n = static_cast<double>(st.replicates);
  rep.f0 = sum[0] / n;
  const Bounds bounds = rate_bounds(cfg.params, cfg.domain);
  rep.x0 = mean_bound_x0(bounds, sp.competition, v0, cfg.domain.plant_count());
  const double bound = std::max(rep.f0, rep.x0);

  auto fraction_by = [&](double t) {
    std::size_t hits = 0;
    for (double x : tau) hits += x <= t ? 1 : 0;
    return wilson_interval(hits, st.replicates);
  };
  rep.max_excess_se = -std::numeric_limits<double>::infinity();
  double prev = 0.0;
  for (std::size_t k = 0; k < n_s; ++k) {
    const double t = sample_time(k, st.horizon, st.sample_dt);
    const double mean = sum[k] / n;
    const double var = std::max(0.0, (sum2[k] - n * mean * mean) / (n - 1.0));
    const double se = std::sqrt(var / n);
    rep.times.push_back(t);
    rep.mean_p_v.push_back(mean);
    rep.se_p_v.push_back(se);
    rep.extinct.push_back(fraction_by(t));
    if (rep.extinct.back().fraction < prev) rep.monotone = false;
    prev = rep.extinct.back().fraction;
    const double excess = mean - bound;
    if (excess > 4.0 * se + 1e-9 * std::max(1.0, bound)) rep.bound_ok = false;
    if (se > 0.0) {
      rep.max_excess_se = std::max(rep.max_excess_se, excess / se);
    } else if (excess > 0.0) {
      rep.max_excess_se = std::numeric_limits<double>::infinity();
    }
  }
  for (double t : st.extinction_times) {
    rep.extra_times.push_back(t);
    rep.extra_extinct.push_back(fraction_by(t));
  }
  return rep;
}

// ---------------------------------------------------------------------------

PersistenceReport run_persistence(const RunConfig& cfg) {
  const Grids grids = build_grids(cfg.domain, cfg.ide.grid);
  IdeOptions iopt;
  iopt.speedup = cfg.ide.speedup;
  const IdeOperator op(cfg.domain, cfg.params, grids, iopt);
  const double T = cfg.persistence.horizon;
  if (!(T > 0.0)) throw ConfigError("persistence.horizon: must be > 0");

  FieldState f = initial_fields(cfg.initial, grids, static_cast<double>(cfg.scaling.K),
                                cfg.scaling.lambda);
  const std::vector<double> g0 = f.g_v;
  std::vector<double> min_late(f.g_v.size(), std::numeric_limits<double>::infinity());
  auto track = [&](const FieldState& s) {
    if (s.t < 0.5 * T - 1e-12) return;
    for (std::size_t i = 0; i < s.g_v.size(); ++i) min_late[i] = std::min(min_late[i], s.g_v[i]);
  };
  // Integrate in unit chunks so the stability limit is refreshed as fields grow.
  const double chunk = std::min(1.0, T);
  while (f.t < T - 1e-12) {
    integrate(op, f, 1, std::min(T, f.t + chunk), cfg.ide.dt, 0.0, nullptr, track);
  }
  track(f);

  PersistenceReport rep;
  rep.horizon = T;
  const std::size_t nz = grids.n_traits();
  for (std::size_t x = 0; x < grids.n_plants; ++x) {
    for (std::size_t k = 0; k < nz; ++k) {
      PersistenceRow row;
      row.plant = x;
      row.trait_index = k;
      row.z = grids.trait_nodes[k];
      row.R = op.persistence_R(x, row.z, cfg.persistence.beta_eval);
      row.initial = g0[x * nz + k];
      row.min_late = min_late[x * nz + k];
      row.final = f.g_v[x * nz + k];
      row.persisted = row.initial > 0.0 && row.min_late >= row.initial;
      row.vanished = row.final < 1e-6;
      row.agree = row.R > 0.0 ? row.persisted : (row.R < 0.0 ? row.vanished : false);
      rep.rows.push_back(row);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Output.
// ---------------------------------------------------------------------------

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header)
    : out_(path), columns_(header.size()) {
  if (!out_) throw ConfigError("cannot open output file " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvWriter::sep() {
  if (in_row_ > 0) out_ << ',';
  ++in_row_;
}

CsvWriter& CsvWriter::operator<<(double v) {
  sep();
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out_ << buf;
  return *this;
}

CsvWriter& CsvWriter::operator<<(std::int64_t v) {
  sep();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::operator<<(std::size_t v) {
  sep();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::operator<<(const std::string& v) {
  sep();
  out_ << v;
  return *this;
}

void CsvWriter::end_row() {
  if (in_row_ != columns_) {
    throw NumericalError("csv row has " + std::to_string(in_row_) + " fields, expected " +
                         std::to_string(columns_));
  }
  out_ << '\n';
  in_row_ = 0;
  ++rows_;
}

std::vector<OutputFile> write_trajectory(const Trajectory& tr, const fs::path& dir,
                                         const std::string& suffix) {
  std::vector<OutputFile> files;
  const std::size_t n_e = tr.samples.empty() ? 0 : tr.samples[0].per_plant.size();
  std::vector<std::string> header{"t", "P_v", "N_v", "N_u", "N_c"};
  for (std::size_t x = 0; x < n_e; ++x) header.push_back("plant_" + std::to_string(x));
  const std::string traj_name = "trajectory" + suffix + ".csv";
  CsvWriter w(dir / traj_name, header);
  for (const auto& s : tr.samples) {
    w << s.t << s.p_v << s.n_v << s.n_u << s.n_c;
    for (auto c : s.per_plant) w << c;
    w.end_row();
  }
  files.push_back({traj_name, w.rows()});

  const std::string hist_name = "histogram" + suffix + ".csv";
  CsvWriter h(dir / hist_name, {"t", "bin_lo", "bin_hi", "count"});
  const double width = (tr.hist.hi - tr.hist.lo) / static_cast<double>(tr.hist.bins);
  for (const auto& s : tr.samples) {
    for (std::size_t b = 0; b < s.trait_hist.size(); ++b) {
      const double lo = tr.hist.lo + width * static_cast<double>(b);
      h << s.t << lo << (b + 1 == s.trait_hist.size() ? tr.hist.hi : lo + width)
        << s.trait_hist[b];
      h.end_row();
    }
  }
  files.push_back({hist_name, h.rows()});
  return files;
}

std::vector<OutputFile> write_convergence(const ConvergenceReport& rep, const fs::path& dir) {
  std::vector<OutputFile> files;
  for (const auto& row : rep.rows) {
    const std::string name = "convergence_K" + std::to_string(row.K) + ".csv";
    CsvWriter w(dir / name, {"t", "mean_virus_mass", "se_virus_mass", "ref_virus_mass",
                             "mean_vector_mass"});
    for (std::size_t k = 0; k < row.times.size(); ++k) {
      w << row.times[k] << row.mean_mass[k] << row.se_mass[k] << row.ref_mass[k]
        << row.mean_vector_mass[k];
      w.end_row();
    }
    files.push_back({name, w.rows()});
  }
  CsvWriter g(dir / "convergence_gaps.csv", {"K", "gap_virus_mass", "se_at_gap", "gap_per_plant",
                                             "gap_histogram", "replicates"});
  for (const auto& row : rep.rows) {
    g << row.K << row.gap_mass << row.se_at_gap << row.gap_per_plant << row.gap_histogram
      << row.replicates;
    g.end_row();
  }
  files.push_back({"convergence_gaps.csv", g.rows()});
  return files;
}

std::vector<OutputFile> write_extinction(const ExtinctionReport& rep, const fs::path& dir) {
  std::vector<OutputFile> files;
  CsvWriter w(dir / "extinction.csv", {"t", "mean_P_v", "se_P_v", "bound", "fraction_extinct",
                                       "ci_low", "ci_high"});
  const double bound = std::max(rep.f0, rep.x0);
  for (std::size_t k = 0; k < rep.times.size(); ++k) {
    w << rep.times[k] << rep.mean_p_v[k] << rep.se_p_v[k] << bound << rep.extinct[k].fraction
      << rep.extinct[k].ci_low << rep.extinct[k].ci_high;
    w.end_row();
  }
  files.push_back({"extinction.csv", w.rows()});
  if (!rep.extra_times.empty()) {
    CsvWriter e(dir / "extinction_times.csv", {"t", "fraction_extinct", "ci_low", "ci_high"});
    for (std::size_t i = 0; i < rep.extra_times.size(); ++i) {
      e << rep.extra_times[i] << rep.extra_extinct[i].fraction << rep.extra_extinct[i].ci_low
        << rep.extra_extinct[i].ci_high;
      e.end_row();
    }
    files.push_back({"extinction_times.csv", e.rows()});
  }
  return files;
}

std::vector<OutputFile> write_persistence(const PersistenceReport& rep, const fs::path& dir) {
  CsvWriter w(dir / "persistence.csv", {"plant", "trait_index", "z0", "z1", "R", "initial",
                                        "min_late", "final", "persisted", "vanished", "agree"});
  for (const auto& r : rep.rows) {
    w << r.plant << r.trait_index << r.z[0] << r.z[1] << r.R << r.initial << r.min_late << r.final
      << static_cast<std::int64_t>(r.persisted) << static_cast<std::int64_t>(r.vanished)
      << static_cast<std::int64_t>(r.agree);
    w.end_row();
  }
  return {{"persistence.csv", w.rows()}};
}

std::vector<OutputFile> write_ide(const IdeRun& run, const Grids& grids, const Domain& domain,
                                  int regime, const fs::path& dir) {
  std::vector<OutputFile> files;
  CsvWriter m(dir / "masses.csv", {"t", "virus_mass", "plant_virus_mass", "charged_mass",
                                   "vector_mass"});
  for (const auto& s : run.samples) {
    m << s.t << s.masses.virus_mass << s.masses.plant_virus_mass << s.masses.charged_mass
      << s.masses.vector_mass;
    m.end_row();
  }
  files.push_back({"masses.csv", m.rows()});

  const std::vector<std::string> header{"t", "index", "x", "y", "trait_node", "value"};
  const std::size_t nz = grids.n_traits();
  if (!run.fields.empty()) {
    CsvWriter gv(dir / "field_g_v.csv", header);
    CsvWriter gu(dir / "field_g_u.csv", header);
    CsvWriter gc(dir / "field_g_c.csv", header);
    for (const auto& f : run.fields) {
      for (std::size_t x = 0; x < grids.n_plants; ++x) {
        const Point2 p = domain.plants[x].position;
        for (std::size_t k = 0; k < nz; ++k) {
          gv << f.t << x << p.x << p.y << k << f.g_v[x * nz + k];
          gv.end_row();
        }
      }
      for (std::size_t c = 0; c < grids.n_cells(); ++c) {
        const Point2 p = grids.cell_center(c);
        gu << f.t << c << p.x << p.y << std::size_t{0} << f.g_u[c];
        gu.end_row();
        for (std::size_t k = 0; k < nz; ++k) {
          gc << f.t << c << p.x << p.y << k << f.g_c[c * nz + k];
          gc.end_row();
        }
      }
    }
    files.push_back({"field_g_v.csv", gv.rows()});
    files.push_back({"field_g_u.csv", gu.rows()});
    files.push_back({"field_g_c.csv", gc.rows()});
  }
  if (regime == 2) {
    CsvWriter e(dir / "elliptic_log.csv", {"t", "residual", "scale", "constraint", "decoupled"});
    for (std::size_t i = 0; i < run.elliptic.size(); ++i) {
      const auto& s = run.elliptic[i];
      // The first sample sits at t = 0 and has no step behind it.
      const double t = run.samples.at(std::min(i + 1, run.samples.size() - 1)).t;
      e << t << s.residual << s.scale << s.constraint << static_cast<std::int64_t>(s.decoupled);
      e.end_row();
    }
    files.push_back({"elliptic_log.csv", e.rows()});
  }
  return files;
}

OutputFile emit_outputs(const RunConfig& cfg, const std::vector<OutputFile>& files,
                        const json& summary, const fs::path& dir) {
  fs::create_directories(dir);
  json m;
  m["schema_version"] = kSchemaVersion;
  m["config_digest"] = config_digest(cfg.echo);
  m["config"] = cfg.echo;
  m["files"] = json::array();
  for (const auto& f : files) m["files"].push_back({{"name", f.name}, {"rows", f.rows}});
  m["summary"] = summary.is_null() ? json::object() : summary;
  m["notes"] = validate(cfg);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("cannot open " + (dir / "manifest.json").string());
  out << m.dump(2) << '\n';
  return {"manifest.json", 1};
}

json run_study(const RunConfig& cfg, StudyKind kind, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& st = cfg.study;
  std::vector<OutputFile> files;
  json summary;
  summary["study"] = to_string(kind);

  switch (kind) {
    case StudyKind::kSimulate: {
      const ScaledParams sp = cfg.scaled();
      std::uint64_t events = 0;
      json ext = json::array();
      for (std::size_t r = 0; r < st.replicates; ++r) {
        RandomStream init_rng(derive_seed(st.seed, r, 1));
        const ParticleState s0 = init_population(cfg.initial, cfg.domain, sp, init_rng);
        const Trajectory tr = simulate(cfg.domain, sp, s0, st.horizon, st.sample_dt,
                                       derive_seed(st.seed, r, 2), cfg.sim_options(),
                                       cfg.histogram());
        events += tr.events;
        ext.push_back(tr.extinction_time ? json(*tr.extinction_time) : json(nullptr));
        auto fs_r = write_trajectory(tr, dir, "_" + std::to_string(r));
        files.insert(files.end(), fs_r.begin(), fs_r.end());
      }
      summary["events"] = events;
      summary["extinction_time"] = ext;
      break;
    }
    case StudyKind::kIde1:
    case StudyKind::kIde2: {
      const int regime = kind == StudyKind::kIde1 ? 1 : 2;
      const Grids grids = build_grids(cfg.domain, cfg.ide.grid);
      IdeOptions iopt;
      iopt.speedup = cfg.ide.speedup;
      const IdeOperator op(cfg.domain, cfg.params, grids, iopt);
      const FieldState f0 = initial_fields(cfg.initial, grids, static_cast<double>(cfg.scaling.K),
                                           cfg.scaling.lambda);
      const IdeRun run = run_ide(op, f0, regime, st.horizon, st.sample_dt, cfg.ide.dt,
                                 cfg.histogram(), true);
      files = write_ide(run, grids, cfg.domain, regime, dir);
      summary["steps"] = run.steps;
      summary["clipped"] = run.diagnostics.clipped;
      summary["final_virus_mass"] = run.samples.back().masses.virus_mass;
      summary["final_vector_mass"] = run.samples.back().masses.vector_mass;
      break;
    }
    case StudyKind::kConvergence: {
      const ConvergenceReport rep = run_convergence(cfg);
      files = write_convergence(rep, dir);
      summary["regime"] = rep.regime;
      summary["competition_bound_ok"] = rep.competition_bound_ok;
      json rows = json::array();
      for (const auto& r : rep.rows) {
        rows.push_back({{"K", r.K}, {"gap_virus_mass", r.gap_mass}, {"se_at_gap", r.se_at_gap}});
      }
      summary["gaps"] = rows;
      break;
    }
    case StudyKind::kExtinction: {
      const ExtinctionReport rep = run_extinction(cfg);
      files = write_extinction(rep, dir);
      summary["f0"] = rep.f0;
      summary["x0"] = rep.x0;
      summary["bound_ok"] = rep.bound_ok;
      summary["max_excess_se"] = std::isfinite(rep.max_excess_se) ? json(rep.max_excess_se)
                                                                   : json(nullptr);
      summary["competition_bound_ok"] = rep.competition_bound_ok;
      summary["final_fraction_extinct"] = rep.extinct.back().fraction;
      summary["events"] = rep.events;
      break;
    }
    case StudyKind::kPersistence: {
      const PersistenceReport rep = run_persistence(cfg);
      files = write_persistence(rep, dir);
      std::size_t agree = 0;
      for (const auto& r : rep.rows) agree += r.agree ? 1 : 0;
      summary["nodes"] = rep.rows.size();
      summary["agree"] = agree;
      break;
    }
  }
  emit_outputs(cfg, files, summary, dir);
  return summary;
}

}  // namespace vbsim
