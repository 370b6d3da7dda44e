#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vbsim/model.hpp"
#include "vbsim/random.hpp"

namespace vbsim {

struct Virus {
  std::uint32_t plant = 0;
  Trait trait{0.0, 0.0};
};

/// Vectors are diffused lazily: `t_last` is the time their position refers to.
struct FreeVector {
  Point2 pos;
  double t_last = 0.0;
};

struct ChargedVector {
  Point2 pos;
  Trait trait{0.0, 0.0};
  double t_last = 0.0;
};

struct ParticleState {
  std::vector<Virus> viruses;
  std::vector<std::int64_t> per_plant_count;
  std::vector<FreeVector> free_vectors;
  std::vector<ChargedVector> charged_vectors;
  double t = 0.0;

  std::int64_t n_v() const { return static_cast<std::int64_t>(viruses.size()); }
  std::int64_t n_u() const { return static_cast<std::int64_t>(free_vectors.size()); }
  std::int64_t n_c() const { return static_cast<std::int64_t>(charged_vectors.size()); }
  std::int64_t p_v() const { return n_v() + n_c(); }

  /// Full recount of the per-plant cache.
  bool counts_consistent() const;
};

// ---------------------------------------------------------------------------
// Initial populations.
// ---------------------------------------------------------------------------

struct PointTrait {
  Trait z{0.5, 0.0};
};
struct UniformTrait {};
/// Normal around `center` truncated to the trait box.
struct GaussianTrait {
  Trait center{0.5, 0.0};
  double width = 0.1;
};
using TraitInit = std::variant<PointTrait, UniformTrait, GaussianTrait>;

Trait sample_trait(const TraitInit& init, const TraitBox& box, RandomStream& rng);

enum class InitMode {
  kCounts,  // entries are literal counts
  kMass,    // viruses: floor(K * mass); vectors: floor(K^lambda * mass)
};

struct InitialConfig {
  InitMode mode = InitMode::kCounts;
  std::vector<double> viruses;  // per plant
  TraitInit virus_trait = UniformTrait{};
  double free_vectors = 0.0;
  double charged_vectors = 0.0;
  std::optional<TraitInit> charged_trait;
};

/// Vectors are placed uniformly in the rectangle. Throws ConfigError.
ParticleState init_population(const InitialConfig& config, const Domain& domain,
                              const ScaledParams& sparams, RandomStream& rng);

// ---------------------------------------------------------------------------
// Events and rates.
// ---------------------------------------------------------------------------

struct ClonalBirth {
  std::size_t virus;
};
struct MutantBirth {
  std::size_t virus;
};
struct Death {
  std::size_t virus;
};
struct Load {
  std::size_t virus;
  std::size_t vector;  // free vector
};
struct Unload {
  std::size_t vector;  // charged vector
  std::size_t plant;
};
struct VectorVirusDeath {
  std::size_t vector;  // charged vector
};

using Event = std::variant<ClonalBirth, MutantBirth, Death, Load, Unload, VectorVirusDeath>;

enum class EventKind : int {
  kClonalBirth = 0,
  kMutantBirth,
  kDeath,
  kLoad,
  kUnload,
  kVectorVirusDeath,
};
inline constexpr std::size_t kEventKinds = 6;

EventKind kind_of(const Event& e);
const char* to_string(EventKind k);

/// Static pieces shared by every rate evaluation of one run.
struct RateContext {
  RateContext(const Domain& domain, const ScaledParams& sparams);

  const Domain* domain;
  const ScaledParams* sparams;
  Bounds bounds;
  SiteIndex load_index;
  SiteIndex unload_index;
  std::size_t unload_depth = 0;
  double modulation_sup = 0.0;
};

/// Exact event rates at the current positions, with enough detail to draw a
/// concrete event proportionally to its rate.
struct RateTable {
  std::array<double, kEventKinds> totals{};
  double total() const;

  // Per-item weights; index-aligned with the state's arrays.
  std::vector<double> birth;      // b(x_i, z_i)
  std::vector<double> death;      // d(z_i) + c_K N_{x_i}
  std::vector<double> load;       // sum_j beta_K(y_j, x_i, N_{x_i}, z_i)
  std::vector<double> unload;     // sum_x eta_K(y_j, x, z_j)
  std::vector<double> vv_death;   // gamma_K(z_j)
  std::vector<std::uint32_t> virus_plant;
  std::vector<std::vector<std::size_t>> vectors_near_plant;
  std::vector<std::vector<std::size_t>> plants_near_vector;
  double mutation_prob = 0.0;
};

/// Positions are taken as stored; call Simulator::sync_vectors first when
/// vectors have not been diffused to the current time.
RateTable event_rates(const ParticleState& state, const RateContext& ctx);

/// Draws an event with probability rate / total. Requires total > 0.
Event sample_event(const RateTable& table, RandomStream& rng);

/// C * M * (1 + M) with M the particle count and C twice the largest
/// rescaled rate bound.
double jump_rate_bound(const ParticleState& state, const RateContext& ctx);

/// Applies an event. Throws StaleIndexError on an invalid index.
void execute_jump(ParticleState& state, const Event& event, const Domain& domain,
                  const ScaledParams& sparams, RandomStream& rng);

// ---------------------------------------------------------------------------
// Vector motion.
// ---------------------------------------------------------------------------

/// Moves a point by the reflected diffusion over physical time `dt`. With zero
/// drift the Gaussian increment is drawn in one piece (the mirror fold makes
/// that exact); otherwise Euler-Maruyama sub-steps of effective length <= h_max.
Point2 diffuse(const Point2& p, double dt, const Point2& drift, double sigma,
               double acceleration, double h_max, const Rect& rect, RandomStream& rng);

/// Advances every vector by dt and moves the state clock.
void step_diffusion(ParticleState& state, double dt, const Domain& domain,
                    const ScaledParams& sparams, double h_max, RandomStream& rng);

// ---------------------------------------------------------------------------
// Simulation.
// ---------------------------------------------------------------------------

enum class ThinningScheme {
  kPerCategory,  // one dominating clock per event category, O(1) per candidate
  kGlobalBound,  // single clock at jump_rate_bound, exact rates at every candidate
};

struct SimOptions {
  double h_max = 1e-3;
  std::int64_t population_cap = 10'000'000;
  ThinningScheme scheme = ThinningScheme::kPerCategory;
};

class Simulator {
 public:
  Simulator(const Domain& domain, const ScaledParams& sparams, ParticleState state,
            std::uint64_t seed, SimOptions options = {});
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  /// Runs candidates until one is accepted at a time <= horizon. Returns the
  /// executed event, or nothing when the horizon was reached (state.t is then
  /// the horizon).
  std::optional<EventKind> step(double horizon);

  void advance_to(double t);

  /// Diffuses every lagging vector to the state time.
  void sync_vectors();

  const ParticleState& state() const { return state_; }
  const RateContext& context() const { return ctx_; }
  std::uint64_t events() const { return events_; }
  std::uint64_t candidates() const { return candidates_; }
  RandomStream& rng() { return rng_; }

 private:
  std::array<double, kEventKinds> category_bounds() const;
  bool try_candidate(std::size_t category, std::optional<Event>& out);
  bool try_global(std::optional<Event>& out);
  void sync_free(std::size_t j);
  void sync_charged(std::size_t j);
  void check_cap() const;

  const Domain* domain_;
  ScaledParams sparams_;
  RateContext ctx_;
  ParticleState state_;
  RandomStream rng_;
  SimOptions options_;
  double next_candidate_ = -1.0;  // < 0: must be redrawn
  std::uint64_t events_ = 0;
  std::uint64_t candidates_ = 0;
  std::vector<std::size_t> scratch_;
};

struct HistogramSpec {
  std::size_t bins = 8;
  double lo = 0.0;
  double hi = 1.0;
};

struct Snapshot {
  double t = 0.0;
  std::int64_t p_v = 0;
  std::int64_t n_v = 0;
  std::int64_t n_u = 0;
  std::int64_t n_c = 0;
  std::vector<std::int64_t> per_plant;
  std::vector<std::int64_t> trait_hist;  // viruses and carried viruses, trait axis 0
};

Snapshot observables(const ParticleState& state, const HistogramSpec& hist);

/// |E| * sum_x N_x^2 >= N_v^2, i.e. sum_i N_{x_i} >= N_v^2 / |E|.
bool competition_lower_bound_holds(const Snapshot& s);

struct Trajectory {
  std::vector<Snapshot> samples;
  HistogramSpec hist;
  std::uint64_t seed = 0;
  std::string params_digest;
  std::uint64_t events = 0;
  std::optional<double> extinction_time;
};

/// Samples at 0, dt, 2 dt, ... up to T (inclusive, last sample at T). Stops
/// drawing events once P_v = 0 and repeats the absorbed state.
Trajectory simulate(const Domain& domain, const ScaledParams& sparams,
                    const ParticleState& state0, double T, double sample_dt,
                    std::uint64_t seed, const SimOptions& options = {},
                    const HistogramSpec& hist = {});

/// Number of samples on the grid 0, dt, ..., T.
std::size_t sample_count(double T, double dt);
double sample_time(std::size_t k, double T, double dt);

struct ExtinctionEstimate {
  double fraction = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double ci_halfwidth = 0.0;
  std::size_t replicates = 0;
};

/// Wilson score interval at z = 1.96.
ExtinctionEstimate wilson_interval(std::size_t hits, std::size_t n);

/// Hitting time of P_v = 0 per replicate (infinity when still alive at T).
/// Replicate i uses derive_seed(seed, i).
std::vector<double> extinction_times(const Domain& domain, const ScaledParams& sparams,
                                     const InitialConfig& init, double T, std::size_t n_reps,
                                     std::uint64_t seed, const SimOptions& options = {});

ExtinctionEstimate extinction_probability(const Domain& domain, const ScaledParams& sparams,
                                          const InitialConfig& init, double T,
                                          std::size_t n_reps, std::uint64_t seed,
                                          const SimOptions& options = {});

/// Threshold |E| (b_bar - d_hat) / c + 2 V0 on the mean total virus count.
/// Throws ConfigError for c <= 0.
double mean_bound_x0(const Bounds& bounds, double competition, double V0, std::size_t E_size);

}  // namespace vbsim
