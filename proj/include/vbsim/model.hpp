#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vbsim/geometry.hpp"
#include "vbsim/random.hpp"

namespace vbsim {

// ---------------------------------------------------------------------------
// Geometry of the system: field rectangle, host plants, trait space.
// ---------------------------------------------------------------------------

struct Plant {
  Point2 position;
  int variety = 0;
};

struct Domain {
  Rect extent;
  std::vector<Plant> plants;
  TraitBox traits;

  std::size_t plant_count() const { return plants.size(); }
  std::vector<Point2> plant_positions() const;
};

/// Regular nx-by-ny layout from `margin` to `extent - margin` on each axis.
/// A single node on an axis is placed at the centre.
struct PlantLattice {
  std::size_t nx = 1;
  std::size_t ny = 1;
  double margin = 0.0;
  int variety = 0;
};

struct DomainConfig {
  Rect extent;
  std::vector<Plant> plants;            // used when lattice is empty
  std::optional<PlantLattice> lattice;  // generator; takes precedence
  TraitBox traits;
};

/// Validates and materializes the plant layout. Throws ConfigError.
Domain build_domain(const DomainConfig& config);

// ---------------------------------------------------------------------------
// Parametric rate families.
// ---------------------------------------------------------------------------

struct ConstantRate {
  double value = 0.0;
};

/// amplitude * exp(-|z - optimum|^2 / (2 width^2)). `optimum` is indexed by
/// plant variety for plant-dependent rates; trait-only rates use entry 0.
struct GaussianPeak {
  double amplitude = 0.0;
  double width = 1.0;
  std::vector<Trait> optimum;
};

using RateSpec = std::variant<ConstantRate, GaussianPeak>;

struct UniformKernel {};

/// Gaussian of standard deviation `width` around the parent trait,
/// truncated to the trait box (renormalized).
struct TruncatedGaussianKernel {
  double width = 0.1;
};

using KernelSpec = std::variant<UniformKernel, TruncatedGaussianKernel>;

/// Vector loading at a plant: amplitude * N / (half_saturation + N) *
/// modulation(z) when the vector is within `radius` of the plant, else 0.
struct LoadSpec {
  double amplitude = 0.0;
  double radius = 0.1;
  double half_saturation = 1.0;
  RateSpec modulation = ConstantRate{1.0};
};

/// Vector unloading: amplitude within `radius` of the plant, else 0.
struct UnloadSpec {
  double amplitude = 0.0;
  double radius = 0.1;
};

struct ModelParams {
  RateSpec birth = ConstantRate{1.0};
  RateSpec natural_death = ConstantRate{1.0};
  double competition = 1.0;
  RateSpec vector_death = ConstantRate{0.0};
  double mutation_prob = 0.0;
  KernelSpec mutation_kernel = UniformKernel{};
  LoadSpec load;
  UnloadSpec unload;
  Point2 drift_u{0.0, 0.0};
  Point2 drift_c{0.0, 0.0};
  double sigma_u = 0.1;
  double sigma_c = 0.1;
};

/// Throws ConfigError when a parameter is outside its admissible range.
void validate(const ModelParams& params, const Domain& domain);

/// Evaluates a rate family at a trait. `variety` selects the optimum for
/// GaussianPeak (falls back to entry 0).
double eval_rate(const RateSpec& spec, const TraitBox& box, const Trait& z, int variety = 0);

double eval_birth(const ModelParams& params, const Domain& domain, std::size_t plant,
                  const Trait& z);

/// d(z) + competition * n_on_plant. `n_on_plant` may be a normalized mass.
double eval_death(const ModelParams& params, const Domain& domain, const Trait& z,
                  double n_on_plant);

/// Loading rate of a vector at `y` from `plant` carrying total load
/// `n_on_plant`, for a virus of trait `z`. Rates are autonomous; `t` is
/// accepted for interface stability and ignored.
double eval_load(const ModelParams& params, const Domain& domain, double t, const Point2& y,
                 std::size_t plant, double n_on_plant, const Trait& z);

double eval_unload(const ModelParams& params, const Domain& domain, double t,
                   const Point2& y, std::size_t plant, const Trait& z);

double eval_vector_death(const ModelParams& params, const Domain& domain, const Trait& z);

/// Michaelis-Menten saturation n / (h + n); 0 for n <= 0.
inline double saturation(double n, double half_saturation) {
  return n > 0.0 ? n / (half_saturation + n) : 0.0;
}

/// Density m(parent, child) of the mutation kernel on the trait box.
double mutation_density(const ModelParams& params, const TraitBox& box, const Trait& parent,
                        const Trait& child);

/// Draws a mutant trait from m(z, .). Throws ConfigError when rejection
/// sampling exhausts its retry cap (kernel mass inside the box too small).
Trait sample_mutant(const ModelParams& params, const TraitBox& box, const Trait& z,
                    RandomStream& rng);

/// Uniform draw in the trait box.
Trait sample_uniform_trait(const TraitBox& box, RandomStream& rng);

struct Bounds {
  double b_bar = 0.0;      // sup b
  double d_bar = 0.0;      // sup d
  double d_hat = 0.0;      // inf d
  double gamma_bar = 0.0;  // sup gamma
  double beta_bar = 0.0;   // sup over (y, N, z) of the plant-summed load rate
  double eta_bar = 0.0;    // sup over (y, z) of the plant-summed unload rate
  double beta_pair = 0.0;  // sup of a single (vector, plant) load rate
  double eta_pair = 0.0;   // sup of a single (vector, plant) unload rate
};

/// Closed-form suprema/infima of every rate family over the trait box, with
/// plant overlap counts for the plant-summed vector rates.
Bounds rate_bounds(const ModelParams& params, const Domain& domain);

/// Supremum / infimum of a rate family over the trait box (and varieties).
double rate_sup(const RateSpec& spec, const TraitBox& box);
double rate_inf(const RateSpec& spec, const TraitBox& box);

// ---------------------------------------------------------------------------
// Large-population scaling.
// ---------------------------------------------------------------------------

/// Which quantity is fed to the load saturation at finite K.
enum class LoadArgument {
  kNormalized,  // N_x / K, matching the per-plant mass of the limit equations
  kRaw,         // N_x as a raw count
};

struct ScaledParams {
  ModelParams base;
  std::int64_t K = 1;
  double lambda = 1.0;
  LoadArgument load_argument = LoadArgument::kNormalized;

  // Derived factors.
  double beta_factor = 1.0;    // K^-lambda
  double competition = 1.0;    // c / K
  double eta_factor = 1.0;     // K^(1-lambda)
  double gamma_factor = 1.0;   // K^(1-lambda)
  double acceleration = 1.0;   // K^(1-lambda), diffusion time change

  /// Argument passed to the load saturation for a raw plant count.
  double load_n(std::int64_t count) const {
    return load_argument == LoadArgument::kNormalized
               ? static_cast<double>(count) / static_cast<double>(K)
               : static_cast<double>(count);
  }
};

/// Applies the (K, lambda) rescaling. Throws ConfigError for K < 1 or
/// lambda outside (0, 1].
ScaledParams rescale(const ModelParams& params, std::int64_t K, double lambda,
                     LoadArgument load_argument = LoadArgument::kNormalized);

}  // namespace vbsim
