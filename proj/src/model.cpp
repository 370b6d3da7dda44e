#include "vbsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "vbsim/errors.hpp"

namespace vbsim {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

const Trait& optimum_for(const GaussianPeak& g, int variety) {
  if (variety >= 0 && static_cast<std::size_t>(variety) < g.optimum.size()) {
    return g.optimum[static_cast<std::size_t>(variety)];
  }
  return g.optimum.front();
}

void check_trait(const TraitBox& box, const Trait& z) {
  if (!box.contains(z)) {
    std::ostringstream os;
    os << "trait (" << z[0];
    if (box.dim == 2) os << ", " << z[1];
    os << ") outside trait box";
    throw ConfigError(os.str());
  }
}

// Closest point of the box to z, and the farthest corner.
Trait project(const TraitBox& box, const Trait& z) {
  Trait p = z;
  for (int k = 0; k < box.dim; ++k) p[k] = std::clamp(z[k], box.lo[k], box.hi[k]);
  return p;
}

double farthest_corner_dist2(const TraitBox& box, const Trait& z) {
  double s = 0.0;
  for (int k = 0; k < box.dim; ++k) {
    const double a = std::max(std::abs(z[k] - box.lo[k]), std::abs(z[k] - box.hi[k]));
    s += a * a;
  }
  return s;
}

void validate_rate(const RateSpec& spec, const std::string& name) {
  std::visit(Overloaded{
                 [&](const ConstantRate& c) {
                   require(std::isfinite(c.value) && c.value >= 0.0,
                           name + ": constant value must be finite and >= 0");
                 },
                 [&](const GaussianPeak& g) {
                   require(std::isfinite(g.amplitude) && g.amplitude >= 0.0,
                           name + ": amplitude must be finite and >= 0");
                   require(std::isfinite(g.width) && g.width > 0.0, name + ": width must be > 0");
                   require(!g.optimum.empty(), name + ": optimum list is empty");
                 },
             },
             spec);
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

std::vector<Point2> Domain::plant_positions() const {
  std::vector<Point2> out;
  out.reserve(plants.size());
  for (const auto& p : plants) out.push_back(p.position);
  return out;
}

Domain build_domain(const DomainConfig& config) {
  require(std::isfinite(config.extent.width) && config.extent.width > 0.0 &&
              std::isfinite(config.extent.height) && config.extent.height > 0.0,
          "domain extents must be positive");
  require(config.traits.dim == 1 || config.traits.dim == 2, "trait dimension must be 1 or 2");
  require(config.traits.volume() > 0.0 && std::isfinite(config.traits.volume()),
          "trait box must have positive volume");

  Domain d;
  d.extent = config.extent;
  d.traits = config.traits;
  if (config.traits.dim == 1) {
    d.traits.lo[1] = 0.0;
    d.traits.hi[1] = 0.0;
  }

  if (config.lattice) {
    const auto& lat = *config.lattice;
    require(lat.nx >= 1 && lat.ny >= 1, "lattice needs at least one node per axis");
    auto axis = [](std::size_t n, double margin, double length, std::size_t i) {
      if (n == 1) return 0.5 * length;
      return margin + (length - 2.0 * margin) * static_cast<double>(i) /
                          static_cast<double>(n - 1);
    };
    for (std::size_t i = 0; i < lat.nx; ++i) {
      for (std::size_t j = 0; j < lat.ny; ++j) {
        d.plants.push_back({{axis(lat.nx, lat.margin, config.extent.width, i),
                             axis(lat.ny, lat.margin, config.extent.height, j)},
                            lat.variety});
      }
    }
  } else {
    d.plants = config.plants;
  }

  require(!d.plants.empty(), "plant list is empty");
  for (std::size_t i = 0; i < d.plants.size(); ++i) {
    const auto& p = d.plants[i].position;
    if (!d.extent.contains_open(p)) {
      std::ostringstream os;
      os << "plant " << i << " at (" << p.x << ", " << p.y
         << ") is not strictly inside the domain rectangle";
      throw ConfigError(os.str());
    }
    for (std::size_t j = 0; j < i; ++j) {
      require(!(d.plants[j].position == p), "plant positions must be pairwise distinct");
    }
  }
  return d;
}

void validate(const ModelParams& params, const Domain& domain) {
  validate_rate(params.birth, "rates.birth");
  validate_rate(params.natural_death, "rates.natural_death");
  validate_rate(params.vector_death, "rates.vector_death");
  validate_rate(params.load.modulation, "rates.load.modulation");
  require(std::isfinite(params.competition) && params.competition >= 0.0,
          "rates.competition must be finite and >= 0");
  require(params.mutation_prob >= 0.0 && params.mutation_prob <= 1.0,
          "rates.mutation_prob must lie in [0, 1]");
  if (const auto* k = std::get_if<TruncatedGaussianKernel>(&params.mutation_kernel)) {
    require(std::isfinite(k->width) && k->width > 0.0, "mutation kernel width must be > 0");
  }
  require(std::isfinite(params.load.amplitude) && params.load.amplitude >= 0.0,
          "rates.load.amplitude must be >= 0");
  require(params.load.radius > 0.0, "rates.load.radius must be > 0");
  require(params.load.half_saturation > 0.0, "rates.load.half_saturation must be > 0");
  require(std::isfinite(params.unload.amplitude) && params.unload.amplitude >= 0.0,
          "rates.unload.amplitude must be >= 0");
  require(params.unload.radius > 0.0, "rates.unload.radius must be > 0");
  require(std::isfinite(params.sigma_u) && params.sigma_u >= 0.0, "sigma_u must be >= 0");
  require(std::isfinite(params.sigma_c) && params.sigma_c >= 0.0, "sigma_c must be >= 0");
  for (const auto* a : {&params.drift_u, &params.drift_c}) {
    require(std::isfinite(a->x) && std::isfinite(a->y), "drift must be finite");
  }
  for (const auto* spec : {&params.birth}) {
    if (const auto* g = std::get_if<GaussianPeak>(spec)) {
      for (const auto& plant : domain.plants) {
        require(plant.variety >= 0, "plant variety labels must be non-negative");
        (void)optimum_for(*g, plant.variety);
      }
    }
  }
}

double eval_rate(const RateSpec& spec, const TraitBox& box, const Trait& z, int variety) {
  return std::visit(Overloaded{
                        [](const ConstantRate& c) { return c.value; },
                        [&](const GaussianPeak& g) {
                          const double r2 = box.dist2(z, optimum_for(g, variety));
                          return g.amplitude * std::exp(-r2 / (2.0 * g.width * g.width));
                        },
                    },
                    spec);
}

double rate_sup(const RateSpec& spec, const TraitBox& box) {
  return std::visit(Overloaded{
                        [](const ConstantRate& c) { return c.value; },
                        [&](const GaussianPeak& g) {
                          double best = 0.0;
                          for (const auto& opt : g.optimum) {
                            const double r2 = box.dist2(project(box, opt), opt);
                            best = std::max(best, std::exp(-r2 / (2.0 * g.width * g.width)));
                          }
                          return g.amplitude * best;
                        },
                    },
                    spec);
}

double rate_inf(const RateSpec& spec, const TraitBox& box) {
  return std::visit(Overloaded{
                        [](const ConstantRate& c) { return c.value; },
                        [&](const GaussianPeak& g) {
                          double worst = 1.0;
                          for (const auto& opt : g.optimum) {
                            const double r2 = farthest_corner_dist2(box, opt);
                            worst = std::min(worst, std::exp(-r2 / (2.0 * g.width * g.width)));
                          }
                          return g.amplitude * worst;
                        },
                    },
                    spec);
}

double eval_birth(const ModelParams& params, const Domain& domain, std::size_t plant,
                  const Trait& z) {
  check_trait(domain.traits, z);
  return eval_rate(params.birth, domain.traits, z, domain.plants.at(plant).variety);
}

double eval_death(const ModelParams& params, const Domain& domain, const Trait& z,
                  double n_on_plant) {
  if (!(n_on_plant >= 0.0)) throw ConfigError("eval_death: negative plant load");
  check_trait(domain.traits, z);
  return eval_rate(params.natural_death, domain.traits, z) + params.competition * n_on_plant;
}

double eval_load(const ModelParams& params, const Domain& domain, double /*t*/,
                 const Point2& y, std::size_t plant, double n_on_plant, const Trait& z) {
  if (!domain.extent.contains_closed(y)) throw ConfigError("eval_load: position outside domain");
  if (distance(y, domain.plants.at(plant).position) > params.load.radius) return 0.0;
  const double sat = saturation(n_on_plant, params.load.half_saturation);
  if (sat == 0.0) return 0.0;
  return params.load.amplitude * sat * eval_rate(params.load.modulation, domain.traits, z);
}

double eval_unload(const ModelParams& params, const Domain& domain, double /*t*/,
                   const Point2& y, std::size_t plant, const Trait& /*z*/) {
  if (!domain.extent.contains_closed(y)) {
    throw ConfigError("eval_unload: position outside domain");
  }
  if (distance(y, domain.plants.at(plant).position) > params.unload.radius) return 0.0;
  return params.unload.amplitude;
}

double eval_vector_death(const ModelParams& params, const Domain& domain, const Trait& z) {
  return eval_rate(params.vector_death, domain.traits, z);
}

double mutation_density(const ModelParams& params, const TraitBox& box, const Trait& parent,
                        const Trait& child) {
  if (!box.contains(child)) return 0.0;
  return std::visit(
      Overloaded{
          [&](const UniformKernel&) { return 1.0 / box.volume(); },
          [&](const TruncatedGaussianKernel& k) {
            double density = 1.0;
            for (int d = 0; d < box.dim; ++d) {
              const double u = (child[d] - parent[d]) / k.width;
              const double mass = std_normal_cdf((box.hi[d] - parent[d]) / k.width) -
                                  std_normal_cdf((box.lo[d] - parent[d]) / k.width);
              density *= std::exp(-0.5 * u * u) /
                         (k.width * std::sqrt(2.0 * std::numbers::pi) * mass);
            }
            return density;
          },
      },
      params.mutation_kernel);
}

Trait sample_uniform_trait(const TraitBox& box, RandomStream& rng) {
  Trait z{0.0, 0.0};
  for (int d = 0; d < box.dim; ++d) z[d] = rng.uniform(box.lo[d], box.hi[d]);
  return z;
}

Trait sample_mutant(const ModelParams& params, const TraitBox& box, const Trait& z,
                    RandomStream& rng) {
  constexpr int kMaxTries = 1'000'000;
  return std::visit(
      Overloaded{
          [&](const UniformKernel&) { return sample_uniform_trait(box, rng); },
          [&](const TruncatedGaussianKernel& k) {
            // The kernel is a product over coordinates, so each coordinate
            // is rejection-sampled against its own interval.
            Trait out{0.0, 0.0};
            for (int d = 0; d < box.dim; ++d) {
              int tries = 0;
              double v;
              do {
                if (++tries > kMaxTries) {
                  throw ConfigError("mutation kernel: rejection sampling exhausted its retry cap");
                }
                v = z[d] + k.width * rng.normal();
              } while (v < box.lo[d] || v > box.hi[d]);
              out[d] = v;
            }
            return out;
          },
      },
      params.mutation_kernel);
}

Bounds rate_bounds(const ModelParams& params, const Domain& domain) {
  Bounds b;
  const auto& box = domain.traits;
  b.b_bar = rate_sup(params.birth, box);
  b.d_bar = rate_sup(params.natural_death, box);
  b.d_hat = rate_inf(params.natural_death, box);
  b.gamma_bar = rate_sup(params.vector_death, box);

  const auto sites = domain.plant_positions();
  // Saturation N/(h+N) has supremum 1 over N >= 0.
  b.beta_pair = params.load.amplitude * rate_sup(params.load.modulation, box);
  b.eta_pair = params.unload.amplitude;
  b.beta_bar = b.beta_pair * static_cast<double>(max_disk_depth(sites, params.load.radius));
  b.eta_bar = b.eta_pair * static_cast<double>(max_disk_depth(sites, params.unload.radius));
  return b;
}

ScaledParams rescale(const ModelParams& params, std::int64_t K, double lambda,
                     LoadArgument load_argument) {
  if (K < 1) throw ConfigError("scaling.K must be >= 1");
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    std::ostringstream os;
    os << "scaling.lambda = " << lambda << " is outside (0, 1]";
    throw ConfigError(os.str());
  }
  ScaledParams s;
  s.base = params;
  s.K = K;
  s.lambda = lambda;
  s.load_argument = load_argument;
  const double k = static_cast<double>(K);
  s.beta_factor = std::pow(k, -lambda);
  s.competition = params.competition / k;
  s.acceleration = std::pow(k, 1.0 - lambda);
  s.eta_factor = s.acceleration;
  s.gamma_factor = s.acceleration;
  return s;
}

}  // namespace vbsim
