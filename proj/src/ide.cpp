#include "vbsim/ide.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
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

void axis_nodes(std::size_t n, double lo, double hi, std::vector<double>& x,
                std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  if (n == 1) {
    x[0] = 0.5 * (lo + hi);
    w[0] = hi - lo;
    return;
  }
  const double h = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = lo + h * static_cast<double>(i);
    w[i] = (i == 0 || i + 1 == n) ? 0.5 * h : h;
  }
}

using Stencil = IdeOperator::Stencil;

// Diffusion D * Laplacian minus upwind divergence of (a f), zero flux at walls.
Stencil transport_stencil(const Grids& g, double D, const Point2& a) {
  Stencil s(g.n_cells());
  const double cx = D / (g.dx * g.dx);
  const double cy = D / (g.dy * g.dy);
  const double ap_x = std::max(a.x, 0.0), am_x = std::min(a.x, 0.0);
  const double ap_y = std::max(a.y, 0.0), am_y = std::min(a.y, 0.0);
  for (std::size_t c = 0; c < g.n_cells(); ++c) {
    const std::size_t i = c % g.nx, j = c / g.nx;
    double diag = 0.0;
    auto& row = s[c];
    auto link = [&](std::size_t nb, double coef_diff, double to_nb, double to_self) {
      row.emplace_back(nb, coef_diff + to_nb);
      diag += -coef_diff + to_self;
    };
    // Right/top faces carry flux out, left/bottom faces carry flux in.
    if (i + 1 < g.nx) link(c + 1, cx, -am_x / g.dx, -ap_x / g.dx);
    if (i > 0) link(c - 1, cx, ap_x / g.dx, am_x / g.dx);
    if (j + 1 < g.ny) link(c + g.nx, cy, -am_y / g.dy, -ap_y / g.dy);
    if (j > 0) link(c - g.nx, cy, ap_y / g.dy, am_y / g.dy);
    row.emplace_back(c, diag);
  }
  return s;
}

void apply_stencil(const Stencil& s, const double* f, std::size_t stride, double scale,
                   double* out) {
  for (std::size_t c = 0; c < s.size(); ++c) {
    double acc = 0.0;
    for (const auto& [nb, v] : s[c]) acc += v * f[nb * stride];
    out[c * stride] += scale * acc;
  }
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

FieldState combine(const FieldState& f, double a, const FieldState& k) {
  FieldState out = f;
  axpy(out.g_v, a, k.g_v);
  axpy(out.g_u, a, k.g_u);
  axpy(out.g_c, a, k.g_c);
  return out;
}

}  // namespace

Grids build_grids(const Domain& domain, const GridResolution& res) {
  Grids g;
  g.box = domain.traits;
  g.rect = domain.extent;
  g.n_plants = domain.plant_count();
  g.nz = {res.trait_nodes[0], domain.traits.dim == 2 ? res.trait_nodes[1] : 1};
  for (int d = 0; d < domain.traits.dim; ++d) {
    const auto n = g.nz[static_cast<std::size_t>(d)];
    if (n == 0 || n == 2) {
      std::ostringstream os;
      os << "trait axis " << d << " has " << n << " nodes; need 1 or at least 3";
      throw ConfigError(os.str());
    }
  }
  if (res.nx < 3 || res.ny < 3) throw ConfigError("space grid needs at least 3 cells per axis");

  std::vector<double> x0, w0, x1{0.0}, w1{1.0};
  axis_nodes(g.nz[0], g.box.lo[0], g.box.hi[0], x0, w0);
  if (g.box.dim == 2) axis_nodes(g.nz[1], g.box.lo[1], g.box.hi[1], x1, w1);
  for (std::size_t b = 0; b < x1.size(); ++b) {
    for (std::size_t a = 0; a < x0.size(); ++a) {
      g.trait_nodes.push_back({x0[a], g.box.dim == 2 ? x1[b] : 0.0});
      g.weights.push_back(w0[a] * w1[b]);
    }
  }
  g.nx = res.nx;
  g.ny = res.ny;
  g.dx = g.rect.width / static_cast<double>(g.nx);
  g.dy = g.rect.height / static_cast<double>(g.ny);
  g.cell_area = g.dx * g.dy;
  return g;
}

FieldState zero_fields(const Grids& g) {
  FieldState f;
  f.g_v.assign(g.n_plants * g.n_traits(), 0.0);
  f.g_u.assign(g.n_cells(), 0.0);
  f.g_c.assign(g.n_cells() * g.n_traits(), 0.0);
  return f;
}

std::vector<double> trait_density(const TraitInit& init, const Grids& g) {
  const std::size_t nz = g.n_traits();
  std::vector<double> rho(nz, 0.0);
  std::visit(Overloaded{
                 [&](const PointTrait& p) {
                   std::size_t best = 0;
                   for (std::size_t k = 1; k < nz; ++k) {
                     if (g.box.dist2(g.trait_nodes[k], p.z) < g.box.dist2(g.trait_nodes[best], p.z))
                       best = k;
                   }
                   rho[best] = 1.0;
                 },
                 [&](const UniformTrait&) { std::fill(rho.begin(), rho.end(), 1.0); },
                 [&](const GaussianTrait& gt) {
                   for (std::size_t k = 0; k < nz; ++k) {
                     rho[k] = std::exp(-g.box.dist2(g.trait_nodes[k], gt.center) /
                                       (2.0 * gt.width * gt.width));
                   }
                 },
             },
             init);
  double mass = 0.0;
  for (std::size_t k = 0; k < nz; ++k) mass += g.weights[k] * rho[k];
  if (!(mass > 0.0)) throw ConfigError("initial trait law has no mass on the trait grid");
  for (double& r : rho) r /= mass;
  return rho;
}

FieldState initial_fields(const InitialConfig& init, const Grids& g, double K, double lambda) {
  FieldState f = zero_fields(g);
  const std::size_t nz = g.n_traits();
  const double kv = init.mode == InitMode::kMass ? 1.0 : K;
  const double ku = init.mode == InitMode::kMass ? 1.0 : std::pow(K, lambda);
  if (!init.viruses.empty() && init.viruses.size() != g.n_plants) {
    throw ConfigError("initial.viruses does not match the plant count");
  }
  const auto rho = trait_density(init.virus_trait, g);
  for (std::size_t x = 0; x < init.viruses.size(); ++x) {
    for (std::size_t k = 0; k < nz; ++k) f.g_v[x * nz + k] = init.viruses[x] / kv * rho[k];
  }
  const double area = g.rect.area();
  std::fill(f.g_u.begin(), f.g_u.end(), init.free_vectors / ku / area);
  if (init.charged_vectors > 0.0) {
    if (!init.charged_trait) {
      throw ConfigError("initial.charged_vectors requested without initial.charged_trait");
    }
    const auto rc = trait_density(*init.charged_trait, g);
    for (std::size_t c = 0; c < g.n_cells(); ++c) {
      for (std::size_t k = 0; k < nz; ++k) {
        f.g_c[c * nz + k] = init.charged_vectors / ku / area * rc[k];
      }
    }
  }
  return f;
}

std::vector<double> neumann_laplacian(std::span<const double> field, const Grids& g) {
  if (field.size() != g.n_cells()) {
    std::ostringstream os;
    os << "neumann_laplacian: field has " << field.size() << " entries, grid has "
       << g.n_cells();
    throw ConfigError(os.str());
  }
  std::vector<double> out(g.n_cells(), 0.0);
  const auto s = transport_stencil(g, 1.0, {0.0, 0.0});
  apply_stencil(s, field.data(), 1, 1.0, out.data());
  return out;
}

IdeOperator::IdeOperator(const Domain& domain, const ModelParams& params, const Grids& grids,
                         IdeOptions options)
    : domain_(&domain), params_(params), grids_(grids), options_(options) {
  if (grids_.n_plants != domain.plant_count()) {
    throw ConfigError("grids were built for a different plant set");
  }
  if (!(options_.speedup > 0.0)) throw ConfigError("ide.speedup must be > 0");
  const auto& g = grids_;
  const std::size_t nz = g.n_traits();

  auto cells_for = [&](const Point2& centre, double r) {
    std::vector<std::pair<std::size_t, double>> out;
    const auto i0 = static_cast<std::size_t>(std::max(0.0, std::floor((centre.x - r) / g.dx)));
    const auto j0 = static_cast<std::size_t>(std::max(0.0, std::floor((centre.y - r) / g.dy)));
    const auto i1 = std::min(g.nx - 1, static_cast<std::size_t>(std::floor((centre.x + r) / g.dx)));
    const auto j1 = std::min(g.ny - 1, static_cast<std::size_t>(std::floor((centre.y + r) / g.dy)));
    for (std::size_t j = j0; j <= j1; ++j) {
      for (std::size_t i = i0; i <= i1; ++i) {
        const double a = disk_box_overlap(centre, r, static_cast<double>(i) * g.dx,
                                          static_cast<double>(i + 1) * g.dx,
                                          static_cast<double>(j) * g.dy,
                                          static_cast<double>(j + 1) * g.dy);
        if (a > 0.0) out.emplace_back(j * g.nx + i, a);
      }
    }
    return out;
  };

  stencil_u_ = transport_stencil(g, 0.5 * params.sigma_u * params.sigma_u, params.drift_u);
  stencil_c_ = transport_stencil(g, 0.5 * params.sigma_c * params.sigma_c, params.drift_c);

  H_.assign(g.n_cells(), 0.0);
  for (const auto& plant : domain.plants) {
    load_cells_.push_back(cells_for(plant.position, params.load.radius));
    unload_cells_.push_back(cells_for(plant.position, params.unload.radius));
    for (const auto& [c, a] : unload_cells_.back()) {
      H_[c] += params.unload.amplitude * a / g.cell_area;
    }
  }

  birth_.resize(g.n_plants * nz);
  for (std::size_t x = 0; x < g.n_plants; ++x) {
    for (std::size_t k = 0; k < nz; ++k) {
      birth_[x * nz + k] =
          eval_rate(params.birth, g.box, g.trait_nodes[k], domain.plants[x].variety);
    }
  }
  death_.resize(nz);
  modulation_.resize(nz);
  gamma_.resize(nz);
  for (std::size_t k = 0; k < nz; ++k) {
    death_[k] = eval_rate(params.natural_death, g.box, g.trait_nodes[k]);
    modulation_[k] = eval_rate(params.load.modulation, g.box, g.trait_nodes[k]);
    gamma_[k] = eval_rate(params.vector_death, g.box, g.trait_nodes[k]);
  }

  mutation_.assign(nz * nz, 0.0);
  for (std::size_t kp = 0; kp < nz; ++kp) {
    double row = 0.0;
    for (std::size_t k = 0; k < nz; ++k) {
      const double m = mutation_density(params, g.box, g.trait_nodes[kp], g.trait_nodes[k]);
      mutation_[kp * nz + k] = m;
      row += g.weights[k] * m;
    }
    if (row > 0.0) {
      for (std::size_t k = 0; k < nz; ++k) mutation_[kp * nz + k] /= row;
    } else {
      // Kernel narrower than the trait grid: mutants stay on the parent node.
      mutation_[kp * nz + kp] = 1.0 / g.weights[kp];
    }
  }
}

std::vector<double> IdeOperator::mutation_term(std::span<const double> g, std::size_t plant) const {
  const std::size_t nz = grids_.n_traits();
  if (g.size() != nz) throw ConfigError("mutation_term: slice size does not match the trait grid");
  std::vector<double> out(nz, 0.0);
  const double mu = params_.mutation_prob;
  if (mu == 0.0) return out;
  for (std::size_t kp = 0; kp < nz; ++kp) {
    const double src = mu * grids_.weights[kp] * birth_[plant * nz + kp] * g[kp];
    if (src == 0.0) continue;
    for (std::size_t k = 0; k < nz; ++k) out[k] += src * mutation_[kp * nz + k];
  }
  return out;
}

IdeOperator::Coupling IdeOperator::coupling(const std::vector<double>& g_v,
                                            const std::vector<double>& g_u) const {
  const auto& g = grids_;
  const std::size_t nz = g.n_traits();
  Coupling cp;
  cp.V.assign(g.n_plants, 0.0);
  cp.sat.assign(g.n_plants, 0.0);
  cp.Gu.assign(g.n_plants, 0.0);
  cp.A.assign(g.n_cells() * nz, 0.0);
  cp.B.assign(g.n_cells(), 0.0);
  const double beta0 = params_.load.amplitude;
  for (std::size_t x = 0; x < g.n_plants; ++x) {
    double v = 0.0;
    for (std::size_t k = 0; k < nz; ++k) v += g.weights[k] * g_v[x * nz + k];
    cp.V[x] = v;
    cp.sat[x] = saturation(v, params_.load.half_saturation);
    double gu = 0.0;
    for (const auto& [c, a] : load_cells_[x]) gu += a * g_u[c];
    cp.Gu[x] = gu;
    if (beta0 == 0.0 || cp.sat[x] == 0.0) continue;
    for (const auto& [c, a] : load_cells_[x]) {
      const double f = beta0 * cp.sat[x] * a / g.cell_area;
      for (std::size_t k = 0; k < nz; ++k) {
        cp.A[c * nz + k] += f * modulation_[k] * g_v[x * nz + k];
      }
    }
  }
  for (std::size_t c = 0; c < g.n_cells(); ++c) {
    double b = 0.0;
    for (std::size_t k = 0; k < nz; ++k) b += g.weights[k] * cp.A[c * nz + k];
    cp.B[c] = b;
  }
  return cp;
}

void IdeOperator::virus_rhs(const std::vector<double>& g_v, const std::vector<double>& g_c,
                            const Coupling& cp, std::vector<double>& out) const {
  const auto& g = grids_;
  const std::size_t nz = g.n_traits();
  const double mu = params_.mutation_prob;
  const double beta0 = params_.load.amplitude;
  const double eta0 = params_.unload.amplitude;
  out.assign(g_v.size(), 0.0);
  for (std::size_t x = 0; x < g.n_plants; ++x) {
    const std::span<const double> slice(g_v.data() + x * nz, nz);
    const auto mut = mutation_term(slice, x);
    for (std::size_t k = 0; k < nz; ++k) {
      const double gv = slice[k];
      double r = (1.0 - mu) * birth_[x * nz + k] * gv + mut[k];
      r -= (death_[k] + params_.competition * cp.V[x]) * gv;
      r -= beta0 * cp.sat[x] * modulation_[k] * cp.Gu[x] * gv;
      if (eta0 != 0.0) {
        double src = 0.0;
        for (const auto& [c, a] : unload_cells_[x]) src += a * g_c[c * nz + k];
        r += eta0 * src;
      }
      out[x * nz + k] = r;
    }
  }
}

FieldState IdeOperator::rhs_regime1(const FieldState& f) const {
  const auto& g = grids_;
  const std::size_t nz = g.n_traits();
  const std::size_t nc = g.n_cells();
  if (f.g_v.size() != g.n_plants * nz || f.g_u.size() != nc || f.g_c.size() != nc * nz) {
    throw ConfigError("field sizes do not match the grids");
  }
  const Coupling cp = coupling(f.g_v, f.g_u);
  FieldState d;
  d.t = f.t;
  virus_rhs(f.g_v, f.g_c, cp, d.g_v);

  const double s = options_.speedup;
  const auto& su = stencil_u_;
  const auto& sc = stencil_c_;

  d.g_u.assign(nc, 0.0);
  d.g_c.assign(nc * nz, 0.0);
  apply_stencil(su, f.g_u.data(), 1, 1.0, d.g_u.data());
  for (std::size_t k = 0; k < nz; ++k) {
    apply_stencil(sc, f.g_c.data() + k, nz, 1.0, d.g_c.data() + k);
  }
  for (std::size_t c = 0; c < nc; ++c) {
    double back = 0.0;
    for (std::size_t k = 0; k < nz; ++k) {
      const double gc = f.g_c[c * nz + k];
      const double out_rate = H_[c] + gamma_[k];
      back += g.weights[k] * out_rate * gc;
      d.g_c[c * nz + k] += cp.A[c * nz + k] * f.g_u[c] - out_rate * gc;
      d.g_c[c * nz + k] *= s;
    }
    d.g_u[c] += -cp.B[c] * f.g_u[c] + back;
    d.g_u[c] *= s;
  }
  return d;
}

double IdeOperator::reaction_rate_bound(const FieldState& f, bool with_vectors) const {
  const auto& g = grids_;
  const std::size_t nz = g.n_traits();
  const Coupling cp = coupling(f.g_v, f.g_u);
  const double mu = params_.mutation_prob;
  double r = 0.0;
  double b_max = 0.0;
  for (double b : birth_) b_max = std::max(b_max, b);
  for (std::size_t x = 0; x < g.n_plants; ++x) {
    for (std::size_t k = 0; k < nz; ++k) {
      const double rate = birth_[x * nz + k] + mu * b_max + death_[k] +
                          params_.competition * cp.V[x] +
                          params_.load.amplitude * cp.sat[x] * modulation_[k] * cp.Gu[x];
      r = std::max(r, rate);
    }
  }
  if (with_vectors) {
    const double s = options_.speedup;
    const double adv_u = std::abs(params_.drift_u.x) / g.dx + std::abs(params_.drift_u.y) / g.dy;
    const double adv_c = std::abs(params_.drift_c.x) / g.dx + std::abs(params_.drift_c.y) / g.dy;
    double gmax = 0.0;
    for (double v : gamma_) gmax = std::max(gmax, v);
    for (std::size_t c = 0; c < g.n_cells(); ++c) {
      r = std::max(r, s * (cp.B[c] + adv_u));
      r = std::max(r, s * (H_[c] + gmax + adv_c));
    }
  }
  return r;
}

double IdeOperator::max_stable_dt(const FieldState& f) const {
  const auto& g = grids_;
  double dt = std::numeric_limits<double>::infinity();
  const double D = options_.speedup * 0.5 *
                   std::max(params_.sigma_u * params_.sigma_u, params_.sigma_c * params_.sigma_c);
  if (D > 0.0) {
    const double h = std::min(g.dx, g.dy);
    dt = std::min(dt, h * h / (4.0 * D));
  }
  const double r = reaction_rate_bound(f, true);
  if (r > 0.0) dt = std::min(dt, 1.0 / (2.0 * r));
  return dt;
}

void IdeOperator::clip(FieldState& f, StepDiagnostics* diag) const {
  StepDiagnostics local;
  auto pass = [&](std::vector<double>& v, const char* name) {
    for (double& x : v) {
      if (!std::isfinite(x)) {
        throw NumericalError(std::string("non-finite value in ") + name + " at t = " +
                             std::to_string(f.t));
      }
      local.min_before_clip = std::min(local.min_before_clip, x);
      if (x < 0.0) {
        if (x < -options_.clip_eps) {
          std::ostringstream os;
          os << "negative density " << x << " in " << name << " at t = " << f.t
             << "; reduce dt";
          throw NumericalError(os.str());
        }
        x = 0.0;
        ++local.clipped;
      }
    }
  };
  pass(f.g_v, "g_v");
  pass(f.g_u, "g_u");
  pass(f.g_c, "g_c");
  if (diag) {
    diag->min_before_clip = std::min(diag->min_before_clip, local.min_before_clip);
    diag->clipped += local.clipped;
  }
}

FieldState IdeOperator::step_regime1(const FieldState& f, double dt, StepDiagnostics* diag) const {
  if (!(dt > 0.0)) throw ConfigError("step_regime1: dt must be > 0");
  const double limit = max_stable_dt(f);
  if (dt > limit * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "dt = " << dt << " exceeds the stability limit " << limit << " at t = " << f.t;
    throw CflViolation(os.str());
  }
  const FieldState k1 = rhs_regime1(f);
  const FieldState k2 = rhs_regime1(combine(f, 0.5 * dt, k1));
  const FieldState k3 = rhs_regime1(combine(f, 0.5 * dt, k2));
  const FieldState k4 = rhs_regime1(combine(f, dt, k3));
  FieldState out = f;
  axpy(out.g_v, dt / 6.0, k1.g_v);
  axpy(out.g_v, dt / 3.0, k2.g_v);
  axpy(out.g_v, dt / 3.0, k3.g_v);
  axpy(out.g_v, dt / 6.0, k4.g_v);
  axpy(out.g_u, dt / 6.0, k1.g_u);
  axpy(out.g_u, dt / 3.0, k2.g_u);
  axpy(out.g_u, dt / 3.0, k3.g_u);
  axpy(out.g_u, dt / 6.0, k4.g_u);
  axpy(out.g_c, dt / 6.0, k1.g_c);
  axpy(out.g_c, dt / 3.0, k2.g_c);
  axpy(out.g_c, dt / 3.0, k3.g_c);
  axpy(out.g_c, dt / 6.0, k4.g_c);
  out.t = f.t + dt;
  clip(out, diag);
  return out;
}

EllipticSolution IdeOperator::solve_elliptic_vectors(const FieldState& f, double V_total) const {
  if (!(V_total > 0.0) || !std::isfinite(V_total)) {
    throw ConfigError("solve_elliptic_vectors: V_total must be finite and > 0");
  }
  const auto& g = grids_;
  const std::size_t nz = g.n_traits();
  const std::size_t nc = g.n_cells();
  const std::size_t n = nc * (1 + nz);
  const Coupling cp = coupling(f.g_v, f.g_u);
  const auto& su = stencil_u_;
  const auto& sc = stencil_c_;
  auto iu = [&](std::size_t c) { return c; };
  auto ic = [&](std::size_t c, std::size_t k) { return nc + c * nz + k; };

  // Trait slices with no way out of the charged state and no way in are
  // decoupled; their mass is carried over from the previous fields.
  std::vector<int> slice_kind(nz, 0);  // 0 regular, 1 decoupled
  for (std::size_t k = 0; k < nz; ++k) {
    bool no_exit = true, no_entry = true;
    for (std::size_t c = 0; c < nc; ++c) {
      if (H_[c] + gamma_[k] != 0.0) no_exit = false;
      if (cp.A[c * nz + k] != 0.0) no_entry = false;
    }
    if (no_exit && !no_entry) {
      throw NumericalError(
          "elliptic system has no stationary solution: charged vectors accumulate at a trait "
          "node with no unloading or loss");
    }
    if (no_exit) slice_kind[k] = 1;
  }

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n * 7);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  double decoupled_mass = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    if (c == 0) {
      for (std::size_t c2 = 0; c2 < nc; ++c2) {
        trip.emplace_back(0, iu(c2), g.cell_area);
        for (std::size_t k = 0; k < nz; ++k) {
          trip.emplace_back(0, ic(c2, k), g.cell_area * g.weights[k]);
        }
      }
      rhs[0] = V_total;
    } else {
      for (const auto& [nb, v] : su[c]) trip.emplace_back(iu(c), iu(nb), v);
      trip.emplace_back(iu(c), iu(c), -cp.B[c]);
      for (std::size_t k = 0; k < nz; ++k) {
        const double out_rate = H_[c] + gamma_[k];
        if (out_rate != 0.0) trip.emplace_back(iu(c), ic(c, k), g.weights[k] * out_rate);
      }
    }
    for (std::size_t k = 0; k < nz; ++k) {
      const auto row = ic(c, k);
      if (c == 0 && slice_kind[k] == 1) {
        double m = 0.0;
        for (std::size_t c2 = 0; c2 < nc; ++c2) {
          trip.emplace_back(row, ic(c2, k), g.cell_area);
          m += g.cell_area * f.g_c[c2 * nz + k];
        }
        rhs[static_cast<Eigen::Index>(row)] = m;
        decoupled_mass += g.weights[k] * m;
        continue;
      }
      for (const auto& [nb, v] : sc[c]) trip.emplace_back(row, ic(nb, k), v);
      const double a = cp.A[c * nz + k];
      if (a != 0.0) trip.emplace_back(row, iu(c), a);
      trip.emplace_back(row, row, -(H_[c] + gamma_[k]));
    }
  }
  if (decoupled_mass > V_total * (1.0 + 1e-12)) {
    throw NumericalError("carried-over charged mass exceeds the total vector mass");
  }

  Eigen::SparseMatrix<double> M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  M.setFromTriplets(trip.begin(), trip.end());
  M.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(M);
  if (lu.info() != Eigen::Success) {
    throw NumericalError("elliptic system is singular beyond the vector-mass direction: " +
                         lu.lastErrorMessage());
  }
  Eigen::VectorXd sol = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !sol.allFinite()) {
    throw NumericalError("elliptic solve failed");
  }

  EllipticSolution out;
  const Eigen::VectorXd r = M * sol - rhs;
  double row_max = 0.0;
  {
    Eigen::VectorXd rs = Eigen::VectorXd::Zero(M.rows());
    for (Eigen::Index j = 0; j < M.outerSize(); ++j) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(M, j); it; ++it) {
        rs[it.row()] += std::abs(it.value());
      }
    }
    row_max = rs.maxCoeff();
  }
  out.residual = r.lpNorm<Eigen::Infinity>();
  out.scale = row_max * sol.lpNorm<Eigen::Infinity>() + V_total;
  if (!(out.residual <= 1e-8 * out.scale)) {
    std::ostringstream os;
    os << "elliptic residual " << out.residual << " above tolerance (scale " << out.scale << ")";
    throw NumericalError(os.str());
  }
  const double neg_tol = 1e-9 * sol.lpNorm<Eigen::Infinity>();
  out.g_u.resize(nc);
  out.g_c.resize(nc * nz);
  for (std::size_t i = 0; i < n; ++i) {
    double v = sol[static_cast<Eigen::Index>(i)];
    if (v < 0.0) {
      if (v < -neg_tol) {
        std::ostringstream os;
        os << "elliptic solution has a negative entry " << v;
        throw NumericalError(os.str());
      }
      v = 0.0;
    }
    if (i < nc) {
      out.g_u[i] = v;
    } else {
      out.g_c[i - nc] = v;
    }
  }
  out.decoupled = std::any_of(slice_kind.begin(), slice_kind.end(), [](int s) { return s == 1; });
  double mass = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    mass += g.cell_area * out.g_u[c];
    for (std::size_t k = 0; k < nz; ++k) mass += g.cell_area * g.weights[k] * out.g_c[c * nz + k];
  }
  out.constraint = mass;
  return out;
}

FieldState IdeOperator::step_regime2(const FieldState& f, double dt, double V_total,
                                     EllipticSolution* solution, StepDiagnostics* diag) const {
  if (!(dt > 0.0)) throw ConfigError("step_regime2: dt must be > 0");
  EllipticSolution sol = solve_elliptic_vectors(f, V_total);
  FieldState frozen = f;
  frozen.g_u = sol.g_u;
  frozen.g_c = sol.g_c;
  const double r = reaction_rate_bound(frozen, false);
  if (r > 0.0 && dt > (1.0 + 1e-12) / (2.0 * r)) {
    std::ostringstream os;
    os << "dt = " << dt << " exceeds the reaction stability limit " << 1.0 / (2.0 * r);
    throw CflViolation(os.str());
  }
  auto rhs = [&](const std::vector<double>& gv) {
    std::vector<double> d;
    virus_rhs(gv, frozen.g_c, coupling(gv, frozen.g_u), d);
    return d;
  };
  auto shifted = [](const std::vector<double>& y, double a, const std::vector<double>& k) {
    std::vector<double> out = y;
    axpy(out, a, k);
    return out;
  };
  const auto k1 = rhs(f.g_v);
  const auto k2 = rhs(shifted(f.g_v, 0.5 * dt, k1));
  const auto k3 = rhs(shifted(f.g_v, 0.5 * dt, k2));
  const auto k4 = rhs(shifted(f.g_v, dt, k3));
  FieldState out = frozen;
  axpy(out.g_v, dt / 6.0, k1);
  axpy(out.g_v, dt / 3.0, k2);
  axpy(out.g_v, dt / 3.0, k3);
  axpy(out.g_v, dt / 6.0, k4);
  out.t = f.t + dt;
  clip(out, diag);
  if (solution) *solution = std::move(sol);
  return out;
}

MassTotals IdeOperator::mass_totals(const FieldState& f) const {
  const auto& g = grids_;
  const std::size_t nz = g.n_traits();
  MassTotals m;
  m.per_plant_mass.assign(g.n_plants, 0.0);
  for (std::size_t x = 0; x < g.n_plants && !f.g_v.empty(); ++x) {
    for (std::size_t k = 0; k < nz; ++k) m.per_plant_mass[x] += g.weights[k] * f.g_v[x * nz + k];
    m.plant_virus_mass += m.per_plant_mass[x];
  }
  for (std::size_t c = 0; c < g.n_cells(); ++c) {
    if (!f.g_u.empty()) m.vector_mass += g.cell_area * f.g_u[c];
    if (f.g_c.empty()) continue;
    for (std::size_t k = 0; k < nz; ++k) m.charged_mass += g.cell_area * g.weights[k] * f.g_c[c * nz + k];
  }
  m.vector_mass += m.charged_mass;
  m.virus_mass = m.plant_virus_mass + m.charged_mass;
  return m;
}

double IdeOperator::load_footprint(std::size_t plant) const {
  double s = 0.0;
  for (const auto& [c, a] : load_cells_.at(plant)) s += a;
  return s;
}

double IdeOperator::persistence_R(std::size_t plant, const Trait& z, BetaEval eval) const {
  const auto& p = params_;
  const Domain& d = *domain_;
  const double b = eval_birth(p, d, plant, z);
  const double death = eval_rate(p.natural_death, d.traits, z);
  const double n = eval == BetaEval::kAtZero ? 0.0 : 1.0;
  const double beta = p.load.amplitude * saturation(n, p.load.half_saturation) *
                      eval_rate(p.load.modulation, d.traits, z);
  return (1.0 - p.mutation_prob) * b - death - beta * load_footprint(plant);
}

}  // namespace vbsim
