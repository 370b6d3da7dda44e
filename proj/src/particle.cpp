#include "vbsim/particle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
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

template <class T>
void swap_remove(std::vector<T>& v, std::size_t i) {
  if (i + 1 != v.size()) v[i] = v.back();
  v.pop_back();
}

std::size_t pick_weighted(const std::vector<double>& w, double total, RandomStream& rng) {
  double u = rng.uniform() * total;
  std::size_t last_positive = w.size();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    last_positive = i;
    if (u < w[i]) return i;
    u -= w[i];
  }
  // Round-off can leave u marginally above the last weight.
  if (last_positive == w.size()) throw NumericalError("pick_weighted: all weights are zero");
  return last_positive;
}

std::int64_t to_count(double value, InitMode mode, double scale, const char* what) {
  if (!(value >= 0.0) || !std::isfinite(value)) {
    throw ConfigError(std::string("initial.") + what + " must be finite and >= 0");
  }
  if (mode == InitMode::kMass) return static_cast<std::int64_t>(std::floor(scale * value));
  if (value != std::floor(value)) {
    throw ConfigError(std::string("initial.") + what + " must be an integer count");
  }
  return static_cast<std::int64_t>(value);
}

void require_index(std::size_t i, std::size_t n, const char* what) {
  if (i >= n) {
    std::ostringstream os;
    os << "stale " << what << " index " << i << " (size " << n << ")";
    throw StaleIndexError(os.str());
  }
}

}  // namespace

bool ParticleState::counts_consistent() const {
  std::vector<std::int64_t> recount(per_plant_count.size(), 0);
  for (const auto& v : viruses) {
    if (v.plant >= recount.size()) return false;
    ++recount[v.plant];
  }
  return recount == per_plant_count;
}

Trait sample_trait(const TraitInit& init, const TraitBox& box, RandomStream& rng) {
  return std::visit(
      Overloaded{
          [&](const PointTrait& p) {
            if (!box.contains(p.z)) throw ConfigError("initial trait lies outside the trait box");
            return p.z;
          },
          [&](const UniformTrait&) { return sample_uniform_trait(box, rng); },
          [&](const GaussianTrait& g) {
            if (!(g.width > 0.0)) throw ConfigError("initial trait width must be > 0");
            Trait out{0.0, 0.0};
            for (int d = 0; d < box.dim; ++d) {
              int tries = 0;
              double v;
              do {
                if (++tries > 1'000'000) {
                  throw ConfigError("initial trait: rejection sampling exhausted its retry cap");
                }
                v = g.center[d] + g.width * rng.normal();
              } while (v < box.lo[d] || v > box.hi[d]);
              out[d] = v;
            }
            return out;
          },
      },
      init);
}

ParticleState init_population(const InitialConfig& config, const Domain& domain,
                              const ScaledParams& sparams, RandomStream& rng) {
  const std::size_t n_plants = domain.plant_count();
  if (!config.viruses.empty() && config.viruses.size() != n_plants) {
    std::ostringstream os;
    os << "initial.viruses has " << config.viruses.size() << " entries for " << n_plants
       << " plants";
    throw ConfigError(os.str());
  }
  const double k_virus = static_cast<double>(sparams.K);
  const double k_vector = std::pow(static_cast<double>(sparams.K), sparams.lambda);

  ParticleState s;
  s.per_plant_count.assign(n_plants, 0);
  for (std::size_t x = 0; x < config.viruses.size(); ++x) {
    const auto n = to_count(config.viruses[x], config.mode, k_virus, "viruses");
    for (std::int64_t i = 0; i < n; ++i) {
      s.viruses.push_back(
          {static_cast<std::uint32_t>(x), sample_trait(config.virus_trait, domain.traits, rng)});
    }
    s.per_plant_count[x] = n;
  }

  const auto n_free = to_count(config.free_vectors, config.mode, k_vector, "free_vectors");
  const auto n_charged =
      to_count(config.charged_vectors, config.mode, k_vector, "charged_vectors");
  if (n_charged > 0 && !config.charged_trait) {
    throw ConfigError("initial.charged_vectors requested without initial.charged_trait");
  }
  auto place = [&]() {
    return Point2{rng.uniform(0.0, domain.extent.width), rng.uniform(0.0, domain.extent.height)};
  };
  for (std::int64_t j = 0; j < n_free; ++j) s.free_vectors.push_back({place(), 0.0});
  for (std::int64_t j = 0; j < n_charged; ++j) {
    const Point2 p = place();
    s.charged_vectors.push_back({p, sample_trait(*config.charged_trait, domain.traits, rng), 0.0});
  }
  return s;
}

EventKind kind_of(const Event& e) { return static_cast<EventKind>(e.index()); }

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::kClonalBirth: return "clonal_birth";
    case EventKind::kMutantBirth: return "mutant_birth";
    case EventKind::kDeath: return "death";
    case EventKind::kLoad: return "load";
    case EventKind::kUnload: return "unload";
    case EventKind::kVectorVirusDeath: return "vector_virus_death";
  }
  return "?";
}

RateContext::RateContext(const Domain& d, const ScaledParams& sp)
    : domain(&d), sparams(&sp), bounds(rate_bounds(sp.base, d)) {
  const auto sites = d.plant_positions();
  load_index = SiteIndex(d.extent, sites, sp.base.load.radius);
  unload_index = SiteIndex(d.extent, sites, sp.base.unload.radius);
  unload_depth = max_disk_depth(sites, sp.base.unload.radius);
  modulation_sup = rate_sup(sp.base.load.modulation, d.traits);
}

double RateTable::total() const {
  return std::accumulate(totals.begin(), totals.end(), 0.0);
}

RateTable event_rates(const ParticleState& state, const RateContext& ctx) {
  const Domain& dom = *ctx.domain;
  const ScaledParams& sp = *ctx.sparams;
  const ModelParams& p = sp.base;
  const std::size_t n_plants = dom.plant_count();

  RateTable t;
  t.mutation_prob = p.mutation_prob;
  t.vectors_near_plant.assign(n_plants, {});
  std::vector<std::size_t> hits;
  for (std::size_t j = 0; j < state.free_vectors.size(); ++j) {
    hits.clear();
    ctx.load_index.query(state.free_vectors[j].pos, hits);
    for (auto x : hits) t.vectors_near_plant[x].push_back(j);
  }
  std::vector<double> sat(n_plants);
  for (std::size_t x = 0; x < n_plants; ++x) {
    sat[x] = saturation(sp.load_n(state.per_plant_count[x]), p.load.half_saturation);
  }

  const std::size_t nv = state.viruses.size();
  t.birth.resize(nv);
  t.death.resize(nv);
  t.load.resize(nv);
  t.virus_plant.resize(nv);
  double sb = 0.0, sd = 0.0, sl = 0.0;
  for (std::size_t i = 0; i < nv; ++i) {
    const auto& v = state.viruses[i];
    const int variety = dom.plants[v.plant].variety;
    t.virus_plant[i] = v.plant;
    t.birth[i] = eval_rate(p.birth, dom.traits, v.trait, variety);
    t.death[i] = eval_rate(p.natural_death, dom.traits, v.trait) +
                 sp.competition * static_cast<double>(state.per_plant_count[v.plant]);
    const auto near = t.vectors_near_plant[v.plant].size();
    t.load[i] = near == 0 ? 0.0
                          : sp.beta_factor * p.load.amplitude * sat[v.plant] *
                                eval_rate(p.load.modulation, dom.traits, v.trait) *
                                static_cast<double>(near);
    sb += t.birth[i];
    sd += t.death[i];
    sl += t.load[i];
  }

  const std::size_t nc = state.charged_vectors.size();
  t.unload.resize(nc);
  t.vv_death.resize(nc);
  t.plants_near_vector.assign(nc, {});
  double su = 0.0, sg = 0.0;
  for (std::size_t j = 0; j < nc; ++j) {
    const auto& c = state.charged_vectors[j];
    ctx.unload_index.query(c.pos, t.plants_near_vector[j]);
    std::sort(t.plants_near_vector[j].begin(), t.plants_near_vector[j].end());
    t.unload[j] = sp.eta_factor * p.unload.amplitude *
                  static_cast<double>(t.plants_near_vector[j].size());
    t.vv_death[j] = sp.gamma_factor * eval_rate(p.vector_death, dom.traits, c.trait);
    su += t.unload[j];
    sg += t.vv_death[j];
  }

  t.totals[static_cast<int>(EventKind::kClonalBirth)] = (1.0 - p.mutation_prob) * sb;
  t.totals[static_cast<int>(EventKind::kMutantBirth)] = p.mutation_prob * sb;
  t.totals[static_cast<int>(EventKind::kDeath)] = sd;
  t.totals[static_cast<int>(EventKind::kLoad)] = sl;
  t.totals[static_cast<int>(EventKind::kUnload)] = su;
  t.totals[static_cast<int>(EventKind::kVectorVirusDeath)] = sg;
  return t;
}

Event sample_event(const RateTable& table, RandomStream& rng) {
  const double total = table.total();
  if (!(total > 0.0)) throw NumericalError("sample_event: total rate is zero");
  std::vector<double> cats(table.totals.begin(), table.totals.end());
  const auto kind = static_cast<EventKind>(pick_weighted(cats, total, rng));
  switch (kind) {
    case EventKind::kClonalBirth:
    case EventKind::kMutantBirth: {
      double sb = 0.0;
      for (double b : table.birth) sb += b;
      const auto i = pick_weighted(table.birth, sb, rng);
      if (kind == EventKind::kClonalBirth) return ClonalBirth{i};
      return MutantBirth{i};
    }
    case EventKind::kDeath:
      return Death{pick_weighted(table.death, table.totals[2], rng)};
    case EventKind::kLoad: {
      const auto i = pick_weighted(table.load, table.totals[3], rng);
      // Every vector inside the cutoff loads at the same rate.
      const auto& near = table.vectors_near_plant[table.virus_plant[i]];
      return Load{i, near[rng.index(near.size())]};
    }
    case EventKind::kUnload: {
      const auto j = pick_weighted(table.unload, table.totals[4], rng);
      const auto& near = table.plants_near_vector[j];
      return Unload{j, near[rng.index(near.size())]};
    }
    case EventKind::kVectorVirusDeath:
      return VectorVirusDeath{pick_weighted(table.vv_death, table.totals[5], rng)};
  }
  throw NumericalError("sample_event: unreachable");
}

double jump_rate_bound(const ParticleState& state, const RateContext& ctx) {
  const auto& b = ctx.bounds;
  const auto& sp = *ctx.sparams;
  const double c = 2.0 * std::max({b.b_bar, b.d_bar, sp.competition, sp.gamma_factor * b.gamma_bar,
                                   sp.beta_factor * b.beta_bar, sp.eta_factor * b.eta_bar});
  const double m = static_cast<double>(state.n_v() + state.n_u() + state.n_c());
  return c * m * (1.0 + m);
}

void execute_jump(ParticleState& s, const Event& event, const Domain& domain,
                  const ScaledParams& sparams, RandomStream& rng) {
  std::visit(
      Overloaded{
          [&](const ClonalBirth& e) {
            require_index(e.virus, s.viruses.size(), "virus");
            const Virus v = s.viruses[e.virus];
            s.viruses.push_back(v);
            ++s.per_plant_count[v.plant];
          },
          [&](const MutantBirth& e) {
            require_index(e.virus, s.viruses.size(), "virus");
            Virus v = s.viruses[e.virus];
            v.trait = sample_mutant(sparams.base, domain.traits, v.trait, rng);
            s.viruses.push_back(v);
            ++s.per_plant_count[v.plant];
          },
          [&](const Death& e) {
            require_index(e.virus, s.viruses.size(), "virus");
            --s.per_plant_count[s.viruses[e.virus].plant];
            swap_remove(s.viruses, e.virus);
          },
          [&](const Load& e) {
            require_index(e.virus, s.viruses.size(), "virus");
            require_index(e.vector, s.free_vectors.size(), "free vector");
            const Virus v = s.viruses[e.virus];
            const FreeVector f = s.free_vectors[e.vector];
            --s.per_plant_count[v.plant];
            swap_remove(s.viruses, e.virus);
            swap_remove(s.free_vectors, e.vector);
            s.charged_vectors.push_back({f.pos, v.trait, f.t_last});
          },
          [&](const Unload& e) {
            require_index(e.vector, s.charged_vectors.size(), "charged vector");
            require_index(e.plant, s.per_plant_count.size(), "plant");
            const ChargedVector c = s.charged_vectors[e.vector];
            swap_remove(s.charged_vectors, e.vector);
            s.free_vectors.push_back({c.pos, c.t_last});
            s.viruses.push_back({static_cast<std::uint32_t>(e.plant), c.trait});
            ++s.per_plant_count[e.plant];
          },
          [&](const VectorVirusDeath& e) {
            require_index(e.vector, s.charged_vectors.size(), "charged vector");
            const ChargedVector c = s.charged_vectors[e.vector];
            swap_remove(s.charged_vectors, e.vector);
            s.free_vectors.push_back({c.pos, c.t_last});
          },
      },
      event);
}

Point2 diffuse(const Point2& p, double dt, const Point2& drift, double sigma,
               double acceleration, double h_max, const Rect& rect, RandomStream& rng) {
  if (!(dt > 0.0)) return p;
  const double tau = acceleration * dt;
  if (drift.x == 0.0 && drift.y == 0.0) {
    if (sigma == 0.0) return p;
    const double s = sigma * std::sqrt(tau);
    const double dx = s * rng.normal();
    const double dy = s * rng.normal();
    return fold_into(Point2{p.x + dx, p.y + dy}, rect);
  }
  const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(tau / h_max)));
  const double h = tau / static_cast<double>(n);
  const double s = sigma * std::sqrt(h);
  Point2 q = p;
  for (std::size_t k = 0; k < n; ++k) {
    q.x += drift.x * h;
    q.y += drift.y * h;
    if (s != 0.0) {
      q.x += s * rng.normal();
      q.y += s * rng.normal();
    }
    q = fold_into(q, rect);
  }
  return q;
}

void step_diffusion(ParticleState& state, double dt, const Domain& domain,
                    const ScaledParams& sparams, double h_max, RandomStream& rng) {
  if (!(dt > 0.0)) throw ConfigError("step_diffusion: dt must be > 0");
  const double t1 = state.t + dt;
  const auto& p = sparams.base;
  for (auto& f : state.free_vectors) {
    f.pos = diffuse(f.pos, t1 - f.t_last, p.drift_u, p.sigma_u, sparams.acceleration, h_max,
                    domain.extent, rng);
    f.t_last = t1;
  }
  for (auto& c : state.charged_vectors) {
    c.pos = diffuse(c.pos, t1 - c.t_last, p.drift_c, p.sigma_c, sparams.acceleration, h_max,
                    domain.extent, rng);
    c.t_last = t1;
  }
  state.t = t1;
}

Simulator::Simulator(const Domain& domain, const ScaledParams& sparams, ParticleState state,
                     std::uint64_t seed, SimOptions options)
    : domain_(&domain),
      sparams_(sparams),
      ctx_(domain, sparams_),
      state_(std::move(state)),
      rng_(seed),
      options_(options) {
  if (state_.per_plant_count.size() != domain.plant_count()) {
    throw ConfigError("particle state does not match the plant count");
  }
  check_cap();
}

void Simulator::check_cap() const {
  const auto m = state_.n_v() + state_.n_u() + state_.n_c();
  if (m > options_.population_cap) {
    std::ostringstream os;
    os << "population cap exceeded: " << m << " particles > " << options_.population_cap
       << " at t = " << state_.t;
    throw PopulationCapExceeded(os.str());
  }
}

std::array<double, kEventKinds> Simulator::category_bounds() const {
  const auto& b = ctx_.bounds;
  const double nv = static_cast<double>(state_.n_v());
  const double nu = static_cast<double>(state_.n_u());
  const double nc = static_cast<double>(state_.n_c());
  return {
      b.b_bar * nv,
      b.d_bar * nv,
      sparams_.competition * nv * nv,
      sparams_.beta_factor * b.beta_pair * nv * nu,
      sparams_.eta_factor * b.eta_pair * static_cast<double>(ctx_.unload_depth) * nc,
      sparams_.gamma_factor * b.gamma_bar * nc,
  };
}

void Simulator::sync_free(std::size_t j) {
  auto& f = state_.free_vectors[j];
  const auto& p = sparams_.base;
  f.pos = diffuse(f.pos, state_.t - f.t_last, p.drift_u, p.sigma_u, sparams_.acceleration,
                  options_.h_max, domain_->extent, rng_);
  f.t_last = state_.t;
}

void Simulator::sync_charged(std::size_t j) {
  auto& c = state_.charged_vectors[j];
  const auto& p = sparams_.base;
  c.pos = diffuse(c.pos, state_.t - c.t_last, p.drift_c, p.sigma_c, sparams_.acceleration,
                  options_.h_max, domain_->extent, rng_);
  c.t_last = state_.t;
}

void Simulator::sync_vectors() {
  for (std::size_t j = 0; j < state_.free_vectors.size(); ++j) sync_free(j);
  for (std::size_t j = 0; j < state_.charged_vectors.size(); ++j) sync_charged(j);
}

bool Simulator::try_candidate(std::size_t category, std::optional<Event>& out) {
  const auto& p = sparams_.base;
  const auto& dom = *domain_;
  const auto& b = ctx_.bounds;
  switch (category) {
    case 0: {  // birth
      const auto i = rng_.index(state_.viruses.size());
      const auto& v = state_.viruses[i];
      const double rate = eval_rate(p.birth, dom.traits, v.trait, dom.plants[v.plant].variety);
      if (!(rng_.uniform() * b.b_bar < rate)) return false;
      if (rng_.bernoulli(p.mutation_prob)) {
        out = MutantBirth{i};
      } else {
        out = ClonalBirth{i};
      }
      return true;
    }
    case 1: {  // natural death
      const auto i = rng_.index(state_.viruses.size());
      const double rate = eval_rate(p.natural_death, dom.traits, state_.viruses[i].trait);
      if (!(rng_.uniform() * b.d_bar < rate)) return false;
      out = Death{i};
      return true;
    }
    case 2: {  // competition: pair (i, k) on the same plant kills i
      const auto n = state_.viruses.size();
      const auto i = rng_.index(n);
      const auto k = rng_.index(n);
      if (state_.viruses[i].plant != state_.viruses[k].plant) return false;
      out = Death{i};
      return true;
    }
    case 3: {  // load: pair (virus i, free vector j)
      const auto i = rng_.index(state_.viruses.size());
      const auto j = rng_.index(state_.free_vectors.size());
      sync_free(j);
      const auto& v = state_.viruses[i];
      const auto& plant = dom.plants[v.plant];
      if (distance(state_.free_vectors[j].pos, plant.position) > p.load.radius) return false;
      const double rate = p.load.amplitude *
                          saturation(sparams_.load_n(state_.per_plant_count[v.plant]),
                                     p.load.half_saturation) *
                          eval_rate(p.load.modulation, dom.traits, v.trait);
      if (!(rng_.uniform() * b.beta_pair < rate)) return false;
      out = Load{i, j};
      return true;
    }
    case 4: {  // unload
      const auto j = rng_.index(state_.charged_vectors.size());
      sync_charged(j);
      scratch_.clear();
      ctx_.unload_index.query(state_.charged_vectors[j].pos, scratch_);
      const auto depth = static_cast<double>(ctx_.unload_depth);
      if (!(rng_.uniform() * depth < static_cast<double>(scratch_.size()))) return false;
      std::sort(scratch_.begin(), scratch_.end());
      out = Unload{j, scratch_[rng_.index(scratch_.size())]};
      return true;
    }
    case 5: {  // virus loss on a vector
      const auto j = rng_.index(state_.charged_vectors.size());
      const double rate = eval_rate(p.vector_death, dom.traits, state_.charged_vectors[j].trait);
      if (!(rng_.uniform() * b.gamma_bar < rate)) return false;
      out = VectorVirusDeath{j};
      return true;
    }
    default:
      break;
  }
  return false;
}

bool Simulator::try_global(std::optional<Event>& out) {
  sync_vectors();
  const RateTable table = event_rates(state_, ctx_);
  const double bound = jump_rate_bound(state_, ctx_);
  const double total = table.total();
  if (total > bound * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "jump rate bound violated: total " << total << " > bound " << bound;
    throw NumericalError(os.str());
  }
  if (!(rng_.uniform() * bound < total)) return false;
  out = sample_event(table, rng_);
  return true;
}

std::optional<EventKind> Simulator::step(double horizon) {
  for (;;) {
    if (next_candidate_ < 0.0) {
      double rate;
      if (options_.scheme == ThinningScheme::kGlobalBound) {
        rate = jump_rate_bound(state_, ctx_);
      } else {
        const auto cats = category_bounds();
        rate = std::accumulate(cats.begin(), cats.end(), 0.0);
      }
      next_candidate_ = rate > 0.0 ? state_.t + rng_.exponential(rate)
                                   : std::numeric_limits<double>::infinity();
    }
    if (next_candidate_ > horizon) {
      if (horizon > state_.t) state_.t = horizon;
      return std::nullopt;
    }
    state_.t = next_candidate_;
    next_candidate_ = -1.0;
    ++candidates_;

    std::optional<Event> event;
    if (options_.scheme == ThinningScheme::kGlobalBound) {
      if (!try_global(event)) continue;
    } else {
      const auto cats = category_bounds();
      const double total = std::accumulate(cats.begin(), cats.end(), 0.0);
      double u = rng_.uniform() * total;
      std::size_t category = 0;
      for (; category + 1 < kEventKinds; ++category) {
        if (u < cats[category]) break;
        u -= cats[category];
      }
      while (cats[category] <= 0.0) --category;  // round-off at the top end
      if (!try_candidate(category, event)) continue;
    }
    const EventKind kind = kind_of(*event);
    execute_jump(state_, *event, *domain_, sparams_, rng_);
    ++events_;
    check_cap();
    return kind;
  }
}

void Simulator::advance_to(double t) {
  while (step(t)) {
  }
}

Snapshot observables(const ParticleState& state, const HistogramSpec& hist) {
  Snapshot s;
  s.t = state.t;
  s.n_v = state.n_v();
  s.n_u = state.n_u();
  s.n_c = state.n_c();
  s.p_v = s.n_v + s.n_c;
  s.per_plant = state.per_plant_count;
  s.trait_hist.assign(hist.bins, 0);
  if (hist.bins == 0) return s;
  const double width = hist.hi - hist.lo;
  auto bin = [&](const Trait& z) {
    const double f = (z[0] - hist.lo) / width * static_cast<double>(hist.bins);
    const auto b = static_cast<std::int64_t>(std::floor(f));
    return static_cast<std::size_t>(
        std::clamp<std::int64_t>(b, 0, static_cast<std::int64_t>(hist.bins) - 1));
  };
  for (const auto& v : state.viruses) ++s.trait_hist[bin(v.trait)];
  for (const auto& c : state.charged_vectors) ++s.trait_hist[bin(c.trait)];
  return s;
}

bool competition_lower_bound_holds(const Snapshot& s) {
  std::int64_t sum_sq = 0;
  for (auto n : s.per_plant) sum_sq += n * n;
  const auto e = static_cast<std::int64_t>(s.per_plant.size());
  return e * sum_sq >= s.n_v * s.n_v;
}

std::size_t sample_count(double T, double dt) {
  if (!(dt > 0.0)) throw ConfigError("sample_dt must be > 0");
  if (!(T >= 0.0)) throw ConfigError("horizon must be >= 0");
  const double r = T / dt;
  const auto n = static_cast<std::size_t>(std::floor(r + 1e-9));
  const bool exact = std::abs(r - static_cast<double>(n)) <= 1e-9 * std::max(1.0, r);
  return exact ? n + 1 : n + 2;
}

double sample_time(std::size_t k, double T, double dt) {
  return std::min(T, static_cast<double>(k) * dt);
}

Trajectory simulate(const Domain& domain, const ScaledParams& sparams,
                    const ParticleState& state0, double T, double sample_dt, std::uint64_t seed,
                    const SimOptions& options, const HistogramSpec& hist) {
  if (!(T > 0.0)) throw ConfigError("simulate: horizon must be > 0");
  Trajectory traj;
  traj.hist = hist;
  traj.seed = seed;
  Simulator sim(domain, sparams, state0, seed, options);
  if (state0.p_v() == 0) traj.extinction_time = state0.t;
  const std::size_t n = sample_count(T, sample_dt);
  traj.samples.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double tk = state0.t + sample_time(k, T, sample_dt);
    while (sim.step(tk)) {
      if (!traj.extinction_time && sim.state().p_v() == 0) traj.extinction_time = sim.state().t;
    }
    Snapshot s = observables(sim.state(), hist);
    s.t = tk;
    traj.samples.push_back(std::move(s));
  }
  traj.events = sim.events();
  return traj;
}

ExtinctionEstimate wilson_interval(std::size_t hits, std::size_t n) {
  if (n == 0) throw ConfigError("wilson_interval: n must be >= 1");
  constexpr double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(hits) / nn;
  const double denom = 1.0 + z * z / nn;
  const double centre = (p + z * z / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn));
  ExtinctionEstimate e;
  e.fraction = p;
  e.ci_low = std::max(0.0, centre - half);
  e.ci_high = std::min(1.0, centre + half);
  e.ci_halfwidth = half;
  e.replicates = n;
  return e;
}

std::vector<double> extinction_times(const Domain& domain, const ScaledParams& sparams,
                                     const InitialConfig& init, double T, std::size_t n_reps,
                                     std::uint64_t seed, const SimOptions& options) {
  if (n_reps < 1) throw ConfigError("replicate count must be >= 1");
  std::vector<double> out(n_reps, std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < n_reps; ++r) {
    RandomStream init_rng(derive_seed(seed, r, 1));
    ParticleState s0 = init_population(init, domain, sparams, init_rng);
    if (s0.p_v() == 0) {
      out[r] = 0.0;
      continue;
    }
    Simulator sim(domain, sparams, std::move(s0), derive_seed(seed, r, 2), options);
    while (sim.step(T)) {
      if (sim.state().p_v() == 0) {
        out[r] = sim.state().t;
        break;
      }
    }
  }
  return out;
}

ExtinctionEstimate extinction_probability(const Domain& domain, const ScaledParams& sparams,
                                          const InitialConfig& init, double T,
                                          std::size_t n_reps, std::uint64_t seed,
                                          const SimOptions& options) {
  const auto times = extinction_times(domain, sparams, init, T, n_reps, seed, options);
  std::size_t hits = 0;
  for (double t : times) hits += t <= T ? 1 : 0;
  return wilson_interval(hits, n_reps);
}

double mean_bound_x0(const Bounds& bounds, double competition, double V0, std::size_t E_size) {
  if (!(competition > 0.0)) throw ConfigError("mean_bound_x0: competition must be > 0");
  return static_cast<double>(E_size) * (bounds.b_bar - bounds.d_hat) / competition + 2.0 * V0;
}

}  // namespace vbsim
