#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"
#include "vbsim/errors.hpp"
#include "vbsim/particle.hpp"

using namespace vbsim;

namespace {

Domain one_plant(int dim = 1) {
  DomainConfig c;
  c.plants.push_back({{0.5, 0.5}, 0});
  c.traits.dim = dim;
  if (dim == 2) c.traits.hi = {1.0, 1.0};
  return build_domain(c);
}

Domain two_plants() {
  DomainConfig c;
  c.plants = {{{0.3, 0.5}, 0}, {{0.7, 0.5}, 0}};
  return build_domain(c);
}

ModelParams constants(double b, double d, double c) {
  ModelParams p;
  p.birth = ConstantRate{b};
  p.natural_death = ConstantRate{d};
  p.competition = c;
  p.load.amplitude = 0.0;
  p.unload.amplitude = 0.0;
  return p;
}

// Vector-carrying parameters with every mechanism switched on.
ModelParams busy_params() {
  ModelParams p = constants(1.2, 0.8, 0.3);
  p.mutation_prob = 0.2;
  p.vector_death = ConstantRate{0.3};
  p.load = {2.0, 0.25, 0.5, ConstantRate{1.0}};
  p.unload = {1.5, 0.25};
  p.sigma_u = 0.4;
  p.sigma_c = 0.3;
  return p;
}

ParticleState busy_state(const Domain& d, const ScaledParams& sp, std::uint64_t seed) {
  InitialConfig ic;
  ic.viruses = {6, 4};
  ic.free_vectors = 8;
  ic.charged_vectors = 3;
  ic.charged_trait = UniformTrait{};
  RandomStream rng(seed);
  return init_population(ic, d, sp, rng);
}

}  // namespace

TEST(Init, CountsAndPlacement) {
  const Domain d = one_plant();
  const auto sp = rescale(constants(1, 1, 0), 1, 1.0);
  InitialConfig ic;
  ic.viruses = {10};
  ic.virus_trait = PointTrait{{0.3, 0.0}};
  ic.free_vectors = 5;
  RandomStream rng(1);
  const auto s = init_population(ic, d, sp, rng);
  EXPECT_EQ(s.n_v(), 10);
  EXPECT_EQ(s.n_u(), 5);
  EXPECT_EQ(s.n_c(), 0);
  EXPECT_EQ(s.per_plant_count[0], 10);
  for (const auto& v : s.viruses) EXPECT_EQ(v.trait[0], 0.3);
  for (const auto& f : s.free_vectors) EXPECT_TRUE(d.extent.contains_closed(f.pos));
  EXPECT_TRUE(s.counts_consistent());
}

TEST(Init, EmptyAndErrors) {
  const Domain d = one_plant();
  const auto sp = rescale(constants(1, 1, 0), 1, 1.0);
  InitialConfig ic;
  RandomStream rng(1);
  const auto s = init_population(ic, d, sp, rng);
  EXPECT_EQ(s.p_v(), 0);
  EXPECT_EQ(s.n_u(), 0);
  ic.charged_vectors = 2;
  EXPECT_THROW(init_population(ic, d, sp, rng), ConfigError);
  ic = {};
  ic.viruses = {-1};
  EXPECT_THROW(init_population(ic, d, sp, rng), ConfigError);
  ic.viruses = {1, 2};
  EXPECT_THROW(init_population(ic, d, sp, rng), ConfigError);
}

TEST(Init, MassModeUsesFloor) {
  const Domain d = one_plant();
  const auto sp = rescale(constants(1, 1, 0), 100, 0.5);
  InitialConfig ic;
  ic.mode = InitMode::kMass;
  ic.viruses = {0.257};
  ic.free_vectors = 1.55;
  RandomStream rng(1);
  const auto s = init_population(ic, d, sp, rng);
  EXPECT_EQ(s.n_v(), 25);
  EXPECT_EQ(s.n_u(), 15);
}

TEST(Rates, HandEnumeratedTable) {
  const Domain d = one_plant();
  ModelParams p = constants(1, 1, 1);
  p.mutation_prob = 0.25;
  const auto sp = rescale(p, 1, 1.0);
  RateContext ctx(d, sp);
  InitialConfig ic;
  ic.viruses = {3};
  RandomStream rng(1);
  const auto s = init_population(ic, d, sp, rng);
  const auto t = event_rates(s, ctx);
  EXPECT_DOUBLE_EQ(t.totals[0], 3 * 0.75);
  EXPECT_DOUBLE_EQ(t.totals[1], 3 * 0.25);
  EXPECT_DOUBLE_EQ(t.totals[2], 12.0);
  EXPECT_DOUBLE_EQ(t.totals[3] + t.totals[4] + t.totals[5], 0.0);
  EXPECT_DOUBLE_EQ(t.total(), 15.0);
}

TEST(Rates, EmptyAndSingleChargedVector) {
  const Domain d = one_plant();
  ModelParams p = constants(1, 1, 1);
  p.vector_death = ConstantRate{0.7};
  const auto sp = rescale(p, 1, 1.0);
  RateContext ctx(d, sp);
  ParticleState s;
  s.per_plant_count = {0};
  EXPECT_EQ(event_rates(s, ctx).total(), 0.0);
  s.charged_vectors.push_back({{0.1, 0.1}, {0.5, 0.0}, 0.0});
  const auto t = event_rates(s, ctx);
  EXPECT_DOUBLE_EQ(t.totals[5], 0.7);
  EXPECT_DOUBLE_EQ(t.total(), 0.7);
}

TEST(Rates, LoadAndUnloadSums) {
  const Domain d = two_plants();
  ModelParams p = constants(0, 0, 0);
  p.load = {2.0, 0.25, 1.0, ConstantRate{1.0}};
  p.unload = {1.5, 0.25};
  const auto sp = rescale(p, 4, 1.0);
  RateContext ctx(d, sp);
  ParticleState s;
  s.per_plant_count = {2, 0};
  s.viruses = {{0, {0.5, 0}}, {0, {0.5, 0}}};
  s.free_vectors = {{{0.35, 0.5}, 0}, {{0.9, 0.9}, 0}};
  s.charged_vectors = {{{0.5, 0.5}, {0.5, 0}, 0}};  // within reach of both plants
  const auto t = event_rates(s, ctx);
  // Each plant virus sees one nearby vector: (1/4) * 2 * (0.5 / 1.5).
  EXPECT_NEAR(t.totals[3], 2 * 0.25 * 2.0 * (0.5 / 1.5), 1e-14);
  EXPECT_NEAR(t.totals[4], 2 * 1.5, 1e-14);
}

TEST(Rates, JumpBoundDominatesExactTotal) {
  const Domain d = two_plants();
  const auto sp = rescale(busy_params(), 3, 0.7);
  RateContext ctx(d, sp);
  ParticleState empty;
  empty.per_plant_count = {0, 0};
  EXPECT_EQ(jump_rate_bound(empty, ctx), 0.0);
  RandomStream rng(99);
  for (int i = 0; i < 1000; ++i) {
    InitialConfig ic;
    ic.viruses = {static_cast<double>(rng.index(30)), static_cast<double>(rng.index(30))};
    ic.free_vectors = static_cast<double>(rng.index(20));
    ic.charged_vectors = static_cast<double>(rng.index(20));
    ic.charged_trait = UniformTrait{};
    const auto s = init_population(ic, d, sp, rng);
    ASSERT_GE(jump_rate_bound(s, ctx), event_rates(s, ctx).total());
  }
}

TEST(Rates, JumpBoundSingleVirus) {
  const Domain d = one_plant();
  ModelParams p = constants(1, 1, 1);
  p.vector_death = ConstantRate{1.0};
  p.load.amplitude = 1.0;
  p.unload.amplitude = 1.0;
  const auto sp = rescale(p, 1, 1.0);
  RateContext ctx(d, sp);
  ParticleState s;
  s.per_plant_count = {1};
  s.viruses = {{0, {0.5, 0}}};
  const double C = 2.0;  // twice the largest rescaled bound
  EXPECT_DOUBLE_EQ(jump_rate_bound(s, ctx), C * 1 * 2);
  EXPECT_GE(jump_rate_bound(s, ctx), event_rates(s, ctx).total());
}

TEST(Jumps, EventSigns) {
  const Domain d = two_plants();
  const auto sp = rescale(busy_params(), 1, 1.0);
  RandomStream rng(4);
  ParticleState s;
  s.per_plant_count = {1, 0};
  s.viruses = {{0, {0.25, 0}}};
  s.free_vectors = {{{0.3, 0.45}, 0}};

  execute_jump(s, Load{0, 0}, d, sp, rng);
  EXPECT_EQ(s.n_v(), 0);
  EXPECT_EQ(s.n_u(), 0);
  EXPECT_EQ(s.n_c(), 1);
  EXPECT_EQ(s.per_plant_count[0], 0);
  EXPECT_EQ(s.charged_vectors[0].trait[0], 0.25);

  execute_jump(s, Unload{0, 1}, d, sp, rng);
  EXPECT_EQ(s.n_v(), 1);
  EXPECT_EQ(s.n_c(), 0);
  EXPECT_EQ(s.n_u(), 1);
  EXPECT_EQ(s.viruses[0].trait[0], 0.25);
  EXPECT_EQ(s.per_plant_count[1], 1);

  execute_jump(s, Load{0, 0}, d, sp, rng);
  execute_jump(s, VectorVirusDeath{0}, d, sp, rng);
  EXPECT_EQ(s.n_u(), 1);
  EXPECT_EQ(s.n_c(), 0);
  EXPECT_EQ(s.n_v(), 0);

  s.viruses = {{1, {0.6, 0}}};
  s.per_plant_count = {0, 1};
  execute_jump(s, ClonalBirth{0}, d, sp, rng);
  execute_jump(s, MutantBirth{0}, d, sp, rng);
  EXPECT_EQ(s.n_v(), 3);
  EXPECT_EQ(s.viruses[1].trait, s.viruses[0].trait);
  EXPECT_EQ(s.viruses[2].plant, 1u);
  execute_jump(s, Death{1}, d, sp, rng);
  EXPECT_EQ(s.per_plant_count[1], 2);
  EXPECT_TRUE(s.counts_consistent());
}

TEST(Jumps, StaleIndexSurfaces) {
  const Domain d = one_plant();
  const auto sp = rescale(constants(1, 1, 0), 1, 1.0);
  RandomStream rng(4);
  ParticleState s;
  s.per_plant_count = {0};
  EXPECT_THROW(execute_jump(s, Death{0}, d, sp, rng), StaleIndexError);
  EXPECT_THROW(execute_jump(s, Unload{0, 0}, d, sp, rng), StaleIndexError);
  s.charged_vectors = {{{0.5, 0.5}, {0.5, 0}, 0}};
  EXPECT_THROW(execute_jump(s, Unload{0, 3}, d, sp, rng), StaleIndexError);
}

TEST(Diffusion, DegenerateAndReflection) {
  const Rect r{1.0, 1.0};
  RandomStream rng(1);
  const Point2 p{0.3, 0.8};
  EXPECT_EQ(diffuse(p, 5.0, {0, 0}, 0.0, 1.0, 1e-3, r, rng), p);
  // A single drift increment 0.9 + 0.3 folds back to 0.8.
  const Point2 q = diffuse({0.9, 0.5}, 0.3, {1.0, 0.0}, 0.0, 1.0, 1.0, r, rng);
  EXPECT_NEAR(q.x, 0.8, 1e-12);
  EXPECT_NEAR(q.y, 0.5, 1e-12);
  // Acceleration is a time change.
  const Point2 a = diffuse({0.1, 0.5}, 0.1, {1.0, 0.0}, 0.0, 3.0, 1e-3, r, rng);
  EXPECT_NEAR(a.x, 0.4, 1e-12);
}

TEST(Diffusion, StationaryLawIsUniform) {
  const Rect r{2.0, 1.0};
  RandomStream rng(2024);
  Point2 p{0.1, 0.9};
  const std::size_t n = 100000;
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    p = diffuse(p, 2.0, {0, 0}, 1.0, 1.0, 1e-3, r, rng);
    xs[i] = p.x;
    ys[i] = p.y;
  }
  EXPECT_LT(oracle::ks_statistic(xs, [](double v) { return v / 2.0; }),
            oracle::ks_critical_1pct(n));
  EXPECT_LT(oracle::ks_statistic(ys, [](double v) { return v; }), oracle::ks_critical_1pct(n));
}

TEST(Diffusion, StepDiffusionKeepsTraitsAndCounts) {
  const Domain d = two_plants();
  const auto sp = rescale(busy_params(), 1, 1.0);
  auto s = busy_state(d, sp, 3);
  const auto before = s;
  RandomStream rng(8);
  step_diffusion(s, 0.5, d, sp, 1e-3, rng);
  EXPECT_DOUBLE_EQ(s.t, 0.5);
  ASSERT_EQ(s.n_c(), before.n_c());
  for (std::size_t j = 0; j < s.charged_vectors.size(); ++j) {
    EXPECT_EQ(s.charged_vectors[j].trait, before.charged_vectors[j].trait);
    EXPECT_TRUE(d.extent.contains_closed(s.charged_vectors[j].pos));
  }
  EXPECT_EQ(s.viruses.size(), before.viruses.size());
}

TEST(Simulate, ZeroRatesGiveConstantTrajectory) {
  const Domain d = one_plant();
  ModelParams p = constants(0, 0, 0);
  p.sigma_u = p.sigma_c = 0.0;
  const auto sp = rescale(p, 1, 1.0);
  InitialConfig ic;
  ic.viruses = {7};
  ic.free_vectors = 3;
  RandomStream rng(1);
  const auto s0 = init_population(ic, d, sp, rng);
  const auto tr = simulate(d, sp, s0, 2.0, 0.25, 5);
  ASSERT_EQ(tr.samples.size(), 9u);
  for (const auto& s : tr.samples) {
    EXPECT_EQ(s.n_v, 7);
    EXPECT_EQ(s.n_u, 3);
    EXPECT_EQ(s.p_v, s.n_v + s.n_c);
  }
  EXPECT_EQ(tr.events, 0u);
  EXPECT_THROW(simulate(d, sp, s0, 0.0, 0.25, 5), ConfigError);
}

TEST(Simulate, SampleGrid) {
  EXPECT_EQ(sample_count(1.0, 0.1), 11u);
  EXPECT_EQ(sample_count(1.05, 0.1), 12u);
  EXPECT_DOUBLE_EQ(sample_time(11, 1.05, 0.1), 1.05);
  EXPECT_DOUBLE_EQ(sample_time(3, 1.0, 0.1), 0.30000000000000004);
}

TEST(Simulate, ConservationCacheAndAbsorption) {
  const Domain d = two_plants();
  const auto sp = rescale(busy_params(), 5, 1.0);
  Simulator sim(d, sp, busy_state(d, sp, 12), 77);
  const auto V = sim.state().n_u() + sim.state().n_c();
  std::uint64_t events = 0;
  bool extinct = false;
  while (events < 10000 && sim.state().t < 1e4) {
    if (!sim.step(1e4)) break;
    ++events;
    ASSERT_EQ(sim.state().n_u() + sim.state().n_c(), V);
    if (extinct) ASSERT_EQ(sim.state().p_v(), 0);
    extinct = sim.state().p_v() == 0;
  }
  EXPECT_TRUE(sim.state().counts_consistent());
  EXPECT_EQ(sim.events(), events);
}

TEST(Simulate, AbsorbingStateStaysEmpty) {
  const Domain d = two_plants();
  const auto sp = rescale(busy_params(), 1, 1.0);
  ParticleState s;
  s.per_plant_count = {0, 0};
  s.free_vectors = {{{0.3, 0.5}, 0.0}, {{0.7, 0.5}, 0.0}};
  const auto tr = simulate(d, sp, s, 5.0, 0.5, 3);
  for (const auto& x : tr.samples) EXPECT_EQ(x.p_v, 0);
  EXPECT_EQ(tr.events, 0u);
  ASSERT_TRUE(tr.extinction_time.has_value());
  EXPECT_EQ(*tr.extinction_time, 0.0);
}

TEST(Simulate, IndependentOfSamplingGrid) {
  const Domain d = two_plants();
  const auto sp = rescale(busy_params(), 3, 1.0);
  const auto s0 = busy_state(d, sp, 5);
  const auto a = simulate(d, sp, s0, 2.0, 0.1, 42);
  const auto b = simulate(d, sp, s0, 2.0, 0.5, 42);
  EXPECT_EQ(a.events, b.events);
  EXPECT_EQ(a.samples.back().per_plant, b.samples.back().per_plant);
  EXPECT_EQ(a.samples.back().trait_hist, b.samples.back().trait_hist);
  const auto c = simulate(d, sp, s0, 2.0, 0.1, 42);
  EXPECT_EQ(a.samples.back().per_plant, c.samples.back().per_plant);
  EXPECT_EQ(a.events, c.events);
}

TEST(Simulate, SnapshotInvariants) {
  const Domain d = two_plants();
  const auto sp = rescale(busy_params(), 2, 1.0);
  const auto tr = simulate(d, sp, busy_state(d, sp, 6), 3.0, 0.1, 9);
  for (const auto& s : tr.samples) {
    EXPECT_EQ(s.p_v, s.n_v + s.n_c);
    std::int64_t h = 0;
    for (auto c : s.trait_hist) h += c;
    EXPECT_EQ(h, s.p_v);
    EXPECT_TRUE(competition_lower_bound_holds(s));
  }
  for (std::size_t k = 1; k < tr.samples.size(); ++k) {
    EXPECT_GT(tr.samples[k].t, tr.samples[k - 1].t);
  }
}

TEST(Simulate, ObservablesExample) {
  ParticleState s;
  s.per_plant_count = {3};
  s.viruses = {{0, {0.1, 0}}, {0, {0.05, 0}}, {0, {0.95, 0}}};
  s.charged_vectors = {{{0.5, 0.5}, {0.5, 0}, 0}, {{0.5, 0.5}, {1.0, 0}, 0}};
  const auto o = observables(s, HistogramSpec{});
  EXPECT_EQ(o.p_v, 5);
  EXPECT_EQ(o.trait_hist.front(), 2);
  EXPECT_EQ(o.trait_hist.back(), 2);
  const auto e = observables(ParticleState{}, HistogramSpec{});
  EXPECT_EQ(e.p_v + e.n_u + e.n_c + e.n_v, 0);
}

TEST(Simulate, PopulationCap) {
  const Domain d = one_plant();
  const auto sp = rescale(constants(5, 0, 0), 1, 1.0);
  InitialConfig ic;
  ic.viruses = {10};
  RandomStream rng(1);
  SimOptions o;
  o.population_cap = 200;
  EXPECT_THROW(simulate(d, sp, init_population(ic, d, sp, rng), 10.0, 1.0, 1, o),
               PopulationCapExceeded);
}

TEST(Simulate, SchemesAgreeInLaw) {
  const Domain d = two_plants();
  const auto sp = rescale(busy_params(), 2, 1.0);
  SimOptions global;
  global.scheme = ThinningScheme::kGlobalBound;
  std::vector<std::int64_t> a, b;
  for (std::size_t r = 0; r < 1500; ++r) {
    const auto s0 = busy_state(d, sp, derive_seed(1, r, 1));
    a.push_back(simulate(d, sp, s0, 1.0, 1.0, derive_seed(1, r, 2)).samples.back().n_v);
    b.push_back(simulate(d, sp, s0, 1.0, 1.0, derive_seed(2, r, 2), global).samples.back().n_v);
  }
  EXPECT_GT(oracle::chi2_two_sample(a, b), 0.001);
}

TEST(Extinction, PureDeathAndMonotone) {
  const Domain d = one_plant();
  const auto sp = rescale(constants(0, 1, 0), 1, 1.0);
  InitialConfig ic;
  ic.viruses = {20};
  const auto e = extinction_probability(d, sp, ic, 20.0, 500, 3);
  EXPECT_EQ(e.fraction, 1.0);
  EXPECT_EQ(e.replicates, 500u);
  const auto z = extinction_probability(d, sp, ic, 1e-9, 50, 3);
  EXPECT_EQ(z.fraction, 0.0);
  double prev = 0.0;
  for (double T : {0.5, 1.0, 2.0, 3.0, 5.0}) {
    const auto f = extinction_probability(d, sp, ic, T, 300, 8);
    EXPECT_GE(f.fraction, prev);
    prev = f.fraction;
  }
}

TEST(Extinction, WilsonInterval) {
  const auto w = wilson_interval(0, 10);
  EXPECT_EQ(w.ci_low, 0.0);
  EXPECT_NEAR(w.ci_high, 0.2775327998628892, 1e-12);
  const auto h = wilson_interval(50, 100);
  EXPECT_NEAR(h.ci_low, 0.4038315303659956, 1e-12);
  EXPECT_NEAR(h.ci_high, 0.5961684696340044, 1e-12);
  EXPECT_THROW(wilson_interval(0, 0), ConfigError);
}
