#include "vbsim/config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "vbsim/errors.hpp"

namespace vbsim {

using nlohmann::json;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Read-only view on a JSON object that remembers its key path.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      (void)v;
      if (!ok.count(k)) fail(join(path_, k), "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return join(path_, key); }
  Node child(const char* key) const { return Node(j_.at(key), join(path_, key)); }

  double num(const char* key, double def) const { return has(key) ? num(key) : def; }
  double num(const char* key) const {
    if (!has(key)) fail(path(key), "missing required key");
    const auto& v = j_.at(key);
    if (!v.is_number()) fail(path(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(path(key), "must be finite");
    return d;
  }
  std::int64_t integer(const char* key, std::int64_t def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) fail(path(key), "expected an integer");
    return v.get<std::int64_t>();
  }
  std::uint64_t uinteger(const char* key, std::uint64_t def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      fail(path(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  std::string str(const char* key, const std::string& def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_string()) fail(path(key), "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& j_;
  std::string path_;
};

Trait parse_trait(const json& j, const std::string& path, int dim) {
  Trait z{0.0, 0.0};
  if (j.is_number()) {
    if (dim != 1) fail(path, "expected " + std::to_string(dim) + " coordinates");
    z[0] = j.get<double>();
    return z;
  }
  if (!j.is_array() || j.size() != static_cast<std::size_t>(dim)) {
    fail(path, "expected " + std::to_string(dim) + " coordinates");
  }
  for (int d = 0; d < dim; ++d) {
    if (!j[static_cast<std::size_t>(d)].is_number()) fail(path, "coordinates must be numbers");
    z[static_cast<std::size_t>(d)] = j[static_cast<std::size_t>(d)].get<double>();
  }
  return z;
}

json trait_json(const Trait& z, int dim) {
  if (dim == 1) return json::array({z[0]});
  return json::array({z[0], z[1]});
}

Point2 parse_point(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    fail(path, "expected [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

RateSpec parse_rate(const json& j, const std::string& path, int dim) {
  if (j.is_number()) return ConstantRate{j.get<double>()};
  Node n(j, path);
  const auto family = n.str("family", "constant");
  if (family == "constant") {
    n.allow({"family", "value"});
    return ConstantRate{n.num("value")};
  }
  if (family == "gaussian_peak") {
    n.allow({"family", "amplitude", "width", "optimum"});
    GaussianPeak g;
    g.amplitude = n.num("amplitude");
    g.width = n.num("width");
    if (!(g.width > 0.0)) fail(n.path("width"), "must be > 0");
    if (!n.has("optimum")) fail(n.path("optimum"), "missing required key");
    const auto& opt = n.raw("optimum");
    // A single trait, or one trait per plant variety.
    const bool per_variety =
        opt.is_array() && !opt.empty() && (opt[0].is_array() || dim == 1);
    if (per_variety) {
      for (std::size_t i = 0; i < opt.size(); ++i) {
        g.optimum.push_back(
            parse_trait(opt[i], n.path("optimum") + "[" + std::to_string(i) + "]", dim));
      }
    } else {
      g.optimum.push_back(parse_trait(opt, n.path("optimum"), dim));
    }
    return g;
  }
  fail(n.path("family"), "unknown rate family '" + family + "'");
}

json rate_json(const RateSpec& r, int dim) {
  return std::visit(Overloaded{
                        [](const ConstantRate& c) -> json {
                          return {{"family", "constant"}, {"value", c.value}};
                        },
                        [&](const GaussianPeak& g) -> json {
                          json opt = json::array();
                          for (const auto& z : g.optimum) opt.push_back(trait_json(z, dim));
                          return {{"family", "gaussian_peak"},
                                  {"amplitude", g.amplitude},
                                  {"width", g.width},
                                  {"optimum", opt}};
                        },
                    },
                    r);
}

TraitInit parse_trait_init(const json& j, const std::string& path, int dim) {
  Node n(j, path);
  const auto kind = n.str("kind", "uniform");
  if (kind == "uniform") {
    n.allow({"kind"});
    return UniformTrait{};
  }
  if (kind == "point") {
    n.allow({"kind", "z"});
    if (!n.has("z")) fail(n.path("z"), "missing required key");
    return PointTrait{parse_trait(n.raw("z"), n.path("z"), dim)};
  }
  if (kind == "gaussian") {
    n.allow({"kind", "center", "width"});
    if (!n.has("center")) fail(n.path("center"), "missing required key");
    GaussianTrait g{parse_trait(n.raw("center"), n.path("center"), dim), n.num("width")};
    if (!(g.width > 0.0)) fail(n.path("width"), "must be > 0");
    return g;
  }
  fail(n.path("kind"), "unknown trait law '" + kind + "'");
}

json trait_init_json(const TraitInit& t, int dim) {
  return std::visit(Overloaded{
                        [](const UniformTrait&) -> json { return {{"kind", "uniform"}}; },
                        [&](const PointTrait& p) -> json {
                          return {{"kind", "point"}, {"z", trait_json(p.z, dim)}};
                        },
                        [&](const GaussianTrait& g) -> json {
                          return {{"kind", "gaussian"},
                                  {"center", trait_json(g.center, dim)},
                                  {"width", g.width}};
                        },
                    },
                    t);
}

std::vector<double> num_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) fail(path, "expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

const char* to_string(StudyKind k) {
  switch (k) {
    case StudyKind::kSimulate: return "simulate";
    case StudyKind::kIde1: return "ide1";
    case StudyKind::kIde2: return "ide2";
    case StudyKind::kConvergence: return "convergence";
    case StudyKind::kExtinction: return "extinction";
    case StudyKind::kPersistence: return "persistence";
  }
  return "?";
}

StudyKind parse_study_kind(const std::string& s) {
  for (auto k : {StudyKind::kSimulate, StudyKind::kIde1, StudyKind::kIde2,
                 StudyKind::kConvergence, StudyKind::kExtinction, StudyKind::kPersistence}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("study.kind: unknown study '" + s + "'");
}

ScaledParams RunConfig::scaled(std::int64_t K) const {
  return rescale(params, K, scaling.lambda, scaling.load_argument);
}

SimOptions RunConfig::sim_options() const {
  SimOptions o;
  o.h_max = simulation.h_max;
  o.population_cap = simulation.population_cap;
  o.scheme = simulation.scheme;
  return o;
}

HistogramSpec RunConfig::histogram() const {
  return {simulation.histogram_bins, domain.traits.lo[0], domain.traits.hi[0]};
}

RunConfig parse_config_json(const json& j) {
  Node root(j, "");
  root.allow({"schema_version", "domain", "traits", "rates", "scaling", "initial", "simulation",
              "ide", "persistence", "study"});
  if (!root.has("schema_version")) fail("schema_version", "missing required key");
  if (!root.raw("schema_version").is_number_integer() ||
      root.raw("schema_version").get<int>() != kSchemaVersion) {
    fail("schema_version", "unsupported schema version (expected " +
                               std::to_string(kSchemaVersion) + ")");
  }

  RunConfig rc;
  const json empty = json::object();
  auto section = [&](const char* key) {
    return root.has(key) ? root.child(key) : Node(empty, key);
  };

  // traits
  {
    Node t = section("traits");
    t.allow({"dim", "lo", "hi"});
    auto& box = rc.domain_config.traits;
    box.dim = static_cast<int>(t.integer("dim", 1));
    if (box.dim != 1 && box.dim != 2) fail(t.path("dim"), "must be 1 or 2");
    box.lo = t.has("lo") ? parse_trait(t.raw("lo"), t.path("lo"), box.dim) : Trait{0.0, 0.0};
    box.hi = t.has("hi") ? parse_trait(t.raw("hi"), t.path("hi"), box.dim)
                         : Trait{1.0, box.dim == 2 ? 1.0 : 0.0};
    for (int d = 0; d < box.dim; ++d) {
      if (!(box.hi[d] > box.lo[d])) fail(t.path("hi"), "trait box must have positive volume");
    }
  }
  const int dim = rc.domain_config.traits.dim;

  // domain
  {
    if (!root.has("domain")) fail("domain", "missing required section");
    Node d = root.child("domain");
    d.allow({"width", "height", "plants", "lattice"});
    rc.domain_config.extent = {d.num("width", 1.0), d.num("height", 1.0)};
    if (d.has("lattice")) {
      Node l = d.child("lattice");
      l.allow({"nx", "ny", "margin", "variety"});
      PlantLattice lat;
      const auto nx = l.integer("nx", 1), ny = l.integer("ny", 1);
      if (nx < 1 || ny < 1) fail(l.path("nx"), "lattice needs at least one node per axis");
      lat.nx = static_cast<std::size_t>(nx);
      lat.ny = static_cast<std::size_t>(ny);
      lat.margin = l.num("margin", 0.0);
      lat.variety = static_cast<int>(l.integer("variety", 0));
      rc.domain_config.lattice = lat;
    }
    if (d.has("plants")) {
      const auto& arr = d.raw("plants");
      if (!arr.is_array()) fail(d.path("plants"), "expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Node p(arr[i], d.path("plants") + "[" + std::to_string(i) + "]");
        p.allow({"x", "y", "variety"});
        rc.domain_config.plants.push_back(
            {{p.num("x"), p.num("y")}, static_cast<int>(p.integer("variety", 0))});
      }
    }
    if (!d.has("plants") && !d.has("lattice")) fail("domain", "needs 'plants' or 'lattice'");
    rc.domain = build_domain(rc.domain_config);
  }

  // rates
  {
    Node r = section("rates");
    r.allow({"birth", "natural_death", "competition", "vector_death", "mutation_prob",
             "mutation_kernel", "load", "unload", "drift_u", "drift_c", "sigma_u", "sigma_c"});
    auto& p = rc.params;
    if (r.has("birth")) p.birth = parse_rate(r.raw("birth"), r.path("birth"), dim);
    if (r.has("natural_death")) {
      p.natural_death = parse_rate(r.raw("natural_death"), r.path("natural_death"), dim);
    }
    if (r.has("vector_death")) {
      p.vector_death = parse_rate(r.raw("vector_death"), r.path("vector_death"), dim);
    }
    p.competition = r.num("competition", p.competition);
    p.mutation_prob = r.num("mutation_prob", p.mutation_prob);
    if (r.has("mutation_kernel")) {
      Node k = r.child("mutation_kernel");
      const auto family = k.str("family", "uniform");
      if (family == "uniform") {
        k.allow({"family"});
        p.mutation_kernel = UniformKernel{};
      } else if (family == "truncated_gaussian") {
        k.allow({"family", "width"});
        p.mutation_kernel = TruncatedGaussianKernel{k.num("width")};
      } else {
        fail(k.path("family"), "unknown kernel family '" + family + "'");
      }
    }
    if (r.has("load")) {
      Node l = r.child("load");
      l.allow({"amplitude", "radius", "half_saturation", "modulation"});
      p.load.amplitude = l.num("amplitude", p.load.amplitude);
      p.load.radius = l.num("radius", p.load.radius);
      p.load.half_saturation = l.num("half_saturation", p.load.half_saturation);
      if (l.has("modulation")) {
        p.load.modulation = parse_rate(l.raw("modulation"), l.path("modulation"), dim);
      }
    }
    if (r.has("unload")) {
      Node u = r.child("unload");
      u.allow({"amplitude", "radius"});
      p.unload.amplitude = u.num("amplitude", p.unload.amplitude);
      p.unload.radius = u.num("radius", p.unload.radius);
    }
    if (r.has("drift_u")) p.drift_u = parse_point(r.raw("drift_u"), r.path("drift_u"));
    if (r.has("drift_c")) p.drift_c = parse_point(r.raw("drift_c"), r.path("drift_c"));
    p.sigma_u = r.num("sigma_u", p.sigma_u);
    p.sigma_c = r.num("sigma_c", p.sigma_c);
    validate(p, rc.domain);
  }

  // scaling
  {
    Node s = section("scaling");
    s.allow({"K", "lambda", "load_argument"});
    rc.scaling.K = s.integer("K", 1);
    if (rc.scaling.K < 1) fail(s.path("K"), "must be >= 1");
    rc.scaling.lambda = s.num("lambda", 1.0);
    if (!(rc.scaling.lambda > 0.0 && rc.scaling.lambda <= 1.0)) {
      std::ostringstream os;
      os << "lambda = " << rc.scaling.lambda << " is outside the admissible range (0, 1]";
      fail(s.path("lambda"), os.str());
    }
    const auto arg = s.str("load_argument", "normalized");
    if (arg == "normalized") {
      rc.scaling.load_argument = LoadArgument::kNormalized;
    } else if (arg == "raw") {
      rc.scaling.load_argument = LoadArgument::kRaw;
    } else {
      fail(s.path("load_argument"), "expected 'normalized' or 'raw'");
    }
  }

  // initial
  {
    Node in = section("initial");
    in.allow({"mode", "viruses", "virus_trait", "free_vectors", "charged_vectors",
              "charged_trait"});
    auto& ic = rc.initial;
    const auto mode = in.str("mode", "counts");
    if (mode == "counts") {
      ic.mode = InitMode::kCounts;
    } else if (mode == "mass") {
      ic.mode = InitMode::kMass;
    } else {
      fail(in.path("mode"), "expected 'counts' or 'mass'");
    }
    if (in.has("viruses")) {
      ic.viruses = num_list(in.raw("viruses"), in.path("viruses"));
      if (ic.viruses.size() != rc.domain.plant_count()) {
        fail(in.path("viruses"), "needs one entry per plant (" +
                                     std::to_string(rc.domain.plant_count()) + ")");
      }
      for (double v : ic.viruses) {
        if (!(v >= 0.0)) fail(in.path("viruses"), "entries must be >= 0");
      }
    } else {
      ic.viruses.assign(rc.domain.plant_count(), 0.0);
    }
    if (in.has("virus_trait")) {
      ic.virus_trait = parse_trait_init(in.raw("virus_trait"), in.path("virus_trait"), dim);
    }
    ic.free_vectors = in.num("free_vectors", 0.0);
    ic.charged_vectors = in.num("charged_vectors", 0.0);
    if (ic.free_vectors < 0.0) fail(in.path("free_vectors"), "must be >= 0");
    if (ic.charged_vectors < 0.0) fail(in.path("charged_vectors"), "must be >= 0");
    if (in.has("charged_trait")) {
      ic.charged_trait =
          parse_trait_init(in.raw("charged_trait"), in.path("charged_trait"), dim);
    }
    if (ic.charged_vectors > 0.0 && !ic.charged_trait) {
      fail(in.path("charged_trait"), "required when charged_vectors > 0");
    }
  }

  // simulation
  {
    Node s = section("simulation");
    s.allow({"h_max", "population_cap", "scheme", "histogram_bins"});
    rc.simulation.h_max = s.num("h_max", 1e-3);
    if (!(rc.simulation.h_max > 0.0)) fail(s.path("h_max"), "must be > 0");
    rc.simulation.population_cap = s.integer("population_cap", 10'000'000);
    if (rc.simulation.population_cap < 1) fail(s.path("population_cap"), "must be >= 1");
    const auto scheme = s.str("scheme", "per_category");
    if (scheme == "per_category") {
      rc.simulation.scheme = ThinningScheme::kPerCategory;
    } else if (scheme == "global_bound") {
      rc.simulation.scheme = ThinningScheme::kGlobalBound;
    } else {
      fail(s.path("scheme"), "expected 'per_category' or 'global_bound'");
    }
    const auto bins = s.integer("histogram_bins", 8);
    if (bins < 1) fail(s.path("histogram_bins"), "must be >= 1");
    rc.simulation.histogram_bins = static_cast<std::size_t>(bins);
  }

  // ide
  {
    Node d = section("ide");
    d.allow({"trait_nodes", "space_cells", "dt", "speedup"});
    if (d.has("trait_nodes")) {
      const auto& tn = d.raw("trait_nodes");
      if (tn.is_number_integer()) {
        rc.ide.grid.trait_nodes = {tn.get<std::size_t>(), tn.get<std::size_t>()};
      } else {
        const auto v = num_list(tn, d.path("trait_nodes"));
        if (v.empty() || v.size() > 2) fail(d.path("trait_nodes"), "expected 1 or 2 entries");
        rc.ide.grid.trait_nodes = {static_cast<std::size_t>(v[0]),
                                   static_cast<std::size_t>(v.size() == 2 ? v[1] : v[0])};
      }
    }
    if (d.has("space_cells")) {
      const auto v = num_list(d.raw("space_cells"), d.path("space_cells"));
      if (v.size() != 2) fail(d.path("space_cells"), "expected [nx, ny]");
      rc.ide.grid.nx = static_cast<std::size_t>(v[0]);
      rc.ide.grid.ny = static_cast<std::size_t>(v[1]);
    }
    rc.ide.dt = d.num("dt", 1e-3);
    if (!(rc.ide.dt > 0.0)) fail(d.path("dt"), "must be > 0");
    rc.ide.speedup = d.num("speedup", 1.0);
    if (!(rc.ide.speedup > 0.0)) fail(d.path("speedup"), "must be > 0");
    (void)build_grids(rc.domain, rc.ide.grid);
  }

  // persistence
  {
    Node p = section("persistence");
    p.allow({"beta_eval", "horizon"});
    const auto ev = p.str("beta_eval", "at_unit_mass");
    if (ev == "at_unit_mass") {
      rc.persistence.beta_eval = BetaEval::kAtUnitMass;
    } else if (ev == "at_zero") {
      rc.persistence.beta_eval = BetaEval::kAtZero;
    } else {
      fail(p.path("beta_eval"), "expected 'at_zero' or 'at_unit_mass'");
    }
    rc.persistence.horizon = p.num("horizon", 20.0);
    if (!(rc.persistence.horizon > 0.0)) fail(p.path("horizon"), "must be > 0");
  }

  // study
  {
    Node s = section("study");
    s.allow({"kind", "K_list", "replicates", "horizon", "sample_dt", "seed", "output_dir",
             "extinction_times"});
    auto& st = rc.study;
    st.kind = parse_study_kind(s.str("kind", "simulate"));
    if (s.has("K_list")) {
      const auto& arr = s.raw("K_list");
      if (!arr.is_array()) fail(s.path("K_list"), "expected an array of integers");
      for (const auto& v : arr) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
          fail(s.path("K_list"), "entries must be integers >= 1");
        }
        st.K_list.push_back(v.get<std::int64_t>());
      }
      for (std::size_t i = 1; i < st.K_list.size(); ++i) {
        if (st.K_list[i] <= st.K_list[i - 1]) {
          fail(s.path("K_list"), "must be strictly increasing");
        }
      }
    } else {
      st.K_list = {rc.scaling.K};
    }
    const auto reps = s.integer("replicates", 1);
    if (reps < 1) fail(s.path("replicates"), "must be >= 1");
    st.replicates = static_cast<std::size_t>(reps);
    st.horizon = s.num("horizon", 1.0);
    if (!(st.horizon > 0.0)) fail(s.path("horizon"), "must be > 0");
    st.sample_dt = s.num("sample_dt", 0.1);
    if (!(st.sample_dt > 0.0)) fail(s.path("sample_dt"), "must be > 0");
    st.seed = s.uinteger("seed", 1);
    st.output_dir = s.str("output_dir", "out");
    if (s.has("extinction_times")) {
      st.extinction_times = num_list(s.raw("extinction_times"), s.path("extinction_times"));
    }
  }

  // Echo with every default materialized.
  const auto& p = rc.params;
  json plants = json::array();
  for (const auto& pl : rc.domain.plants) {
    plants.push_back({{"x", pl.position.x}, {"y", pl.position.y}, {"variety", pl.variety}});
  }
  json kernel = std::holds_alternative<UniformKernel>(p.mutation_kernel)
                    ? json{{"family", "uniform"}}
                    : json{{"family", "truncated_gaussian"},
                           {"width", std::get<TruncatedGaussianKernel>(p.mutation_kernel).width}};
  json initial = {
      {"mode", rc.initial.mode == InitMode::kMass ? "mass" : "counts"},
      {"viruses", rc.initial.viruses},
      {"virus_trait", trait_init_json(rc.initial.virus_trait, dim)},
      {"free_vectors", rc.initial.free_vectors},
      {"charged_vectors", rc.initial.charged_vectors},
  };
  if (rc.initial.charged_trait) {
    initial["charged_trait"] = trait_init_json(*rc.initial.charged_trait, dim);
  }
  rc.echo = {
      {"schema_version", kSchemaVersion},
      {"domain",
       {{"width", rc.domain.extent.width}, {"height", rc.domain.extent.height}, {"plants", plants}}},
      {"traits",
       {{"dim", dim},
        {"lo", trait_json(rc.domain.traits.lo, dim)},
        {"hi", trait_json(rc.domain.traits.hi, dim)}}},
      {"rates",
       {{"birth", rate_json(p.birth, dim)},
        {"natural_death", rate_json(p.natural_death, dim)},
        {"competition", p.competition},
        {"vector_death", rate_json(p.vector_death, dim)},
        {"mutation_prob", p.mutation_prob},
        {"mutation_kernel", kernel},
        {"load",
         {{"amplitude", p.load.amplitude},
          {"radius", p.load.radius},
          {"half_saturation", p.load.half_saturation},
          {"modulation", rate_json(p.load.modulation, dim)}}},
        {"unload", {{"amplitude", p.unload.amplitude}, {"radius", p.unload.radius}}},
        {"drift_u", {p.drift_u.x, p.drift_u.y}},
        {"drift_c", {p.drift_c.x, p.drift_c.y}},
        {"sigma_u", p.sigma_u},
        {"sigma_c", p.sigma_c}}},
      {"scaling",
       {{"K", rc.scaling.K},
        {"lambda", rc.scaling.lambda},
        {"load_argument",
         rc.scaling.load_argument == LoadArgument::kNormalized ? "normalized" : "raw"}}},
      {"initial", initial},
      {"simulation",
       {{"h_max", rc.simulation.h_max},
        {"population_cap", rc.simulation.population_cap},
        {"scheme",
         rc.simulation.scheme == ThinningScheme::kPerCategory ? "per_category" : "global_bound"},
        {"histogram_bins", rc.simulation.histogram_bins}}},
      {"ide",
       {{"trait_nodes", {rc.ide.grid.trait_nodes[0], rc.ide.grid.trait_nodes[1]}},
        {"space_cells", {rc.ide.grid.nx, rc.ide.grid.ny}},
        {"dt", rc.ide.dt},
        {"speedup", rc.ide.speedup}}},
      {"persistence",
       {{"beta_eval",
         rc.persistence.beta_eval == BetaEval::kAtUnitMass ? "at_unit_mass" : "at_zero"},
        {"horizon", rc.persistence.horizon}}},
      {"study",
       {{"kind", to_string(rc.study.kind)},
        {"K_list", rc.study.K_list},
        {"replicates", rc.study.replicates},
        {"horizon", rc.study.horizon},
        {"sample_dt", rc.study.sample_dt},
        {"seed", rc.study.seed},
        {"output_dir", rc.study.output_dir},
        {"extinction_times", rc.study.extinction_times}}},
  };
  return rc;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config_json(j);
}

std::vector<std::string> validate(const RunConfig& rc) {
  std::vector<std::string> notes;
  const auto b = rate_bounds(rc.params, rc.domain);
  if (rc.study.kind == StudyKind::kIde2 ||
      (rc.study.kind == StudyKind::kConvergence && rc.scaling.lambda < 1.0)) {
    if (b.gamma_bar > 0.0) {
      notes.push_back(
          "vector_death > 0 with stationary vector fields: outside the zero-loss hypothesis "
          "under which the stationary fields are characterized");
    }
    if (rc.scaling.lambda == 1.0 && rc.study.kind == StudyKind::kConvergence) {
      notes.push_back("lambda = 1 compares against the parabolic system, not the stationary one");
    }
  }
  if (rc.study.kind == StudyKind::kExtinction && rc.params.competition <= 0.0) {
    notes.push_back("competition = 0: the mean bound threshold is undefined");
  }
  const double grid_T = rc.study.horizon / rc.study.sample_dt;
  if (std::abs(grid_T - std::round(grid_T)) > 1e-9 * std::max(1.0, grid_T)) {
    notes.push_back("horizon is not a multiple of sample_dt; the last sample is at the horizon");
  }
  return notes;
}

std::string config_digest(const json& echo) {
  const std::string s = echo.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace vbsim
