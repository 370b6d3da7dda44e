#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "vbsim/model.hpp"
#include "vbsim/particle.hpp"

namespace vbsim {

struct GridResolution {
  std::array<std::size_t, 2> trait_nodes{11, 1};  // second entry ignored for 1-D traits
  std::size_t nx = 20;
  std::size_t ny = 20;
};

/// Trait nodes include the box corners (trapezoid weights); space cells are
/// cell-centred. A single trait node is accepted as a point-trait model with
/// weight equal to the box volume.
struct Grids {
  TraitBox box;
  Rect rect;
  std::array<std::size_t, 2> nz{1, 1};
  std::vector<Trait> trait_nodes;
  std::vector<double> weights;
  std::size_t nx = 0;
  std::size_t ny = 0;
  double dx = 0.0;
  double dy = 0.0;
  double cell_area = 0.0;
  std::size_t n_plants = 0;

  std::size_t n_traits() const { return trait_nodes.size(); }
  std::size_t n_cells() const { return nx * ny; }
  Point2 cell_center(std::size_t c) const {
    return {(static_cast<double>(c % nx) + 0.5) * dx, (static_cast<double>(c / nx) + 0.5) * dy};
  }
};

/// Throws ConfigError for 2 trait nodes or fewer than 3 space cells per axis.
Grids build_grids(const Domain& domain, const GridResolution& res);

/// g_v[x * nz + k], g_u[c], g_c[c * nz + k]; densities per unit trait volume
/// and per unit area.
struct FieldState {
  double t = 0.0;
  std::vector<double> g_v;
  std::vector<double> g_u;
  std::vector<double> g_c;
};

FieldState zero_fields(const Grids& grids);

/// Fields matching the particle initial law: virus masses per plant with the
/// configured trait density, vectors uniform in space. Count-mode entries are
/// divided by K (viruses) and K^lambda (vectors).
FieldState initial_fields(const InitialConfig& init, const Grids& grids, double K = 1.0,
                          double lambda = 1.0);

/// Discrete trait density of an initial-trait law on the grid, normalized so
/// that sum_k w_k rho_k = 1.
std::vector<double> trait_density(const TraitInit& init, const Grids& grids);

/// Plain 5-point Laplacian with zero-flux ghost cells. Throws ConfigError on
/// a size mismatch.
std::vector<double> neumann_laplacian(std::span<const double> field, const Grids& grids);

struct MassTotals {
  double virus_mass = 0.0;        // plant viruses plus carried viruses
  double plant_virus_mass = 0.0;
  double charged_mass = 0.0;
  double vector_mass = 0.0;       // free plus charged vectors
  std::vector<double> per_plant_mass;
};

enum class BetaEval { kAtZero, kAtUnitMass };

struct IdeOptions {
  double speedup = 1.0;    // time-scale factor on the vector equations
  double clip_eps = 1e-12;
};

struct EllipticSolution {
  std::vector<double> g_u;
  std::vector<double> g_c;
  double residual = 0.0;    // max-norm of the assembled system residual
  double scale = 1.0;       // ||M||_inf ||x||_inf + V_total
  double constraint = 0.0;  // achieved total vector mass
  bool decoupled = false;   // kernel resolved slice by slice from the previous fields
};

struct StepDiagnostics {
  double min_before_clip = 0.0;
  std::size_t clipped = 0;
};

/// Method-of-lines discretization of the limit equations with coefficient
/// tables precomputed for one (domain, params, grids) triple.
class IdeOperator {
 public:
  /// Per-cell (neighbour, coefficient) lists of a transport operator.
  using Stencil = std::vector<std::vector<std::pair<std::size_t, double>>>;

  IdeOperator(const Domain& domain, const ModelParams& params, const Grids& grids,
              IdeOptions options = {});

  const Grids& grids() const { return grids_; }
  const IdeOptions& options() const { return options_; }

  /// mu * sum_z' w b(x, z') m(z', z) g(z') at every trait node.
  std::vector<double> mutation_term(std::span<const double> g_v_plant, std::size_t plant) const;

  FieldState rhs_regime1(const FieldState& f) const;

  /// Largest dt accepted by step_regime1 at this state.
  double max_stable_dt(const FieldState& f) const;

  /// Explicit RK4. Throws CflViolation when dt exceeds max_stable_dt and
  /// NumericalError on non-finite values or negativity beyond clip_eps.
  FieldState step_regime1(const FieldState& f, double dt, StepDiagnostics* diag = nullptr) const;

  /// Stationary vector fields for the current virus field under total vector
  /// mass V_total. Trait slices that neither load nor unload keep the charged
  /// mass they have in `f`.
  EllipticSolution solve_elliptic_vectors(const FieldState& f, double V_total) const;

  /// Elliptic solve, then RK4 on g_v with the solved vector fields frozen.
  FieldState step_regime2(const FieldState& f, double dt, double V_total,
                          EllipticSolution* solution = nullptr,
                          StepDiagnostics* diag = nullptr) const;

  MassTotals mass_totals(const FieldState& f) const;

  /// (1-mu) b(x,z) - d(z) - integral over space of beta(y, x, N, z) with N
  /// fixed by `eval`.
  double persistence_R(std::size_t plant, const Trait& z, BetaEval eval) const;

  /// Space integral of the load cutoff around a plant (disk area inside the
  /// rectangle), from the cell tables.
  double load_footprint(std::size_t plant) const;

 private:
  struct Coupling {
    std::vector<double> V, sat, Gu;  // per plant
    std::vector<double> A;           // [c * nz + k]
    std::vector<double> B;           // per cell
  };
  Coupling coupling(const std::vector<double>& g_v, const std::vector<double>& g_u) const;
  void virus_rhs(const std::vector<double>& g_v, const std::vector<double>& g_c,
                 const Coupling& cp, std::vector<double>& out) const;
  double reaction_rate_bound(const FieldState& f, bool with_vectors) const;
  void clip(FieldState& f, StepDiagnostics* diag) const;

  const Domain* domain_;
  ModelParams params_;
  Grids grids_;
  IdeOptions options_;

  std::vector<std::vector<std::pair<std::size_t, double>>> load_cells_;    // (cell, overlap area)
  std::vector<std::vector<std::pair<std::size_t, double>>> unload_cells_;
  Stencil stencil_u_;  // (sigma_u^2/2) Laplacian - div(a_u .)
  Stencil stencil_c_;
  std::vector<double> H_;          // eta_0 * sum_x fraction of cell within the unload cutoff
  std::vector<double> birth_;      // [x * nz + k]
  std::vector<double> death_;      // [k]
  std::vector<double> modulation_; // [k]
  std::vector<double> gamma_;      // [k]
  std::vector<double> mutation_;   // [k' * nz + k], sum_k w_k M = 1
};

}  // namespace vbsim
