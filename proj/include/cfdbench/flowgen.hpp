#pragma once

// Incompressible Navier-Stokes case generator: exact case-grid enumeration,
// staggered-grid (MAC) projection solver for the single-phase problems
// (cavity, cylinder, plane-channel proxy for the tube), geometry masks, and
// residual-based convergence monitoring.

#include <cstdint>
#include <string>
#include <vector>

#include "cfdbench/datakit.hpp"
#include "cfdbench/errors.hpp"

namespace cfdbench::flowgen {

enum class Problem { Cavity, Tube, Dam, Cylinder };
enum class Subset { BC, PROP, GEO };

const char* problem_name(Problem p);
const char* subset_name(Subset s);
Problem parse_problem(const std::string& name);   // ConfigError on unknown
Subset parse_subset(const std::string& name);     // ConfigError on unknown

struct OperatingParams {
  Problem problem = Problem::Cavity;
  std::string case_id;
  Subset subset = Subset::BC;
  double u_b = 0.0;   // boundary velocity (lid or inlet), m/s
  double rho = 1.0;   // density, kg/m^3
  double mu = 1e-5;   // dynamic viscosity, Pa*s
  double dt = 0.1;    // frame time step, s

  // geometry (unused fields stay 0): cavity l x w; tube diameter d, length l;
  // dam obstacle h x w inside the fixed 1.5 m x 0.4 m domain; cylinder
  // diameter d with center at distances x1/x2/y1/y2 from the four walls
  double cav_l = 0.0, cav_w = 0.0;
  double tube_d = 0.0, tube_l = 0.0;
  double dam_h = 0.0, dam_w = 0.0;
  double cyl_d = 0.0, cyl_x1 = 0.0, cyl_x2 = 0.0, cyl_y1 = 0.0, cyl_y2 = 0.0;

  // physical domain extent (width, height) in meters
  double domain_x() const;
  double domain_y() const;
  // named parameter map used for normalization and meta.json
  std::map<std::string, double> named() const;
  void validate() const;  // ConfigError when any physical quantity is invalid
};

// Exact per-subset case lists matching the published breakdown
// (cavity 50/84/25, tube 50/100/25, dam 70/100/50, cylinder 50/115/20).
std::vector<OperatingParams> enumerate_cases(Problem problem, Subset subset);
std::vector<OperatingParams> enumerate_all();  // all 739, deterministic order

struct SolverConfig {
  std::size_t nx = 64, ny = 64;              // grid resolution (>= 8 per axis)
  std::size_t frames = 20;                   // frames written, params.dt apart
  double residual_target = 1e-6;             // pressure scaled-residual target
  double divergence_tol = 1e-6;              // post-step max divergence bound
  std::size_t max_pressure_iters = 50000;
  std::size_t max_diffusion_iters = 2000;
  double max_cfl = 0.4;                      // advective substep limit
  std::size_t max_substeps_per_frame = 100000;
  double max_reynolds = 500.0;               // laminar guard on domain Re
  double sor_omega = 1.7;
  double steady_tol = 1e-12;                 // per-substep max change => steady

  void validate() const;  // ConfigError on invalid entries
};

// Staggered (MAC) state: u on vertical faces [(nx+1) x ny], v on horizontal
// faces [nx x (ny+1)], p at cell centers [nx x ny], index row-major with
// row 0 at y = 0.
struct FieldState {
  std::size_t nx = 0, ny = 0;
  double dx = 0.0, dy = 0.0;
  std::vector<double> u, v, p;
  std::vector<std::uint8_t> mask;  // cell mask, 1 = fluid
  double u_bc = 0.0;               // active boundary velocity (after guard)

  double& at_u(std::size_t i, std::size_t j) { return u[j * (nx + 1) + i]; }
  double& at_v(std::size_t i, std::size_t j) { return v[j * nx + i]; }
  double& at_p(std::size_t i, std::size_t j) { return p[j * nx + i]; }
  double max_divergence() const;
  bool finite() const;
};

struct ResidualReport {
  double pressure_residual = 0.0;  // scaled residual of the Poisson system
  std::size_t pressure_iters = 0;
  std::size_t substeps = 0;
};

// Cell mask on an nx x ny grid: 1 = fluid, 0 = solid obstacle.
// GeometryError when an obstacle does not fit inside the domain.
std::vector<std::uint8_t> build_geometry_mask(const OperatingParams& params, std::size_t nx,
                                              std::size_t ny);

// Zero-flow initial state with mask and boundary velocity applied (the
// boundary velocity may be reduced by the laminar guard; see solve_case).
FieldState init_state(const OperatingParams& params, const SolverConfig& cfg);

// Advances one params.dt via CFL-limited substeps of explicit-upwind
// advection, implicit central diffusion, and pressure projection.
ResidualReport advance_timestep(FieldState& state, const OperatingParams& params,
                                const SolverConfig& cfg);

// One cell of an assembled conservation equation: a_P*phi_P = sum a_nb*phi_nb + b.
struct CellCoeffs {
  double a_p = 0.0;
  std::vector<std::pair<std::size_t, double>> nb;  // (cell index, a_nb)
  double b = 0.0;
};

// R = sum |sum a_nb phi_nb + b - a_P phi_P| / sum |a_P phi_P|; 0/0 -> 0,
// finite/0 -> +inf sentinel.
double scaled_residual(const std::vector<CellCoeffs>& coeffs, const std::vector<double>& phi);

// Runs the full case and packages frames (channels u, v, p at cell centers).
// CapabilityError for dam flow (external ingestion only); SolverBlowupError
// with the failing step on NaN/divergence.
datakit::CaseRecord solve_case(const OperatingParams& params, const SolverConfig& cfg);

// Laminar-guard scale factor in (0,1]: 1 when the domain Reynolds number is
// within cfg.max_reynolds, else the reduction applied to u_b.
double velocity_guard_scale(const OperatingParams& params, const SolverConfig& cfg);

}  // namespace cfdbench::flowgen
