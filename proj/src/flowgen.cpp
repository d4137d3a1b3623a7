#include "cfdbench/flowgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace cfdbench::flowgen {

// ---------------------------------------------------------------------------
// Names and parsing
// ---------------------------------------------------------------------------

const char* problem_name(Problem p) {
  switch (p) {
    case Problem::Cavity:
      return "cavity";
    case Problem::Tube:
      return "tube";
    case Problem::Dam:
      return "dam";
    case Problem::Cylinder:
      return "cylinder";
  }
  return "?";
}

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::BC:
      return "bc";
    case Subset::PROP:
      return "prop";
    case Subset::GEO:
      return "geo";
  }
  return "?";
}

Problem parse_problem(const std::string& name) {
  if (name == "cavity") return Problem::Cavity;
  if (name == "tube") return Problem::Tube;
  if (name == "dam") return Problem::Dam;
  if (name == "cylinder") return Problem::Cylinder;
  throw ConfigError("unknown problem: " + name);
}

Subset parse_subset(const std::string& name) {
  if (name == "bc") return Subset::BC;
  if (name == "prop") return Subset::PROP;
  if (name == "geo") return Subset::GEO;
  throw ConfigError("unknown subset: " + name);
}

// ---------------------------------------------------------------------------
// OperatingParams
// ---------------------------------------------------------------------------

double OperatingParams::domain_x() const {
  switch (problem) {
    case Problem::Cavity:
      return cav_l;
    case Problem::Tube:
      return tube_l;
    case Problem::Dam:
      return 1.5;
    case Problem::Cylinder:
      return cyl_x1 + cyl_x2;
  }
  return 0;
}

double OperatingParams::domain_y() const {
  switch (problem) {
    case Problem::Cavity:
      return cav_w;
    case Problem::Tube:
      return tube_d;
    case Problem::Dam:
      return 0.4;
    case Problem::Cylinder:
      return cyl_y1 + cyl_y2;
  }
  return 0;
}

std::map<std::string, double> OperatingParams::named() const {
  std::map<std::string, double> m{{"u_b", u_b}, {"rho", rho}, {"mu", mu}};
  switch (problem) {
    case Problem::Cavity:
      m["l"] = cav_l;
      m["w"] = cav_w;
      break;
    case Problem::Tube:
      m["d"] = tube_d;
      m["l"] = tube_l;
      break;
    case Problem::Dam:
      m["h"] = dam_h;
      m["w"] = dam_w;
      break;
    case Problem::Cylinder:
      m["d"] = cyl_d;
      m["x1"] = cyl_x1;
      m["x2"] = cyl_x2;
      m["y1"] = cyl_y1;
      m["y2"] = cyl_y2;
      break;
  }
  return m;
}

void OperatingParams::validate() const {
  if (!(u_b >= 0)) throw ConfigError("u_b must be >= 0");
  if (!(rho > 0) || !(mu > 0) || !(dt > 0))
    throw ConfigError("rho, mu, dt must be strictly positive");
  if (!(domain_x() > 0) || !(domain_y() > 0))
    throw ConfigError("domain extents must be strictly positive");
}

void SolverConfig::validate() const {
  if (nx < 8 || ny < 8) throw ConfigError("grid resolution must be >= 8 per axis");
  if (!(residual_target > 0)) throw ConfigError("residual target must be > 0");
  if (!(divergence_tol > 0)) throw ConfigError("divergence tolerance must be > 0");
  if (frames < 2) throw ConfigError("at least 2 frames required");
  if (!(max_cfl > 0) || !(max_cfl < 1)) throw ConfigError("max_cfl must be in (0,1)");
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

namespace {

OperatingParams baseline(Problem p) {
  OperatingParams o;
  o.problem = p;
  switch (p) {
    case Problem::Cavity:
      o.rho = 1.0;
      o.mu = 1e-5;
      o.u_b = 10.0;
      o.cav_l = 0.01;
      o.cav_w = 0.01;
      o.dt = 0.1;
      break;
    case Problem::Tube:
      o.rho = 100.0;
      o.mu = 0.1;
      o.u_b = 1.0;
      o.tube_d = 0.1;
      o.tube_l = 1.0;
      o.dt = 0.01;
      break;
    case Problem::Dam:
      o.rho = 100.0;
      o.mu = 0.1;
      o.u_b = 1.0;
      o.dam_h = 0.1;
      o.dam_w = 0.05;
      o.dt = 0.1;
      break;
    case Problem::Cylinder:
      o.rho = 10.0;
      o.mu = 0.001;
      o.u_b = 1.0;
      o.cyl_d = 0.02;
      o.cyl_x1 = 0.06;
      o.cyl_x2 = 0.16;
      o.cyl_y1 = 0.06;
      o.cyl_y2 = 0.06;
      o.dt = 0.001;
      break;
  }
  return o;
}

std::string make_id(Problem p, Subset s, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%s_%04zu", problem_name(p), subset_name(s),
                i);
  return buf;
}

const std::vector<double> kSmallRho{0.1, 0.5, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
const std::vector<double> kSmallMu{1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2};

// density 10..1000 step 110, viscosity 0.01..1 step 0.11 (tube and dam)
std::vector<double> grid_rho_10_1000() {
  std::vector<double> v;
  for (int i = 0; i < 10; ++i) v.push_back(10.0 + 110.0 * i);
  return v;
}
std::vector<double> grid_mu_001_1() {
  std::vector<double> v;
  for (int i = 0; i < 10; ++i) v.push_back((1.0 + 11.0 * i) / 100.0);
  return v;
}

}  // namespace

std::vector<OperatingParams> enumerate_cases(Problem problem, Subset subset) {
  std::vector<OperatingParams> out;
  const OperatingParams base = baseline(problem);
  auto push = [&](OperatingParams o) {
    o.subset = subset;
    o.case_id = make_id(problem, subset, out.size());
    out.push_back(std::move(o));
  };

  switch (problem) {
    case Problem::Cavity: {
      if (subset == Subset::BC) {
        for (int i = 1; i <= 50; ++i) {
          auto o = base;
          o.u_b = double(i);
          push(o);
        }
      } else if (subset == Subset::PROP) {
        for (double rho : kSmallRho)
          for (double mu : kSmallMu) {
            auto o = base;
            o.rho = rho;
            o.mu = mu;
            push(o);
          }
      } else {
        for (int li = 1; li <= 5; ++li)
          for (int wi = 1; wi <= 5; ++wi) {
            auto o = base;
            o.cav_l = 0.01 * li;
            o.cav_w = 0.01 * wi;
            push(o);
          }
      }
      break;
    }
    case Problem::Tube: {
      if (subset == Subset::BC) {
        for (int i = 1; i <= 50; ++i) {
          auto o = base;
          o.u_b = double(i) / 10.0;
          push(o);
        }
      } else if (subset == Subset::PROP) {
        for (double rho : grid_rho_10_1000())
          for (double mu : grid_mu_001_1()) {
            auto o = base;
            o.rho = rho;
            o.mu = mu;
            push(o);
          }
      } else {
        const std::vector<double> diameters{0.01, 0.05, 0.1, 0.3, 0.5};
        const std::vector<double> ratios{1, 2, 5, 7.5, 10, 15, 20, 50, 75, 100};
        for (double d : diameters) {
          int taken = 0;
          for (double r : ratios) {
            const double len = d * r;
            if (len < 0.1 - 1e-12 || len > 10.0 + 1e-12) continue;
            if (taken == 5) break;
            auto o = base;
            o.tube_d = d;
            o.tube_l = len;
            push(o);
            ++taken;
          }
        }
      }
      break;
    }
    case Problem::Dam: {
      if (subset == Subset::BC) {
        for (int i = 1; i <= 20; ++i) {
          auto o = base;
          o.u_b = 0.05 * i;
          push(o);
        }
        for (int i = 1; i <= 50; ++i) {
          auto o = base;
          o.u_b = (100.0 + 2.0 * i) / 100.0;
          push(o);
        }
      } else if (subset == Subset::PROP) {
        for (double rho : grid_rho_10_1000())
          for (double mu : grid_mu_001_1()) {
            auto o = base;
            o.rho = rho;
            o.mu = mu;
            push(o);
          }
      } else {
        for (int hi = 11; hi <= 15; ++hi)
          for (int wi = 1; wi <= 10; ++wi) {
            auto o = base;
            o.dam_h = 0.01 * hi;
            o.dam_w = 0.01 * wi;
            push(o);
          }
      }
      break;
    }
    case Problem::Cylinder: {
      if (subset == Subset::BC) {
        for (int i = 1; i <= 50; ++i) {
          auto o = base;
          o.u_b = double(i) / 10.0;
          push(o);
        }
      } else if (subset == Subset::PROP) {
        std::vector<double> rhos;
        for (int i = 1; i <= 10; ++i) rhos.push_back(0.1 * i);
        for (double r : {1.5, 2.5, 3.5, 4.5, 5.0}) rhos.push_back(r);
        for (int i = 6; i <= 10; ++i) rhos.push_back(double(i));
        for (int i = 0; i < 24; ++i) rhos.push_back(20.0 + 10.0 * i);
        for (double r : {300.0, 400.0, 500.0}) rhos.push_back(r);
        for (double rho : rhos)
          for (double mu : kSmallMu) {
            if (mu < 1e-4 - 1e-15) continue;  // cylinder table starts at 1e-4
            const double re = rho * base.u_b * base.cyl_d / mu;
            if (re < 20.0 - 1e-9 || re > 1600.0 + 1e-9) continue;
            auto o = base;
            o.rho = rho;
            o.mu = mu;
            push(o);
          }
      } else {
        // one-at-a-time variation around the baseline geometry
        for (int i = 1; i <= 5; ++i) {
          auto o = base;
          o.cyl_d = 0.01 * i;
          push(o);
        }
        for (int i = 1; i <= 5; ++i) {
          auto o = base;
          o.cyl_x1 = 0.02 * i;
          push(o);
        }
        for (int i = 1; i <= 5; ++i) {
          auto o = base;
          o.cyl_x2 = 0.12 + 0.02 * (i - 1);
          push(o);
        }
        for (int i = 1; i <= 5; ++i) {
          auto o = base;
          o.cyl_y1 = o.cyl_y2 = 0.02 * i;
          push(o);
        }
      }
      break;
    }
  }
  return out;
}

std::vector<OperatingParams> enumerate_all() {
  std::vector<OperatingParams> all;
  for (Problem p : {Problem::Cavity, Problem::Tube, Problem::Dam, Problem::Cylinder})
    for (Subset s : {Subset::BC, Subset::PROP, Subset::GEO}) {
      auto v = enumerate_cases(p, s);
      all.insert(all.end(), v.begin(), v.end());
    }
  return all;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> build_geometry_mask(const OperatingParams& params, std::size_t nx,
                                              std::size_t ny) {
  std::vector<std::uint8_t> mask(nx * ny, 1);
  const double lx = params.domain_x(), ly = params.domain_y();
  const double dx = lx / double(nx), dy = ly / double(ny);
  switch (params.problem) {
    case Problem::Cavity:
    case Problem::Tube:
      break;
    case Problem::Dam: {
      // vertical obstacle of height h and width w, 0.5 m from the inlet
      const double x0 = 0.5, x1 = 0.5 + params.dam_w;
      if (params.dam_h > ly || x1 > lx)
        throw GeometryError("dam obstacle exceeds the domain");
      for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) {
          const double cx = (i + 0.5) * dx, cy = (j + 0.5) * dy;
          if (cx >= x0 && cx <= x1 && cy <= params.dam_h) mask[j * nx + i] = 0;
        }
      break;
    }
    case Problem::Cylinder: {
      const double r = params.cyl_d / 2.0;
      const double cx0 = params.cyl_x1, cy0 = params.cyl_y1;
      if (cx0 - r < 0 || cx0 + r > lx || cy0 - r < 0 || cy0 + r > ly)
        throw GeometryError("cylinder exceeds the domain");
      for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) {
          const double cx = (i + 0.5) * dx, cy = (j + 0.5) * dy;
          if ((cx - cx0) * (cx - cx0) + (cy - cy0) * (cy - cy0) <= r * r)
            mask[j * nx + i] = 0;
        }
      break;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

double velocity_guard_scale(const OperatingParams& params, const SolverConfig& cfg) {
  double lchar = 0;
  switch (params.problem) {
    case Problem::Cavity:
      lchar = params.cav_l;
      break;
    case Problem::Tube:
      lchar = params.tube_d;
      break;
    case Problem::Dam:
      lchar = params.dam_h;
      break;
    case Problem::Cylinder:
      lchar = params.cyl_d;
      break;
  }
  const double re = params.rho * params.u_b * lchar / params.mu;
  if (re <= cfg.max_reynolds || re <= 0) return 1.0;
  return cfg.max_reynolds / re;
}

double FieldState::max_divergence() const {
  double worst = 0;
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      if (!mask[j * nx + i]) continue;
      const double div = (u[j * (nx + 1) + i + 1] - u[j * (nx + 1) + i]) / dx +
                         (v[(j + 1) * nx + i] - v[j * nx + i]) / dy;
      worst = std::max(worst, std::abs(div));
    }
  return worst;
}

bool FieldState::finite() const {
  auto ok = [](const std::vector<double>& a) {
    for (double x : a)
      if (!std::isfinite(x)) return false;
    return true;
  };
  return ok(u) && ok(v) && ok(p);
}

namespace {

inline bool has_outlet(Problem p) { return p == Problem::Tube || p == Problem::Cylinder; }
inline bool has_inlet(Problem p) { return p == Problem::Tube || p == Problem::Cylinder; }

// Applies all Dirichlet boundary values and solid-face pinning in place.
void apply_bcs(FieldState& s, Problem prob) {
  const std::size_t nx = s.nx, ny = s.ny;
  for (std::size_t j = 0; j < ny; ++j) {
    s.u[j * (nx + 1) + 0] = has_inlet(prob) ? s.u_bc : 0.0;  // left
    if (!has_outlet(prob)) s.u[j * (nx + 1) + nx] = 0.0;     // right wall
  }
  if (has_outlet(prob)) {  // zero-gradient outlet
    for (std::size_t j = 0; j < ny; ++j)
      s.u[j * (nx + 1) + nx] = s.u[j * (nx + 1) + nx - 1];
  }
  for (std::size_t i = 0; i < nx; ++i) {
    s.v[0 * nx + i] = 0.0;    // bottom wall
    s.v[ny * nx + i] = 0.0;   // top wall (lid moves tangentially only)
  }
  // no-slip on solid cells: zero every face touching a solid cell
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      if (s.mask[j * nx + i]) continue;
      s.u[j * (nx + 1) + i] = 0.0;
      s.u[j * (nx + 1) + i + 1] = 0.0;
      s.v[j * nx + i] = 0.0;
      s.v[(j + 1) * nx + i] = 0.0;
    }
}

struct PoissonSystem {
  // 5-point coefficients per cell: center, E, W, N, S (zero where absent)
  std::vector<double> ap, ae, aw, an, as, rhs;
  std::vector<std::uint8_t> active;
};

// Assembles the projection Poisson system for the current predictor field.
PoissonSystem assemble_poisson(const FieldState& s, Problem prob, double rho, double dt) {
  const std::size_t nx = s.nx, ny = s.ny, n = nx * ny;
  PoissonSystem sys;
  sys.ap.assign(n, 0);
  sys.ae.assign(n, 0);
  sys.aw.assign(n, 0);
  sys.an.assign(n, 0);
  sys.as.assign(n, 0);
  sys.rhs.assign(n, 0);
  sys.active.assign(n, 0);
  const double cx = 1.0 / (s.dx * s.dx), cy = 1.0 / (s.dy * s.dy);
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      const std::size_t c = j * nx + i;
      if (!s.mask[c]) continue;
      sys.active[c] = 1;
      double ap = 0;
      // east
      if (i + 1 < nx && s.mask[c + 1]) {
        sys.ae[c] = cx;
        ap += cx;
      } else if (i + 1 == nx && has_outlet(prob)) {
        ap += cx;  // Dirichlet p = 0 beyond the outlet
      }
      // west
      if (i > 0 && s.mask[c - 1]) {
        sys.aw[c] = cx;
        ap += cx;
      }
      // north
      if (j + 1 < ny && s.mask[c + nx]) {
        sys.an[c] = cy;
        ap += cy;
      }
      // south
      if (j > 0 && s.mask[c - nx]) {
        sys.as[c] = cy;
        ap += cy;
      }
      sys.ap[c] = ap;
      const double div = (s.u[j * (nx + 1) + i + 1] - s.u[j * (nx + 1) + i]) / s.dx +
                         (s.v[(j + 1) * nx + i] - s.v[j * nx + i]) / s.dy;
      sys.rhs[c] = rho / dt * div;
    }
  return sys;
}

struct PoissonResidual {
  double scaled = 0.0;    // Eq-style global scaled residual
  double max_cell = 0.0;  // max per-cell imbalance, in divergence units
};

PoissonResidual poisson_residual(const PoissonSystem& sys, const std::vector<double>& p,
                                 std::size_t nx, double div_scale) {
  double num = 0, den = 0, worst = 0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (!sys.active[c]) continue;
    const double lhs = sys.ap[c] * p[c];
    const double rhsv = (sys.ae[c] ? sys.ae[c] * p[c + 1] : 0.0) +
                        (sys.aw[c] ? sys.aw[c] * p[c - 1] : 0.0) +
                        (sys.an[c] ? sys.an[c] * p[c + nx] : 0.0) +
                        (sys.as[c] ? sys.as[c] * p[c - nx] : 0.0) - sys.rhs[c];
    num += std::abs(rhsv - lhs);
    den += std::abs(lhs);
    worst = std::max(worst, std::abs(rhsv - lhs) * div_scale);
  }
  PoissonResidual r;
  r.max_cell = worst;
  if (den == 0)
    r.scaled = num == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  else
    r.scaled = num / den;
  return r;
}

// Alternating-direction line Gauss-Seidel: exact tridiagonal (Thomas)
// solves along columns then rows, robust on anisotropic cell aspect ratios.
// The closed-domain (pure Neumann) system is singular but consistent; the
// iteration converges in the residual with the constant mode free.
// Converged means both the scaled residual target and the post-correction
// per-cell divergence bound (|imbalance| * dt/rho) are met.
ResidualReport solve_poisson(const PoissonSystem& sys, std::vector<double>& p, std::size_t nx,
                             std::size_t ny, double div_scale, const SolverConfig& cfg) {
  ResidualReport rep;
  PoissonResidual res;
  std::vector<double> diag, lower, upper, rhs, sol;

  // A closed domain (no Dirichlet face anywhere) leaves the constant mode
  // free; detect it so the sweeps can pin the mean. Without pinning the
  // constant drifts between line solves and the scaled-residual denominator
  // (sum |a_P p_P|) can collapse, stalling the stopping test.
  bool singular = true;
  std::size_t n_active = 0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (!sys.active[c]) continue;
    ++n_active;
    const double nb_sum = sys.ae[c] + sys.aw[c] + sys.an[c] + sys.as[c];
    if (std::abs(sys.ap[c] - nb_sum) > 1e-12 * sys.ap[c]) singular = false;
  }
  auto pin_mean = [&] {
    if (!singular || n_active == 0) return;
    double mean = 0;
    for (std::size_t c = 0; c < p.size(); ++c)
      if (sys.active[c]) mean += p[c];
    mean /= double(n_active);
    for (std::size_t c = 0; c < p.size(); ++c)
      if (sys.active[c]) p[c] -= mean;
  };
  pin_mean();

  // Solves one grid line of unknowns (a run of consecutive active cells),
  // with the perpendicular neighbors taken at their current values.
  auto sweep_line = [&](std::size_t start, std::size_t count, std::size_t stride,
                        const std::vector<double>& a_lo, const std::vector<double>& a_hi,
                        const std::vector<double>& b_lo, const std::vector<double>& b_hi,
                        std::size_t perp_stride) {
    // collect maximal runs of active cells along the line
    std::size_t k = 0;
    while (k < count) {
      while (k < count && !sys.active[start + k * stride]) ++k;
      const std::size_t run0 = k;
      while (k < count && sys.active[start + k * stride]) ++k;
      const std::size_t n = k - run0;
      if (n == 0) continue;
      diag.assign(n, 0);
      lower.assign(n, 0);
      upper.assign(n, 0);
      rhs.assign(n, 0);
      sol.assign(n, 0);
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t c = start + (run0 + t) * stride;
        diag[t] = sys.ap[c];
        if (t > 0) lower[t] = -a_lo[c];
        if (t + 1 < n) upper[t] = -a_hi[c];
        double r = -sys.rhs[c];
        if (b_lo[c]) r += b_lo[c] * p[c - perp_stride];
        if (b_hi[c]) r += b_hi[c] * p[c + perp_stride];
        rhs[t] = r;
      }
      // Thomas elimination
      for (std::size_t t = 1; t < n; ++t) {
        if (diag[t - 1] == 0) continue;
        const double m = lower[t] / diag[t - 1];
        diag[t] -= m * upper[t - 1];
        rhs[t] -= m * rhs[t - 1];
      }
      for (std::size_t t = n; t-- > 0;) {
        double v = rhs[t];
        if (t + 1 < n) v -= upper[t] * sol[t + 1];
        sol[t] = diag[t] != 0 ? v / diag[t] : p[start + (run0 + t) * stride];
      }
      for (std::size_t t = 0; t < n; ++t) p[start + (run0 + t) * stride] = sol[t];
    }
  };

  for (std::size_t it = 0; it < cfg.max_pressure_iters; ++it) {
    // vertical lines (couple north/south exactly)
    for (std::size_t i = 0; i < nx; ++i)
      sweep_line(i, ny, nx, sys.as, sys.an, sys.aw, sys.ae, 1);
    // horizontal lines (couple east/west exactly)
    for (std::size_t j = 0; j < ny; ++j)
      sweep_line(j * nx, nx, 1, sys.aw, sys.ae, sys.as, sys.an, nx);
    rep.pressure_iters = it + 1;
    if ((it + 1) % 4 == 0 || it + 1 == cfg.max_pressure_iters) {
      pin_mean();
      res = poisson_residual(sys, p, nx, div_scale);
      rep.pressure_residual = res.scaled;
      // Near a steady state the pressure correction tends to zero and the
      // scaled residual becomes a noise/noise ratio; accept the solve when
      // the per-cell imbalance is far inside the divergence budget even if
      // that degenerate ratio sits above the target.
      if (res.max_cell <= 0.5 * cfg.divergence_tol &&
          (res.scaled <= cfg.residual_target || res.max_cell <= 1e-3 * cfg.divergence_tol))
        return rep;
#ifdef CFD_POISSON_TRACE
      if ((it + 1) % 4096 == 0)
        std::fprintf(stderr, "  [poisson] it=%zu scaled=%.3e max_cell=%.3e singular=%d\n",
                     it + 1, res.scaled, res.max_cell, int(singular));
#endif
    }
  }
  res = poisson_residual(sys, p, nx, div_scale);
  rep.pressure_residual = res.scaled;
  const bool ok = res.max_cell <= cfg.divergence_tol &&
                  (res.scaled <= cfg.residual_target ||
                   res.max_cell <= 1e-3 * cfg.divergence_tol);
  if (!ok)
    throw IterationLimitError("pressure solve did not reach the residual target", res.scaled);
  return rep;
}

// One CFL-limited substep; returns the max absolute velocity change.
double substep(FieldState& s, const OperatingParams& params, const SolverConfig& cfg, double dt,
               ResidualReport& rep) {
  const std::size_t nx = s.nx, ny = s.ny;
  const double nu = params.mu / params.rho;
  const Problem prob = params.problem;
  apply_bcs(s, prob);

  const std::vector<double> u0 = s.u, v0 = s.v;

  auto uat = [&](std::size_t i, std::size_t j) { return u0[j * (nx + 1) + i]; };
  auto vat = [&](std::size_t i, std::size_t j) { return v0[j * nx + i]; };
  auto fluid = [&](long i, long j) {
    return i >= 0 && j >= 0 && i < (long)nx && j < (long)ny && s.mask[j * nx + i];
  };

  // ---- advection (explicit first-order upwind), then implicit diffusion ----
  // u faces: interior i in 1..nx-1 between two fluid cells
  std::vector<double> rhs_u(u0.size()), rhs_v(v0.size());
  std::vector<std::uint8_t> solve_u(u0.size(), 0), solve_v(v0.size(), 0);

  const double lid = (prob == Problem::Cavity) ? s.u_bc : 0.0;

  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 1; i < nx; ++i) {
      if (!fluid(i - 1, j) || !fluid(i, j)) continue;
      const std::size_t f = j * (nx + 1) + i;
      solve_u[f] = 1;
      const double uc = uat(i, j);
      const double vc = 0.25 * (vat(i - 1, j) + vat(i, j) + vat(i - 1, j + 1) + vat(i, j + 1));
      // x-upwind: neighbors are u(i-1,j) / u(i+1,j) (boundary faces hold BCs)
      const double dudx = uc > 0 ? (uc - uat(i - 1, j)) / s.dx : (uat(i + 1, j) - uc) / s.dx;
      // y-upwind with tangential wall ghosts
      double u_s = (j > 0) ? uat(i, j - 1) : 2.0 * 0.0 - uc;          // bottom wall
      double u_n = (j + 1 < ny) ? uat(i, j + 1) : 2.0 * lid - uc;     // top wall / lid
      if (j > 0 && !fluid(i - 1, j - 1) && !fluid(i, j - 1)) u_s = -uc;  // solid below
      if (j + 1 < ny && !fluid(i - 1, j + 1) && !fluid(i, j + 1)) u_n = -uc;
      const double dudy = vc > 0 ? (uc - u_s) / s.dy : (u_n - uc) / s.dy;
      rhs_u[f] = uc - dt * (uc * dudx + vc * dudy);
    }

  for (std::size_t j = 1; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      if (!fluid(i, j - 1) || !fluid(i, j)) continue;
      const std::size_t f = j * nx + i;
      solve_v[f] = 1;
      const double vc = vat(i, j);
      const double uc = 0.25 * (uat(i, j - 1) + uat(i + 1, j - 1) + uat(i, j) + uat(i + 1, j));
      const double dvdy = vc > 0 ? (vc - vat(i, j - 1)) / s.dy : (vat(i, j + 1) - vc) / s.dy;
      double v_w = (i > 0) ? vat(i - 1, j) : -vc;                     // left wall/inlet (v=0)
      double v_e = (i + 1 < nx) ? vat(i + 1, j) : (has_outlet(prob) ? vc : -vc);
      if (i > 0 && !fluid(i - 1, j - 1) && !fluid(i - 1, j)) v_w = -vc;
      if (i + 1 < nx && !fluid(i + 1, j - 1) && !fluid(i + 1, j)) v_e = -vc;
      const double dvdx = uc > 0 ? (vc - v_w) / s.dx : (v_e - vc) / s.dx;
      rhs_v[f] = vc - dt * (uc * dvdx + vc * dvdy);
    }

  // implicit diffusion: (I - nu*dt*L) q = rhs, Gauss-Seidel sweeps
  const double cx = nu * dt / (s.dx * s.dx), cy = nu * dt / (s.dy * s.dy);
  auto diffuse = [&](std::vector<double>& q, const std::vector<double>& rhs,
                     const std::vector<std::uint8_t>& solve, bool is_u) {
    if (cx + cy < 1e-14) {  // diffusion negligible: explicit value
      for (std::size_t f = 0; f < q.size(); ++f)
        if (solve[f]) q[f] = rhs[f];
      return;
    }
    const std::size_t stride = is_u ? nx + 1 : nx;
    for (std::size_t it = 0; it < cfg.max_diffusion_iters; ++it) {
      double dmax = 0;
      for (std::size_t f = 0; f < q.size(); ++f) {
        if (!solve[f]) continue;
        const std::size_t i = f % stride, j = f / stride;
        double num = rhs[f], den = 1.0;
        // west (solved u faces always have a west array entry)
        if (i > 0) {
          num += cx * q[f - 1];
          den += cx;
        } else {
          den += 2 * cx;  // v ghost across the left wall/inlet: v = -v_P
        }
        // east
        if (i + 1 < stride) {
          num += cx * q[f + 1];
          den += cx;
        } else if (has_outlet(prob)) {
          num += cx * q[f];  // zero-gradient ghost at the outlet
          den += cx;
        } else {
          den += 2 * cx;  // wall ghost
        }
        // south (solved v faces always have a south array entry)
        if (j > 0) {
          num += cy * q[f - stride];
          den += cy;
        } else {
          den += 2 * cy;  // ghost across the bottom wall (wall value 0)
        }
        // north
        const std::size_t jmax = is_u ? ny - 1 : ny;
        if (j < jmax) {
          num += cy * q[f + stride];
          den += cy;
        } else {
          const double wall = is_u ? lid : 0.0;
          num += cy * 2 * wall;  // lid / top-wall ghost
          den += 2 * cy;
        }
        const double qn = num / den;
        dmax = std::max(dmax, std::abs(qn - q[f]));
        q[f] = qn;
      }
      if (dmax < 1e-12) break;
    }
  };
  diffuse(s.u, rhs_u, solve_u, true);
  diffuse(s.v, rhs_v, solve_v, false);
  apply_bcs(s, prob);

  // ---- global mass balance for open domains (makes outflow match inflow) --
  if (has_outlet(prob)) {
    double inflow = 0, outflow = 0;
    std::size_t open = 0;
    for (std::size_t j = 0; j < ny; ++j) {
      inflow += s.u[j * (nx + 1) + 0] * s.dy;
      if (s.mask[j * nx + nx - 1]) {
        outflow += s.u[j * (nx + 1) + nx] * s.dy;
        ++open;
      }
    }
    if (open) {
      const double corr = (inflow - outflow) / (double(open) * s.dy);
      for (std::size_t j = 0; j < ny; ++j)
        if (s.mask[j * nx + nx - 1]) s.u[j * (nx + 1) + nx] += corr;
    }
  }

  // ---- pressure projection ----
  auto sys = assemble_poisson(s, prob, params.rho, dt);
  const ResidualReport prep = solve_poisson(sys, s.p, nx, ny, dt / params.rho, cfg);
  rep.pressure_residual = prep.pressure_residual;
  rep.pressure_iters += prep.pressure_iters;

  if (!has_outlet(prob)) {  // remove the free constant mode of the closed domain
    double mean = 0;
    std::size_t nfluid = 0;
    for (std::size_t c = 0; c < s.p.size(); ++c)
      if (s.mask[c]) {
        mean += s.p[c];
        ++nfluid;
      }
    if (nfluid) {
      mean /= double(nfluid);
      for (std::size_t c = 0; c < s.p.size(); ++c)
        if (s.mask[c]) s.p[c] -= mean;
    }
  }

  const double cu = dt / params.rho;
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 1; i < nx; ++i) {
      const std::size_t f = j * (nx + 1) + i;
      if (!solve_u[f]) continue;
      s.u[f] -= cu * (s.p[j * nx + i] - s.p[j * nx + i - 1]) / s.dx;
    }
  for (std::size_t j = 1; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      const std::size_t f = j * nx + i;
      if (!solve_v[f]) continue;
      s.v[f] -= cu * (s.p[j * nx + i] - s.p[(j - 1) * nx + i]) / s.dy;
    }
  if (has_outlet(prob)) {  // outlet faces corrected against the p=0 ghost
    for (std::size_t j = 0; j < ny; ++j)
      if (s.mask[j * nx + nx - 1])
        s.u[j * (nx + 1) + nx] -= cu * (0.0 - s.p[j * nx + nx - 1]) / s.dx;
  }

  double dmax = 0;
  for (std::size_t f = 0; f < s.u.size(); ++f) dmax = std::max(dmax, std::abs(s.u[f] - u0[f]));
  for (std::size_t f = 0; f < s.v.size(); ++f) dmax = std::max(dmax, std::abs(s.v[f] - v0[f]));
  return dmax;
}

}  // namespace

FieldState init_state(const OperatingParams& params, const SolverConfig& cfg) {
  params.validate();
  cfg.validate();
  FieldState s;
  s.nx = cfg.nx;
  s.ny = cfg.ny;
  s.dx = params.domain_x() / double(cfg.nx);
  s.dy = params.domain_y() / double(cfg.ny);
  s.u.assign((cfg.nx + 1) * cfg.ny, 0.0);
  s.v.assign(cfg.nx * (cfg.ny + 1), 0.0);
  s.p.assign(cfg.nx * cfg.ny, 0.0);
  s.mask = build_geometry_mask(params, cfg.nx, cfg.ny);
  s.u_bc = params.u_b * velocity_guard_scale(params, cfg);
  apply_bcs(s, params.problem);
  return s;
}

ResidualReport advance_timestep(FieldState& state, const OperatingParams& params,
                                const SolverConfig& cfg) {
  ResidualReport rep;
  double remaining = params.dt;
  const double hmin = std::min(state.dx, state.dy);
  while (remaining > 1e-15) {
    double vmax = 0;
    for (double x : state.u) vmax = std::max(vmax, std::abs(x));
    for (double x : state.v) vmax = std::max(vmax, std::abs(x));
    vmax = std::max(vmax, std::abs(state.u_bc));
    double dt_s = remaining;
    if (vmax > 0) dt_s = std::min(dt_s, cfg.max_cfl * hmin / vmax);
    const double change = substep(state, params, cfg, dt_s, rep);
    ++rep.substeps;
    remaining -= dt_s;
    if (change < cfg.steady_tol) break;  // numerical fixed point reached
    if (rep.substeps > cfg.max_substeps_per_frame)
      throw IterationLimitError("substep budget exhausted for one frame", change);
  }
  return rep;
}

double scaled_residual(const std::vector<CellCoeffs>& coeffs, const std::vector<double>& phi) {
  double num = 0, den = 0;
  for (std::size_t c = 0; c < coeffs.size(); ++c) {
    double acc = coeffs[c].b;
    for (const auto& [idx, a] : coeffs[c].nb) acc += a * phi.at(idx);
    num += std::abs(acc - coeffs[c].a_p * phi[c]);
    den += std::abs(coeffs[c].a_p * phi[c]);
  }
  if (den == 0) return num == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

datakit::CaseRecord solve_case(const OperatingParams& params, const SolverConfig& cfg) {
  params.validate();
  cfg.validate();
  if (params.problem == Problem::Dam)
    throw CapabilityError(
        "dam flow generation requires a two-phase solver; ingest external data instead");

  FieldState s = init_state(params, cfg);

  datakit::CaseRecord rec;
  rec.meta.problem = problem_name(params.problem);
  rec.meta.subset = subset_name(params.subset);
  rec.meta.case_id = params.case_id.empty()
                         ? std::string(problem_name(params.problem)) + "_custom"
                         : params.case_id;
  rec.meta.params = params.named();
  rec.meta.dt = params.dt;
  rec.meta.extents_m = {params.domain_y(), params.domain_x()};
  rec.meta.resolution = {cfg.ny, cfg.nx};
  rec.meta.channels = {"u", "v", "p"};
  const double guard = velocity_guard_scale(params, cfg);
  rec.meta.flags["velocity_rescaled"] = guard < 1.0;
  rec.mask = s.mask;

  auto emit_frame = [&]() {
    const std::size_t nx = s.nx, ny = s.ny;
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i)
        rec.frames.push_back(
            float(0.5 * (s.u[j * (nx + 1) + i] + s.u[j * (nx + 1) + i + 1])));
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i)
        rec.frames.push_back(float(0.5 * (s.v[j * nx + i] + s.v[(j + 1) * nx + i])));
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) rec.frames.push_back(float(s.p[j * nx + i]));
  };

  emit_frame();
  for (std::size_t f = 1; f < cfg.frames; ++f) {
    advance_timestep(s, params, cfg);
    if (!s.finite())
      throw SolverBlowupError("non-finite field during stepping", int(f));
    if (s.max_divergence() > cfg.divergence_tol)
      throw SolverBlowupError("divergence bound violated", int(f));
    emit_frame();
  }
  rec.validate();
  return rec;
}

}  // namespace cfdbench::flowgen
