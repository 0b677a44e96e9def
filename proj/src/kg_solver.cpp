#include "kgli/kg_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "kgli/numerics.hpp"

namespace kgli {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Coefficients of the equation divided by hbar^2: only these ratios enter.
struct Ratios {
  double c;
  double alpha;  // q / hbar
  double mu;     // m / hbar
};

Ratios ratios(const PhysicalParams& p) { return {p.c, p.q / p.hbar, p.m / p.hbar}; }

double at(const std::vector<double>& v, std::size_t i) { return v.empty() ? 0.0 : v[i]; }

void require_size(const Levels& v, const Lattice1D& lattice, const char* what) {
  if (v.size() != static_cast<std::size_t>(lattice.points))
    throw InputError(std::string(what) + ": level size does not match the lattice");
}

// c^2 d_xx phi - i c alpha (d_x(A phi) + A d_x phi) - (alpha^2 A^2 + mu^2 c^4 - alpha^2 Phi^2) phi
//   - i alpha (d_t Phi) phi
Levels spatial_operator(const Lattice1D& lattice, const Ratios& r, const Levels& phi, const Potentials& pots) {
  const auto n = static_cast<std::size_t>(lattice.points);
  const double h = lattice.spacing();
  const double c2h2 = r.c * r.c / (h * h);
  const double mass = r.mu * r.mu * r.c * r.c * r.c * r.c;
  const Complex I(0.0, 1.0);
  Levels out(n);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const std::size_t ip = i + 1 == n ? 0 : i + 1;
      const std::size_t im = i == 0 ? n - 1 : i - 1;
      Complex w = c2h2 * (phi[ip] - 2.0 * phi[i] + phi[im]);
      const double a = at(pots.ax, i);
      const double f = at(pots.phi, i);
      if (!pots.ax.empty()) {
        const Complex sym = (pots.ax[ip] * phi[ip] - pots.ax[im] * phi[im] + a * (phi[ip] - phi[im])) / (2.0 * h);
        w -= I * (r.c * r.alpha) * sym;
      }
      w -= (r.alpha * r.alpha * (a * a - f * f) + mass) * phi[i];
      if (!pots.phi_dot.empty()) w -= I * r.alpha * pots.phi_dot[i] * phi[i];
      out[i] = w;
    }
  });
  return out;
}

void require_finite(const Levels& v, long step) {
  for (const auto& z : v)
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
      throw DivergenceError("non-finite field value at step " + std::to_string(step), step);
}

}  // namespace

void Lattice1D::validate() const {
  if (points < 3) throw InputError("lattice: at least 3 points are required");
  if (!(length > 0.0) || !std::isfinite(length) || !std::isfinite(origin))
    throw InputError("lattice: length must be positive and finite");
}

void Potentials::validate(const Lattice1D& lattice) const {
  for (const auto* v : {&phi, &ax, &phi_dot}) {
    if (!v->empty() && v->size() != static_cast<std::size_t>(lattice.points))
      throw InputError("potentials: size does not match the lattice");
    for (double x : *v)
      if (!std::isfinite(x)) throw InputError("potentials: non-finite value");
  }
}

double dispersion_omega(double k, const PhysicalParams& p) {
  const double mu = p.m / p.hbar;
  return std::sqrt(p.c * p.c * k * k + mu * mu * std::pow(p.c, 4));
}

double dispersion_omega(double k, const PhysicalParams& p, double phi0, double ax0) {
  const auto r = ratios(p);
  const double kk = k - r.alpha * ax0 / p.c;
  return std::sqrt(p.c * p.c * kk * kk + r.mu * r.mu * std::pow(p.c, 4)) + r.alpha * phi0;
}

PlaneWave plane_wave(double k, const PhysicalParams& params, const Lattice1D& lattice, double t, int branch) {
  lattice.validate();
  const double cycles = k * lattice.length / kTwoPi;
  if (std::abs(cycles - std::round(cycles)) > 1e-9)
    throw InputError("plane_wave: k L / 2 pi = " + std::to_string(cycles) + " is not an integer");
  if (branch != 1 && branch != -1) throw InputError("plane_wave: branch must be +1 or -1");
  PlaneWave out;
  out.omega = dispersion_omega(k, params);
  out.values.resize(static_cast<std::size_t>(lattice.points));
  for (int i = 0; i < lattice.points; ++i)
    out.values[static_cast<std::size_t>(i)] = std::polar(1.0, k * lattice.x(i) - branch * out.omega * t);
  return out;
}

std::vector<std::string> check_stability(const Lattice1D& lattice, const PhysicalParams& params, double dt,
                                         const Potentials& pots, const StabilityOptions& opts) {
  lattice.validate();
  params.validate();
  pots.validate(lattice);
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ParameterError("time step must be positive");
  const double h = lattice.spacing();
  const double cfl = params.c * dt / h;
  if (cfl > opts.cfl_max) {
    std::ostringstream msg;
    msg << "CFL violation: c dt / dx = " << cfl << " exceeds " << opts.cfl_max;
    throw ParameterError(msg.str());
  }
  const auto r = ratios(params);
  const double bound = dt * dt * (4.0 * params.c * params.c / (h * h) + r.mu * r.mu * std::pow(params.c, 4));
  if (bound >= 4.0) {
    std::ostringstream msg;
    msg << "mass term unstable: dt^2 (4 c^2/dx^2 + m^2 c^4/hbar^2) = " << bound << " >= 4";
    throw ParameterError(msg.str());
  }
  std::vector<std::string> warnings;
  double beta = 0.0;
  for (double f : pots.phi) beta = std::max(beta, std::abs(r.alpha * f * dt));
  if (beta > opts.potential_warn) {
    std::ostringstream msg;
    msg << "q Phi dt / hbar reaches " << beta << " (> " << opts.potential_warn << ")";
    warnings.push_back(msg.str());
  }
  return warnings;
}

SolverState make_state(const Lattice1D& lattice, const PhysicalParams& params, double dt, Levels prev,
                       Levels curr, double t0, const StabilityOptions& opts) {
  check_stability(lattice, params, dt, Potentials{}, opts);
  require_size(prev, lattice, "make_state");
  require_size(curr, lattice, "make_state");
  return SolverState{lattice, params, dt, t0, 1, std::move(prev), std::move(curr)};
}

Levels second_time_derivative(const Lattice1D& lattice, const PhysicalParams& params, const Levels& phi,
                              const Levels& phi_t, const Potentials& pots) {
  require_size(phi, lattice, "second_time_derivative");
  require_size(phi_t, lattice, "second_time_derivative");
  const auto r = ratios(params);
  auto out = spatial_operator(lattice, r, phi, pots);
  const Complex I(0.0, 1.0);
  if (!pots.phi.empty())
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= 2.0 * I * r.alpha * pots.phi[i] * phi_t[i];
  return out;
}

Levels taylor_second_level(const Lattice1D& lattice, const PhysicalParams& params, double dt, const Levels& phi,
                           const Levels& phi_t, const Potentials& pots) {
  const auto tt = second_time_derivative(lattice, params, phi, phi_t, pots);
  Levels out(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) out[i] = phi[i] + dt * phi_t[i] + 0.5 * dt * dt * tt[i];
  return out;
}

std::pair<Levels, Levels> wave_packet(const Lattice1D& lattice, const PhysicalParams& params, double dt,
                                      double x0, double sigma, double k0) {
  lattice.validate();
  if (!(sigma > 0.0)) throw ParameterError("wave_packet: sigma must be positive");
  const int n = lattice.points;
  Levels f(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double d = lattice.x(i) - x0;
    f[static_cast<std::size_t>(i)] = std::polar(std::exp(-d * d / (2.0 * sigma * sigma)), k0 * lattice.x(i));
  }
  Levels a(static_cast<std::size_t>(n));
  std::vector<double> k(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) {
    const int mm = m < (n + 1) / 2 ? m : m - n;
    k[static_cast<std::size_t>(m)] = kTwoPi * mm / lattice.length;
    Complex s = 0.0;
    for (int i = 0; i < n; ++i) s += f[static_cast<std::size_t>(i)] * std::polar(1.0, -k[static_cast<std::size_t>(m)] * lattice.x(i));
    a[static_cast<std::size_t>(m)] = s / static_cast<double>(n);
  }
  Levels l0(static_cast<std::size_t>(n)), l1(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int m = 0; m < n; ++m) {
      const double km = k[static_cast<std::size_t>(m)];
      const Complex base = a[static_cast<std::size_t>(m)] * std::polar(1.0, km * lattice.x(i));
      l0[static_cast<std::size_t>(i)] += base;
      l1[static_cast<std::size_t>(i)] += base * std::polar(1.0, -dispersion_omega(km, params) * dt);
    }
  return {std::move(l0), std::move(l1)};
}

SolverState step(const SolverState& state, const Potentials& pots) {
  SolverState next = state;
  advance(next, pots);
  return next;
}

void advance(SolverState& s, const Potentials& pots) {
  require_size(s.prev, s.lattice, "step");
  require_size(s.curr, s.lattice, "step");
  pots.validate(s.lattice);
  const auto r = ratios(s.params);
  const double dt = s.dt;
  const auto w = spatial_operator(s.lattice, r, s.curr, pots);
  Levels next(s.curr.size());
  for (std::size_t i = 0; i < next.size(); ++i) {
    const double beta = r.alpha * at(pots.phi, i) * dt;
    next[i] = (2.0 * s.curr[i] - Complex(1.0, -beta) * s.prev[i] + dt * dt * w[i]) / Complex(1.0, beta);
  }
  require_finite(next, s.n + 1);
  s.prev = std::move(s.curr);
  s.curr = std::move(next);
  ++s.n;
}

std::vector<double> current_j(const Lattice1D& lattice, const PhysicalParams& params, const Levels& phi,
                              const Potentials& pots) {
  require_size(phi, lattice, "current_j");
  const auto r = ratios(params);
  const auto n = phi.size();
  const double h = lattice.spacing();
  std::vector<double> j(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ip = i + 1 == n ? 0 : i + 1;
    const std::size_t im = i == 0 ? n - 1 : i - 1;
    const Complex dx = (phi[ip] - phi[im]) / (2.0 * h);
    j[i] = std::imag(std::conj(phi[i]) * dx) / r.mu - r.alpha / (r.mu * r.c) * at(pots.ax, i) * std::norm(phi[i]);
  }
  return j;
}

namespace {

// rho between levels a (earlier) and b.
std::vector<double> half_level_rho(const Ratios& r, double dt, const Levels& a, const Levels& b,
                                   const Potentials& pots) {
  std::vector<double> rho(a.size());
  const double k = 1.0 / (r.mu * r.c * r.c);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Complex mid = 0.5 * (a[i] + b[i]);
    const Complex dt_phi = (b[i] - a[i]) / dt;
    rho[i] = -k * std::imag(std::conj(mid) * dt_phi) - k * r.alpha * at(pots.phi, i) * std::norm(mid);
  }
  return rho;
}

double lattice_sum(const std::vector<double>& v, double h) {
  return compensated_sum(v) * h;
}

}  // namespace

CurrentDensity conserved_current(const SolverState& s, const Potentials& pots) {
  require_size(s.prev, s.lattice, "conserved_current");
  require_size(s.curr, s.lattice, "conserved_current");
  CurrentDensity out;
  out.rho = half_level_rho(ratios(s.params), s.dt, s.prev, s.curr, pots);
  const auto a = current_j(s.lattice, s.params, s.prev, pots);
  const auto b = current_j(s.lattice, s.params, s.curr, pots);
  out.j.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.j[i] = 0.5 * (a[i] + b[i]);
  return out;
}

std::vector<double> continuity_residual(const Lattice1D& lattice, const PhysicalParams& params, double dt,
                                        const Levels& before, const Levels& mid, const Levels& after,
                                        const Potentials& pots) {
  require_size(before, lattice, "continuity_residual");
  require_size(after, lattice, "continuity_residual");
  const auto r = ratios(params);
  const auto lo = half_level_rho(r, dt, before, mid, pots);
  const auto hi = half_level_rho(r, dt, mid, after, pots);
  const auto j = current_j(lattice, params, mid, pots);
  const auto n = j.size();
  const double h = lattice.spacing();
  std::vector<double> res(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ip = i + 1 == n ? 0 : i + 1;
    const std::size_t im = i == 0 ? n - 1 : i - 1;
    res[i] = (hi[i] - lo[i]) / dt + (j[ip] - j[im]) / (2.0 * h);
  }
  return res;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

SolveResult solve(const Levels& phi0, const Levels& phi1, const Potentials& pots, long n_steps,
                  const PhysicalParams& params, const Lattice1D& lattice, double dt, const SolveOptions& opts) {
  if (n_steps < 0) throw ParameterError("solve: negative step count");
  if (opts.record_every < 1) throw ParameterError("solve: record_every must be at least 1");
  SolveResult res{{}, {}, {}, check_stability(lattice, params, dt, pots, opts.stability),
                  make_state(lattice, params, dt, phi0, phi1, opts.t0, opts.stability)};
  require_finite(phi0, 0);
  require_finite(phi1, 1);
  auto& s = res.final_state;
  const double h = lattice.spacing();
  const auto r = ratios(params);

  auto diagnose = [&](const Levels* before) {
    StepDiagnostics d;
    d.step = s.n;
    d.t = s.time();
    std::vector<double> dens(s.curr.size());
    for (std::size_t i = 0; i < dens.size(); ++i) dens[i] = std::norm(s.curr[i]);
    d.norm = lattice_sum(dens, h);
    d.charge = lattice_sum(half_level_rho(r, dt, s.prev, s.curr, pots), h);
    if (before) d.continuity = max_abs(continuity_residual(lattice, params, dt, *before, s.prev, s.curr, pots));
    res.diagnostics.push_back(d);
  };

  res.history.push_back(phi0);
  res.recorded.push_back(0);
  if (opts.record_every == 1 || n_steps == 0) {
    res.history.push_back(phi1);
    res.recorded.push_back(1);
  }
  if (n_steps == 0) return res;
  diagnose(nullptr);
  for (long k = 0; k < n_steps; ++k) {
    Levels before = s.prev;
    advance(s, pots);
    diagnose(&before);
    if (s.n % opts.record_every == 0) {
      res.history.push_back(s.curr);
      res.recorded.push_back(s.n);
    }
  }
  return res;
}

PhysicalParams scale_transform(const PhysicalParams& params, double xi) {
  if (!(xi > 0.0) || !std::isfinite(xi)) throw ParameterError("scale_transform: xi must be positive");
  PhysicalParams out = params;
  out.hbar *= xi;
  out.q *= xi;
  out.m *= xi;
  return out;
}

ComplexField history_field(const SolveResult& result, const Lattice1D& lattice, double dt, double c) {
  const auto& rec = result.recorded;
  if (rec.size() < 4) throw InputError("history_field: at least 4 recorded levels are required");
  const long stride = rec[1] - rec[0];
  for (std::size_t i = 1; i < rec.size(); ++i)
    if (rec[i] - rec[i - 1] != stride) throw InputError("history_field: recorded levels are not evenly spaced");
  const double step = c * dt * static_cast<double>(stride);
  const double t_first = result.final_state.t0 + static_cast<double>(rec.front()) * dt;
  const int levels = static_cast<int>(rec.size());
  const SpacetimeGrid g = SpacetimeGrid::make_1p1(c * t_first - 0.5 * step, step * levels, levels, lattice.origin,
                                                  lattice.length, lattice.points, Boundary::Periodic);
  ComplexField out(g);
  for (int n = 0; n < levels; ++n)
    for (int i = 0; i < lattice.points; ++i)
      out.values[static_cast<std::size_t>(n) * static_cast<std::size_t>(lattice.points) + static_cast<std::size_t>(i)] =
          result.history[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)];
  return out;
}

ScalarField probability_density(const ComplexField& phi, bool normalise) {
  ScalarField out(phi.grid);
  out.defined = phi.defined;
  for (std::size_t p = 0; p < out.values.size(); ++p) out.values[p] = std::norm(phi.values[p]);
  if (normalise) {
    const double z = compensated_sum(out.values) * phi.grid.cell_volume();
    if (!(z > 0.0)) throw InputError("probability_density: the field vanishes");
    for (auto& v : out.values) v /= z;
  }
  return out;
}

}  // namespace kgli
