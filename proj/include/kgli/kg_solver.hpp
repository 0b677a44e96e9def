#pragma once

// Explicit time-domain solver for the minimally coupled Klein-Gordon
// equation on a periodic 1D lattice,
//   (1/c^2)(i hbar d_t - q Phi)^2 phi = [((hbar/i) d_x - (q/c) A_x)^2 + m^2 c^2] phi,
// with analytic oracles and current diagnostics.

#include <string>
#include <utility>
#include <vector>

#include "kgli/spacetime.hpp"

namespace kgli {

using Levels = std::vector<Complex>;

/// Periodic cell-centred lattice: x_i = origin + (i + 1/2) length / points.
struct Lattice1D {
  double origin = 0.0;
  double length = 1.0;
  int points = 16;

  double spacing() const { return length / points; }
  double x(int i) const { return origin + (i + 0.5) * spacing(); }
  void validate() const;
};

/// Static scalar and vector potentials sampled on the lattice. Empty vectors
/// mean zero. phi_dot (d_t Phi) is only needed for time-dependent Phi.
struct Potentials {
  std::vector<double> phi;
  std::vector<double> ax;
  std::vector<double> phi_dot;

  bool empty() const { return phi.empty() && ax.empty() && phi_dot.empty(); }
  void validate(const Lattice1D& lattice) const;
};

struct StabilityOptions {
  double cfl_max = 0.9;          // c dt / dx
  double potential_warn = 0.1;   // |q Phi dt / hbar| above this is reported
};

/// Two consecutive levels phi^{n-1}, phi^n at t0 + (n-1) dt and t0 + n dt.
struct SolverState {
  Lattice1D lattice;
  PhysicalParams params;
  double dt = 0.0;
  double t0 = 0.0;
  long n = 1;
  Levels prev;
  Levels curr;

  double time() const { return t0 + static_cast<double>(n) * dt; }
};

/// Positive branch sqrt(c^2 k^2 + m^2 c^4 / hbar^2).
double dispersion_omega(double k, const PhysicalParams& params);

/// Same with a constant vector potential: sqrt(c^2 (k - q A / (hbar c))^2 + m^2 c^4 / hbar^2) + q Phi / hbar.
double dispersion_omega(double k, const PhysicalParams& params, double phi0, double ax0);

struct PlaneWave {
  Levels values;
  double omega = 0.0;
};

/// exp(i(k x - omega t)) for branch +1, exp(i(k x + omega t)) for branch -1.
/// Throws InputError unless k L / 2 pi is an integer.
PlaneWave plane_wave(double k, const PhysicalParams& params, const Lattice1D& lattice, double t = 0.0,
                     int branch = 1);

/// Throws ParameterError if c dt / dx exceeds cfl_max or the mass term makes
/// the explicit scheme unstable (dt^2 (4 c^2 / dx^2 + m^2 c^4 / hbar^2) >= 4).
/// Returns warnings (large q Phi dt / hbar).
std::vector<std::string> check_stability(const Lattice1D& lattice, const PhysicalParams& params, double dt,
                                         const Potentials& pots, const StabilityOptions& opts = {});

/// Builds a state from two levels after the stability check.
SolverState make_state(const Lattice1D& lattice, const PhysicalParams& params, double dt, Levels prev,
                       Levels curr, double t0 = 0.0, const StabilityOptions& opts = {});

/// d_tt phi implied by the equation for given phi and d_t phi.
Levels second_time_derivative(const Lattice1D& lattice, const PhysicalParams& params, const Levels& phi,
                              const Levels& phi_t, const Potentials& pots);

/// Second level from (phi, d_t phi) by a second-order Taylor step.
Levels taylor_second_level(const Lattice1D& lattice, const PhysicalParams& params, double dt,
                           const Levels& phi, const Levels& phi_t, const Potentials& pots);

/// Positive-frequency Gaussian packet exp(-(x - x0)^2 / (2 sigma^2) + i k0 x)
/// (projected onto positive frequencies by a discrete Fourier transform),
/// returned at t0 and t0 + dt.
std::pair<Levels, Levels> wave_packet(const Lattice1D& lattice, const PhysicalParams& params, double dt,
                                      double x0, double sigma, double k0);

/// One explicit step. Coefficients use only q/hbar and m/hbar.
/// Throws DivergenceError on a non-finite value.
SolverState step(const SolverState& state, const Potentials& pots);
void advance(SolverState& state, const Potentials& pots);

struct CurrentDensity {
  std::vector<double> rho;  // at t_{n-1/2}
  std::vector<double> j;    // at t_{n-1/2} (average of the two levels)
};

/// rho = (i hbar / 2 m c^2)(phi* d_t phi - phi d_t phi*) - (q Phi / m c^2)|phi|^2,
/// j = -(i hbar / 2m)(phi* d_x phi - phi d_x phi*) - (q / m c) A_x |phi|^2,
/// centred between the two levels of the state.
CurrentDensity conserved_current(const SolverState& state, const Potentials& pots);

/// Current at an integer level (d_x by centred differences).
std::vector<double> current_j(const Lattice1D& lattice, const PhysicalParams& params, const Levels& phi,
                              const Potentials& pots);

/// d_t rho + d_x j at the middle of three consecutive levels.
std::vector<double> continuity_residual(const Lattice1D& lattice, const PhysicalParams& params, double dt,
                                        const Levels& before, const Levels& mid, const Levels& after,
                                        const Potentials& pots);

double max_abs(const std::vector<double>& v);

struct StepDiagnostics {
  long step = 0;
  double t = 0.0;
  double norm = 0.0;        // sum |phi|^2 dx
  double charge = 0.0;      // sum rho dx at the half level
  double continuity = 0.0;  // max |d_t rho + d_x j| at the previous level
};

struct SolveOptions {
  StabilityOptions stability;
  int record_every = 1;
  double t0 = 0.0;
};

struct SolveResult {
  std::vector<Levels> history;  // recorded levels
  std::vector<long> recorded;   // their step indices (level 0 is phi0)
  std::vector<StepDiagnostics> diagnostics;
  std::vector<std::string> warnings;
  SolverState final_state;
};

/// Steps from levels (phi0, phi1) n_steps times, ending at level n_steps + 1.
/// Records every record_every-th level, starting with level 0; with
/// n_steps = 0 the two initial levels are returned.
SolveResult solve(const Levels& phi0, const Levels& phi1, const Potentials& pots, long n_steps,
                  const PhysicalParams& params, const Lattice1D& lattice, double dt, const SolveOptions& opts = {});

/// hbar, q and m scaled by xi; c unchanged. Throws ParameterError for xi <= 0.
PhysicalParams scale_transform(const PhysicalParams& params, double xi);

/// Recorded history as a space-time field: axis 0 is x0 = c t (cell-centred on
/// the recorded levels), axis 1 the lattice.
ComplexField history_field(const SolveResult& result, const Lattice1D& lattice, double dt, double c);

/// |phi|^2; with normalise, divided by its quadrature sum over the grid.
ScalarField probability_density(const ComplexField& phi, bool normalise = false);

}  // namespace kgli
