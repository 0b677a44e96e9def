#pragma once

// Trigonometric and free-particle fields with exact derivatives, used as
// oracles by the verify suites and the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "kgli/functionals.hpp"
#include "kgli/spacetime.hpp"

namespace kgli::analytic {

struct TrigMode {
  double amp;
  std::array<double, 4> k;
  double phase;
};

/// f(x) = offset + sum_m amp_m sin(k_m . x + phase_m)
struct TrigScalar {
  double offset = 0.0;
  std::vector<TrigMode> modes;

  ScalarJet operator()(const FourVector& x) const {
    ScalarJet j;
    j.value = offset;
    for (const auto& m : modes) {
      double arg = m.phase;
      for (int a = 0; a < 4; ++a) arg += m.k[static_cast<std::size_t>(a)] * x[a];
      const double s = std::sin(arg), c = std::cos(arg);
      j.value += m.amp * s;
      for (int a = 0; a < 4; ++a) {
        const double ka = m.k[static_cast<std::size_t>(a)];
        j.d[a] += m.amp * ka * c;
        for (int b = 0; b < 4; ++b) j.dd[a][b] -= m.amp * ka * m.k[static_cast<std::size_t>(b)] * s;
      }
    }
    return j;
  }
};

/// Modes with wave numbers that are integer multiples of 2 pi / L on each of
/// the first `axes` axes, so the field is periodic on the box.
inline TrigScalar random_trig(std::mt19937_64& gen, int axes, const std::array<double, 4>& L,
                              int modes = 3, double amp = 1.0, int kmax = 2) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> ki(-kmax, kmax);
  TrigScalar f;
  for (int m = 0; m < modes; ++m) {
    TrigMode mode{amp * u(gen), {}, 3.14159 * u(gen)};
    for (int a = 0; a < axes; ++a)
      mode.k[static_cast<std::size_t>(a)] = 2.0 * 3.141592653589793 * ki(gen) / L[static_cast<std::size_t>(a)];
    f.modes.push_back(mode);
  }
  return f;
}

struct TrigVector {
  std::array<TrigScalar, 4> comp;

  VectorJet operator()(const FourVector& x) const {
    VectorJet v;
    for (int nu = 0; nu < 4; ++nu) {
      const auto j = comp[static_cast<std::size_t>(nu)](x);
      v.value[nu] = j.value;
      for (int mu = 0; mu < 4; ++mu) v.d[mu][nu] = j.d[mu];
    }
    return v;
  }
};

inline TrigVector random_trig_vector(std::mt19937_64& gen, int axes, const std::array<double, 4>& L,
                                     double amp = 1.0) {
  TrigVector v;
  for (int nu = 0; nu < 4; ++nu)
    v.comp[static_cast<std::size_t>(nu)] = nu < axes ? random_trig(gen, axes, L, 2, amp) : TrigScalar{};
  return v;
}

template <class Fn>
ScalarJetField sample_jets(const SpacetimeGrid& g, const Fn& f) {
  return sample<ScalarJet>(g, f);
}

template <class Fn>
VectorJetField sample_vector_jets(const SpacetimeGrid& g, const Fn& f) {
  return sample<VectorJet>(g, f);
}

/// Free-particle action S = E(p) x^0 / c - p x^1 + beta p^2 / 2 (physical
/// units, 1+1D): the envelope of plane-wave actions, with p(x) fixed by
/// p (c x^0 / E + beta) = x^1. Centered differences are not exact on it.
struct BeamAction {
  double m = 1.0, c = 1.0, beta = 0.7;

  double energy(double p) const { return std::sqrt(p * p * c * c + m * m * c * c * c * c); }
  double momentum(const FourVector& x) const {
    double p = 0.0;
    for (int it = 0; it < 50; ++it) {
      const double E = energy(p);
      const double g = p * (x[0] * c / E + beta) - x[1];
      const double dg = x[0] * c / E - x[0] * c * p * p * c * c / (E * E * E) + beta;
      const double step = g / dg;
      p -= step;
      if (std::abs(step) < 1e-17) break;
    }
    return p;
  }
  ScalarJet operator()(const FourVector& x) const {
    const double p = momentum(x);
    const double E = energy(p);
    ScalarJet j;
    j.value = E * x[0] / c - p * x[1] + 0.5 * beta * p * p;
    j.d[0] = E / c;
    j.d[1] = -p;
    return j;
  }
};

inline ScalarField values_of(const ScalarJetField& f) {
  ScalarField out(f.grid);
  for (std::size_t p = 0; p < f.grid.size(); ++p) out.values[p] = f.values[p].value;
  return out;
}

/// exp(f) with jets by the chain rule: a strictly positive density.
inline ScalarJet positive_jet(const ScalarJet& f) {
  ScalarJet p;
  p.value = std::exp(f.value);
  for (int a = 0; a < 4; ++a) {
    p.d[a] = p.value * f.d[a];
    for (int b = 0; b < 4; ++b) p.dd[a][b] = p.value * (f.dd[a][b] + f.d[a] * f.d[b]);
  }
  return p;
}

/// U^mu = d^mu S (indices raised with the metric).
inline VectorJet pure_gauge_jet(const ScalarJet& s) {
  VectorJet v;
  for (int nu = 0; nu < 4; ++nu) {
    const double sg = nu == 0 ? 1.0 : -1.0;
    v.value[nu] = sg * s.d[nu];
    for (int mu = 0; mu < 4; ++mu) v.d[mu][nu] = sg * s.dd[mu][nu];
  }
  return v;
}

/// Uniform P with the per-mass plane-wave action S = k x^1 - w x^0 on a
/// periodic 1+1D grid (windings set from the box), normalised.
inline PolarPair free_particle_pair(const SpacetimeGrid& g, double k, double w) {
  PolarPair pair{ScalarField(g), ActionField{ScalarField(g)}};
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto x = g.position(p);
    pair.P.values[p] = 1.0;
    pair.S.S.values[p] = k * x[1] - w * x[0];
  }
  pair.S.winding[0] = -w * g.extent(0);
  pair.S.winding[1] = k * g.extent(1);
  normalise(pair);
  return pair;
}

/// Sum of six random periodic Fourier modes (|k| <= 3 per axis), scaled to
/// max |n| = 1.
inline ScalarField periodic_noise(const SpacetimeGrid& g, std::mt19937_64& gen) {
  constexpr double pi = 3.141592653589793;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> ki(-3, 3);
  std::vector<std::array<double, 4>> modes;
  for (int m = 0; m < 6; ++m) modes.push_back({u(gen), 1.0 * ki(gen), 1.0 * ki(gen), pi * u(gen)});
  ScalarField f(g);
  double mx = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto x = g.position(p);
    double v = 0.0;
    for (const auto& m : modes)
      v += m[0] * std::sin(2 * pi * (m[1] * x[0] / g.extent(0) + m[2] * x[1] / g.extent(1)) + m[3]);
    f.values[p] = v;
    mx = std::max(mx, std::abs(v));
  }
  for (auto& v : f.values) v /= mx;
  return f;
}

/// Free-particle data with relative noise `level` on P and a phase
/// perturbation of the same size on S (S + level (2 / sqrt(lambda)) n).
inline PolarPair perturbed_free_particle(const SpacetimeGrid& g, double k, double w, double lambda,
                                         std::uint64_t seed, double level = 0.05) {
  auto pair = free_particle_pair(g, k, w);
  std::mt19937_64 gen(seed);
  const auto nP = periodic_noise(g, gen);
  const auto nS = periodic_noise(g, gen);
  for (std::size_t p = 0; p < g.size(); ++p) {
    pair.P.values[p] *= 1.0 + level * nP.values[p];
    pair.S.S.values[p] += level * (2.0 / std::sqrt(lambda)) * nS.values[p];
  }
  normalise(pair);
  return pair;
}

}  // namespace kgli::analytic
