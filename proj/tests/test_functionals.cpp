#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "analytic_fields.hpp"
#include "kgli/field_io.hpp"
#include "kgli/functionals.hpp"
#include "kgli/numerics.hpp"

using namespace kgli;
using namespace kgli::testing;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

constexpr double kPi = std::numbers::pi;

SpacetimeGrid box_grid(int n, double T, double L, Boundary b = Boundary::Periodic) {
  return SpacetimeGrid::make_1p1(0.0, T, n, 0.0, L, n, b);
}

FourVectorField zero_A(const SpacetimeGrid& g) { return FourVectorField(g); }

ScalarJetField constant_jets(const SpacetimeGrid& g, double v) {
  return sample_jets(g, [v](const FourVector&) {
    ScalarJet j;
    j.value = v;
    return j;
  });
}

// Strictly positive density P = exp(trig) with exact jets.
ScalarJet exp_jet(const ScalarJet& f) {
  ScalarJet p;
  p.value = std::exp(f.value);
  for (int a = 0; a < 4; ++a) {
    p.d[a] = p.value * f.d[a];
    for (int b = 0; b < 4; ++b) p.dd[a][b] = p.value * (f.dd[a][b] + f.d[a] * f.d[b]);
  }
  return p;
}

// Plane-wave polar data, per-mass action S = k x^1 - w x^0 (c = 1).
PolarPair plane_pair(const SpacetimeGrid& g, double k, double w) {
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

// Smooth periodic noise in [-1, 1].
ScalarField smooth_noise(const SpacetimeGrid& g, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> ki(-3, 3);
  std::vector<std::array<double, 4>> modes;
  for (int m = 0; m < 6; ++m) modes.push_back({u(gen), 1.0 * ki(gen), 1.0 * ki(gen), kPi * u(gen)});
  ScalarField f(g);
  double mx = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto x = g.position(p);
    double v = 0.0;
    for (const auto& m : modes)
      v += m[0] * std::sin(2 * kPi * (m[1] * x[0] / g.extent(0) + m[2] * x[1] / g.extent(1)) + m[3]);
    f.values[p] = v;
    mx = std::max(mx, std::abs(v));
  }
  for (auto& v : f.values) v /= mx;
  return f;
}

PolarPair noisy_start(const SpacetimeGrid& g, double lambda, std::uint64_t seed, double level = 0.05) {
  // on-shell plane wave with phase wave numbers that fit the box for both lambda = 4 and 16
  auto pair = plane_pair(g, 0.75, 1.25);
  std::mt19937_64 gen(seed);
  const auto nP = smooth_noise(g, gen);
  const auto nS = smooth_noise(g, gen);
  for (std::size_t p = 0; p < g.size(); ++p) {
    pair.P.values[p] *= 1.0 + level * nP.values[p];
    pair.S.S.values[p] += level * (2.0 / std::sqrt(lambda)) * nS.values[p];
  }
  normalise(pair);
  return pair;
}

double total(const ScalarField& f) {
  return compensated_sum(f.values) * f.grid.cell_volume();
}

}  // namespace

TEST_CASE("F vanishes for uniform P and S = c x0 with A = 0") {
  for (double c : {1.0, 2.5}) {
    const auto g = box_grid(16, 2.0, 3.0);
    const double P0 = 1.0 / (g.extent(0) * g.extent(1));
    const auto P = constant_jets(g, P0);
    const auto S = sample_jets(g, [c](const FourVector& x) {
      ScalarJet j;
      j.value = c * x[0];
      j.d[0] = c;
      return j;
    });
    const auto r = functional_F(P, S, zero_A(g), 4.0, c);
    CHECK_THAT(r.value, WithinAbs(0.0, 1e-13));
    CHECK(r.excluded_points == 0);
    CHECK_THAT(F_integrand(P.values[3], S.values[3], FourVector{}, 4.0, c), WithinAbs(0.0, 1e-14));
  }
}

TEST_CASE("F equals -lambda c^4 for uniform normalised P and S = 0") {
  for (double c : {1.0, 0.7}) {
    for (double lambda : {1.0, 4.0, 9.5}) {
      const auto g = box_grid(12, 1.5, 2.0);
      const auto P = constant_jets(g, 1.0 / 3.0);
      const auto S = constant_jets(g, 0.0);
      const auto r = functional_F(P, S, zero_A(g), lambda, c);
      CHECK_THAT(r.value, WithinRel(-lambda * std::pow(c, 4), 1e-13));
      CHECK_THAT(total(r.integrand), WithinRel(r.value, 1e-14));
    }
  }
}

TEST_CASE("F is unchanged by a constant shift of S and Q by a global phase") {
  std::mt19937_64 gen(5);
  const auto g = box_grid(20, 2.0, 2.0);
  const std::array<double, 4> L{2.0, 2.0, 1.0, 1.0};
  auto fp = random_trig(gen, 2, L, 3, 0.4);
  auto fs = random_trig(gen, 2, L, 3, 1.0);
  const auto fa = random_trig_vector(gen, 2, L, 0.5);
  const auto P = sample_jets(g, [&](const FourVector& x) { return exp_jet(fp(x)); });
  auto S = sample_jets(g, fs);
  const auto A = values_of(sample_vector_jets(g, fa));
  const double F0 = functional_F(P, S, A, 3.0).value;
  for (auto& j : S.values) j.value += 17.25;
  CHECK_THAT(functional_F(P, S, A, 3.0).value, WithinRel(F0, 1e-14));

  auto phi = polar_compose(P, S, 3.0);
  const double Q0 = functional_Q(phi, A, 3.0).value;
  const Complex rot = std::polar(1.0, 0.83);
  for (auto& j : phi.values) {
    j.value *= rot;
    for (auto& d : j.d) d *= rot;
  }
  CHECK_THAT(functional_Q(phi, A, 3.0).value, WithinRel(Q0, 1e-13));
}

TEST_CASE("functional_F excludes points below the density floor") {
  const auto g = box_grid(8, 1.0, 1.0);
  auto P = constant_jets(g, 1.0);
  P.values[0].value = 1e-14;
  P.values[5].value = 0.0;
  const auto r = functional_F(P, constant_jets(g, 0.0), zero_A(g), 4.0);
  CHECK(r.excluded_points == 2);
  CHECK_FALSE(r.integrand.is_defined(0));
  CHECK_THAT(r.value, WithinRel(-4.0 * 62.0 / 64.0, 1e-14));

  auto none = constant_jets(g, 0.0);
  CHECK_THROWS_AS(functional_F(none, constant_jets(g, 0.0), zero_A(g), 4.0), InputError);
  CHECK_THROWS_AS(functional_F(P, constant_jets(g, 0.0), zero_A(g), 0.0), ParameterError);
}

TEST_CASE("Q of the zero field is zero") {
  const auto g = box_grid(8, 1.0, 1.0);
  const auto r = functional_Q(ComplexField(g), zero_A(g), 4.0);
  CHECK(r.value == 0.0);
}

TEST_CASE("Q integrand vanishes on a free plane wave on the dispersion shell") {
  for (double c : {1.0, 3.0}) {
    const double lambda = 2.5, k = 1.3;
    const double w = std::sqrt(c * c * k * k + lambda * std::pow(c, 4) / 4.0);
    const auto g = box_grid(10, 1.0, 1.0);
    ComplexJetField phi(g);
    for (std::size_t p = 0; p < g.size(); ++p) {
      const auto x = g.position(p);
      // x0 = ct, so the time phase per unit x0 is w / c
      auto& j = phi.values[p];
      j.value = std::polar(1.0, k * x[1] - w / c * x[0]);
      j.d[0] = Complex(0, -w / c) * j.value;
      j.d[1] = Complex(0, k) * j.value;
    }
    const auto r = functional_Q(phi, zero_A(g), lambda, c);
    CHECK_THAT(r.value, WithinAbs(0.0, 1e-12 * c * c * w * w));
  }
}

TEST_CASE("polar composition definitions") {
  const auto g = box_grid(6, 1.0, 1.0);
  PolarPair one{ScalarField(g, 1.0), ActionField{ScalarField(g)}};
  const auto phi = polar_compose(one, 4.0);
  for (const auto& v : phi.values) CHECK(v == Complex(1.0, 0.0));

  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  PolarPair pair{ScalarField(g), ActionField{ScalarField(g)}};
  for (auto& v : pair.P.values) v = u(gen);
  for (auto& v : pair.S.S.values) v = 10.0 * u(gen);
  for (double lambda : {0.5, 4.0, 37.0}) {
    const auto a = polar_compose(pair, lambda);
    for (std::size_t p = 0; p < g.size(); ++p)
      CHECK_THAT(std::norm(a.values[p]), WithinRel(pair.P.values[p], 1e-15));
    auto shifted = pair;
    for (auto& v : shifted.S.S.values) v += 4.0 * kPi / std::sqrt(lambda);
    const auto b = polar_compose(shifted, lambda);
    for (std::size_t p = 0; p < g.size(); ++p) CHECK(std::abs(a.values[p] - b.values[p]) < 1e-13);
  }
  CHECK_THROWS_AS(polar_compose(pair, 0.0), ParameterError);
  CHECK_THROWS_AS(polar_compose(pair, -1.0), ParameterError);
  pair.P.values[2] = -0.1;
  CHECK_THROWS_AS(polar_compose(pair, 1.0), InputError);
}

TEST_CASE("polar decomposition of the unit field") {
  const auto g = box_grid(6, 1.0, 1.0);
  const auto d = polar_decompose(ComplexField(g, Complex(1.0, 0.0)), 4.0);
  CHECK(d.flagged_points == 0);
  for (std::size_t p = 0; p < g.size(); ++p) {
    CHECK(d.pair.P.values[p] == 1.0);
    CHECK(d.pair.S.S.values[p] == 0.0);
  }
}

TEST_CASE("polar round trip on random smooth nonvanishing fields") {
  std::mt19937_64 gen(21);
  const std::array<double, 4> L{3.0, 2.0, 1.0, 1.0};
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = SpacetimeGrid::make_1p1(0.0, L[0], 30, 0.0, L[1], 25, Boundary::Interior);
    const auto lp = random_trig(gen, 2, L, 3, 0.5);
    const auto th = random_trig(gen, 2, L, 4, 6.0, 1);
    ComplexField phi(g);
    for (std::size_t p = 0; p < g.size(); ++p) {
      const auto x = g.position(p);
      phi.values[p] = std::polar(std::exp(lp(x).value), th(x).value);
    }
    const double lambda = 0.3 + trial;
    const auto d = polar_decompose(phi, lambda);
    REQUIRE(d.flagged_points == 0);
    const auto back = polar_compose(d.pair, lambda);
    for (std::size_t p = 0; p < g.size(); ++p) CHECK(std::abs(back.values[p] - phi.values[p]) < 1e-12);
  }
}

TEST_CASE("polar decomposition unwraps a plane wave into a linear action") {
  const double lambda = 9.0, k = 2.0 * kPi * 3.0 / 4.0, w = 2.0 * kPi * 5.0 / 2.0;
  const auto g = SpacetimeGrid::make_1p1(0.0, 2.0, 40, 0.0, 4.0, 48, Boundary::Periodic);
  ComplexField phi(g);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto x = g.position(p);
    phi.values[p] = std::polar(0.7, k * x[1] - w * x[0]);
  }
  const auto d = polar_decompose(phi, lambda);
  const auto& S = d.pair.S.S;
  const double s0 = S.values[0];
  const auto x0 = g.position(0);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto x = g.position(p);
    const double expect = s0 + (2.0 / std::sqrt(lambda)) * (k * (x[1] - x0[1]) - w * (x[0] - x0[0]));
    CHECK_THAT(S.values[p], WithinAbs(expect, 1e-11));
  }
  CHECK_THAT(d.pair.S.winding[0], WithinAbs(-2.0 / 3.0 * w * 2.0, 1e-12));
  CHECK_THAT(d.pair.S.winding[1], WithinAbs(2.0 / 3.0 * k * 4.0, 1e-12));
  const auto jets = d.pair.S.jets();
  for (std::size_t p : {0u, 77u, 1919u}) CHECK_THAT(jets.values[p].d[0], WithinRel(-2.0 / 3.0 * w, 1e-12));
}

TEST_CASE("polar decomposition flags points below the floor") {
  const auto g = box_grid(6, 1.0, 1.0);
  ComplexField phi(g, Complex(0.0, 2.0));
  phi.values[7] = 0.0;
  phi.values[8] = 1e-13;
  const auto d = polar_decompose(phi, 4.0);
  CHECK(d.flagged_points == 2);
  CHECK_FALSE(d.pair.S.S.is_defined(7));
  CHECK_FALSE(d.pair.S.S.is_defined(8));
  CHECK(d.pair.S.S.is_defined(9));
  CHECK_THAT(d.pair.S.S.values[9], WithinAbs(kPi / 2.0, 1e-15));
}

TEST_CASE("F equals Q on 100 random trigonometric triples with exact derivatives") {
  std::mt19937_64 gen(2024);
  const std::array<double, 4> L{2.0, 3.0, 1.0, 1.0};
  const auto g = SpacetimeGrid::make_1p1(0.0, L[0], 32, 0.0, L[1], 32, Boundary::Periodic);
  std::uniform_real_distribution<double> lam(0.2, 20.0), cs(0.5, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto fp = random_trig(gen, 2, L, 3, 0.6);
    const auto fs = random_trig(gen, 2, L, 3, 1.5);
    const auto fa = random_trig_vector(gen, 2, L, 0.8);
    const double lambda = lam(gen), c = cs(gen);
    const auto P = sample_jets(g, [&](const FourVector& x) { return exp_jet(fp(x)); });
    const auto S = sample_jets(g, fs);
    const auto A = values_of(sample_vector_jets(g, fa));
    worst = std::max(worst, identity_check(P, S, A, lambda, c));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("F and Q integrands agree pointwise at random points") {
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const std::array<double, 4> L{2.0, 3.0, 1.0, 1.0};
  const auto g = box_grid(4, 1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const auto fp = random_trig(gen, 2, L, 3, 0.6);
    const auto fs = random_trig(gen, 2, L, 3, 1.5);
    const auto fa = random_trig_vector(gen, 2, L, 0.8);
    const double lambda = 1.0 + trial, c = 0.8 + 0.3 * trial;
    for (int k = 0; k < 5; ++k) {
      const FourVector x{{u(gen), u(gen), 0, 0}};
      const auto P = exp_jet(fp(x));
      const auto S = fs(x);
      const auto A = fa(x).value;
      ScalarJetField Pf(g, P), Sf(g, S);
      const auto phi = polar_compose(Pf, Sf, lambda).values[0];
      FourVector Aq = A;
      Aq *= c;
      const double f = F_integrand(P, S, A, lambda, c);
      // expanded by hand: 4c^2 |phi|^2 [ (dP/2P)^2 + (a(dS - A))^2 ... ] = F integrand
      const double q = Q_integrand(phi, Aq, lambda, c);
      CHECK_THAT(q, WithinRel(f, 1e-12) || WithinAbs(f, 1e-12));
    }
  }
}

TEST_CASE("with A = 0 and constant S, F and Q reduce to the same gradient form") {
  std::mt19937_64 gen(3);
  const std::array<double, 4> L{2.0, 2.0, 1.0, 1.0};
  const auto g = box_grid(24, L[0], L[1]);
  const auto fp = random_trig(gen, 2, L, 3, 0.5);
  const auto P = sample_jets(g, [&](const FourVector& x) { return exp_jet(fp(x)); });
  const auto S = constant_jets(g, 0.4);
  const double lambda = 2.0;
  // 4 c^2 [ (d0 sqrtP)^2 - (d1 sqrtP)^2 ] - lambda c^4 P
  CompensatedSum ref;
  for (const auto& j : P.values)
    ref.add((j.d[0] * j.d[0] - j.d[1] * j.d[1]) / j.value - lambda * j.value);
  const double expect = ref.value() * g.cell_volume();
  CHECK_THAT(functional_F(P, S, zero_A(g), lambda).value, WithinRel(expect, 1e-13));
  CHECK_THAT(functional_Q(polar_compose(P, S, lambda), zero_A(g), lambda).value, WithinRel(expect, 1e-13));
}

TEST_CASE("finite-difference identity residual converges at second order") {
  std::mt19937_64 gen(11);
  const std::array<double, 4> L{2.0, 3.0, 1.0, 1.0};
  const auto fp = random_trig(gen, 2, L, 3, 0.5, 1);
  const auto fs = random_trig(gen, 2, L, 3, 1.0, 1);
  const auto fa = random_trig_vector(gen, 2, L, 0.5);
  std::vector<double> hs, res;
  for (int n : {32, 64, 128}) {
    const auto g = SpacetimeGrid::make_1p1(0.0, L[0], n, 0.0, L[1], n, Boundary::Periodic);
    PolarPair pair{values_of(sample_jets(g, [&](const FourVector& x) { return exp_jet(fp(x)); })),
                   ActionField{values_of(sample_jets(g, fs))}};
    const auto A = values_of(sample_vector_jets(g, fa));
    hs.push_back(g.max_spacing());
    res.push_back(identity_check(pair, A, 1.7, 1.2));
  }
  const double slope = log_log_slope(hs, res);
  CHECK(res[0] > 1e-8);
  CHECK_THAT(slope, WithinAbs(2.0, 0.2));
  CHECK_THAT(res[1] / res[2], WithinAbs(4.0, 0.8));
}

TEST_CASE("F integrand is Lorentz invariant under boosted fields", "[lorentz]") {
  std::mt19937_64 gen(31);
  const std::array<double, 4> L{2.0, 3.0, 1.0, 1.0};
  const auto fp = random_trig(gen, 2, L, 3, 0.5);
  const auto fs = random_trig(gen, 2, L, 3, 1.0);
  const auto fa = random_trig_vector(gen, 2, L, 0.5);
  const double lambda = 2.3, c = 1.0;
  const auto g = box_grid(24, L[0], L[1]);

  for (double eta : {0.3, -0.8, 1.4}) {
    // x = B x' with B the inverse boost; d'_mu f' = B^nu_mu d_nu f
    std::array<FourVector, 4> col;
    for (int mu = 0; mu < 4; ++mu) {
      FourVector e{};
      e[mu] = 1.0;
      col[static_cast<std::size_t>(mu)] = boost(e, -eta, 1);
    }
    auto transform = [&](const ScalarJet& j) {
      ScalarJet out;
      out.value = j.value;
      for (int mu = 0; mu < 4; ++mu)
        for (int nu = 0; nu < 4; ++nu) out.d[mu] += col[static_cast<std::size_t>(mu)][nu] * j.d[nu];
      return out;
    };
    CompensatedSum orig, boosted;
    for (std::size_t p = 0; p < g.size(); ++p) {
      const auto x = g.position(p);
      const auto P = exp_jet(fp(x));
      const auto S = fs(x);
      const auto A = fa(x).value;
      const double f = F_integrand(P, S, A, lambda, c);
      // primed fields at the boosted point x' = boost(x)
      const auto xp = boost(x, eta, 1);
      const auto back = boost(xp, -eta, 1);
      const double fb = F_integrand(transform(exp_jet(fp(back))), transform(fs(back)),
                                    boost(fa(back).value, eta, 1), lambda, c);
      CHECK_THAT(fb, WithinAbs(f, 1e-11 * (1.0 + std::abs(f))));
      orig.add(f);
      boosted.add(fb);
    }
    // unit Jacobian: the boosted box carries the same cell measure
    CHECK_THAT(boosted.value() * g.cell_volume(), WithinRel(orig.value() * g.cell_volume(), 1e-12));
  }
}

TEST_CASE("KG residual vanishes on the dispersion shell and measures the shell offset") {
  const double lambda = 6.0;
  const auto g = box_grid(8, 1.0, 1.0);
  for (double c : {1.0, 2.0}) {
    for (double k : {0.0, 1.5, -3.0}) {
      const double w_on = std::sqrt(c * c * k * k + lambda * std::pow(c, 4) / 4.0);
      for (double w : {w_on, 0.7 * w_on, 1.9 * w_on + 0.3}) {
        // phase sqrt(lambda) S / 2 = k x1 - (w / c) x0
        const double b = 2.0 / std::sqrt(lambda);
        const auto P = constant_jets(g, 0.6);
        const auto S = sample_jets(g, [&](const FourVector& x) {
          ScalarJet j;
          j.value = b * (k * x[1] - w / c * x[0]);
          j.d[0] = -b * w / c;
          j.d[1] = b * k;
          return j;
        });
        const auto r = kg_residual_from_polar(P, S, VectorJetField(g), lambda, c);
        const double expect = std::abs(w * w / (c * c) - k * k - lambda * c * c / 4.0) * std::sqrt(0.6);
        for (const auto& v : r.values) CHECK_THAT(std::abs(v), WithinAbs(expect, 1e-10 * (1.0 + expect)));
      }
    }
  }
}

TEST_CASE("KG operator signs differ only through the potential") {
  std::mt19937_64 gen(41);
  const std::array<double, 4> L{2.0, 3.0, 1.0, 1.0};
  const auto g = box_grid(6, L[0], L[1]);
  const auto fp = random_trig(gen, 2, L, 2, 0.3);
  const auto fs = random_trig(gen, 2, L, 2, 1.0);
  const auto P = sample_jets(g, [&](const FourVector& x) { return exp_jet(fp(x)); });
  const auto S = sample_jets(g, fs);
  const auto e1 = kg_residual_from_polar(P, S, VectorJetField(g), 2.0, 1.0, KgOperatorSign::EulerLagrange);
  const auto e2 = kg_residual_from_polar(P, S, VectorJetField(g), 2.0, 1.0, KgOperatorSign::Conjugate);
  for (std::size_t p = 0; p < g.size(); ++p) CHECK(std::abs(e1.values[p] - e2.values[p]) < 1e-13);

  const auto A = sample_vector_jets(g, random_trig_vector(gen, 2, L, 0.5));
  const auto f1 = kg_residual_from_polar(P, S, A, 2.0, 1.0, KgOperatorSign::EulerLagrange);
  const auto f2 = kg_residual_from_polar(P, S, A, 2.0, 1.0, KgOperatorSign::Conjugate);
  double diff = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) diff = std::max(diff, std::abs(f1.values[p] - f2.values[p]));
  CHECK(diff > 1e-3);
}

TEST_CASE("Q is stationary in phi* exactly where the Euler-Lagrange residual vanishes") {
  // dQ/dphi*(x) integrated against a test variation equals -4c^2 <eta, residual>
  std::mt19937_64 gen(8);
  const std::array<double, 4> L{2.0, 2.0, 1.0, 1.0};
  const auto g = box_grid(64, L[0], L[1]);
  const auto fp = random_trig(gen, 2, L, 2, 0.3, 1);
  const auto fs = random_trig(gen, 2, L, 2, 1.0, 1);
  const auto fa = random_trig_vector(gen, 2, L, 0.4);
  const auto feta = random_trig(gen, 2, L, 2, 1.0, 1);
  const double lambda = 3.0, c = 1.0;
  const auto P = sample_jets(g, [&](const FourVector& x) { return exp_jet(fp(x)); });
  const auto S = sample_jets(g, fs);
  const auto Aj = sample_vector_jets(g, fa);
  const auto A = values_of(Aj);
  const auto phi = polar_compose(P, S, lambda);
  const auto res = kg_residual_from_polar(P, S, Aj, lambda, c);
  const auto eta = sample_jets(g, feta);

  // derivative of Q(phi + t eta) at t = 0, eta real, by complex-step free central difference
  auto Q_at = [&](double t) {
    ComplexJetField f = phi;
    for (std::size_t p = 0; p < g.size(); ++p) {
      f.values[p].value += t * eta.values[p].value;
      for (int m = 0; m < 4; ++m) f.values[p].d[m] += t * eta.values[p].d[m];
    }
    FourVectorField Aq = A;
    for (auto& v : Aq.values) v *= c;
    return functional_Q(f, Aq, lambda, c).value;
  };
  const double t = 1e-5;
  const double dQ = (Q_at(t) - Q_at(-t)) / (2 * t);
  CompensatedSum pair;
  for (std::size_t p = 0; p < g.size(); ++p) pair.add(eta.values[p].value * res.values[p].real());
  const double expect = -8.0 * c * c * pair.value() * g.cell_volume();
  CHECK_THAT(dQ, WithinRel(expect, 1e-6));
}

TEST_CASE("discrete gradient matches differences of the discrete F") {
  const auto g = box_grid(12, 8 * kPi, 8 * kPi);
  const double lambda = 4.0;
  auto pair = noisy_start(g, lambda, 3, 0.2);
  std::mt19937_64 gen(1);
  const auto A = values_of(sample_vector_jets(g, random_trig_vector(gen, 2, {8 * kPi, 8 * kPi, 1, 1}, 0.2)));
  const auto grad = discrete_F_gradient(pair, A, lambda);
  CHECK_THAT(grad.F, WithinRel(functional_F(pair, A, lambda).value, 1e-12));
  for (std::size_t q : {0u, 5u, 67u, 143u}) {
    auto plus = pair, minus = pair;
    const double h = 1e-6 * pair.P.values[q];
    plus.P.values[q] += h;
    minus.P.values[q] -= h;
    const double dP = (functional_F(plus, A, lambda).value - functional_F(minus, A, lambda).value) / (2 * h);
    CHECK_THAT(grad.dP[q], WithinRel(dP, 1e-6) || WithinAbs(dP, 1e-9));
    plus = pair;
    minus = pair;
    plus.S.S.values[q] += 1e-6;
    minus.S.S.values[q] -= 1e-6;
    const double dS = (functional_F(plus, A, lambda).value - functional_F(minus, A, lambda).value) / 2e-6;
    CHECK_THAT(grad.dS[q], WithinRel(dS, 1e-6) || WithinAbs(dS, 1e-9));
  }
  CHECK_THROWS_AS(discrete_F_gradient(
                      PolarPair{ScalarField(box_grid(4, 1, 1, Boundary::Interior), 1.0),
                                ActionField{ScalarField(box_grid(4, 1, 1, Boundary::Interior))}},
                      FourVectorField(box_grid(4, 1, 1, Boundary::Interior)), lambda),
                  InputError);
}

TEST_CASE("minimize_F stays put at an exact plane-wave solution") {
  const auto g = box_grid(32, 8 * kPi, 8 * kPi);
  for (double lambda : {4.0, 16.0}) {
    const auto pair = plane_pair(g, 0.75, 1.25);
    const auto r = minimize_F(pair, zero_A(g), lambda);
    CHECK(r.status == MinimizeStatus::Converged);
    CHECK(r.iterations == 0);
    CHECK(std::abs(r.F) <= 1e-8 * lambda);
    CHECK(r.grad_norm <= 1e-10);
    for (std::size_t p = 0; p < g.size(); ++p)
      CHECK_THAT(r.pair.P.values[p], WithinRel(pair.P.values[p], 1e-12));
  }
}

TEST_CASE("minimize_F drives noisy free-particle data to F = 0 for lambda and 4 lambda", "[slow]") {
  const auto g = box_grid(32, 8 * kPi, 8 * kPi);
  for (std::uint64_t seed : {17u, 3u}) {
  std::vector<double> finals, initials;
  for (double lambda : {4.0, 16.0}) {
    const auto start = noisy_start(g, lambda, seed);
    const double F0 = functional_F(start, zero_A(g), lambda).value;
    const auto r = minimize_F(start, zero_A(g), lambda);
    INFO("lambda " << lambda << " F0 " << F0 << " F " << r.F << " iters " << r.iterations << " status "
                   << to_string(r.status));
    CHECK(r.status != MinimizeStatus::MaxIterations);
    CHECK(std::abs(r.F) <= 1e-4 * std::abs(F0));
    bool monotone_grad = true;
    for (std::size_t i = 1; i < r.trace.size(); ++i)
      monotone_grad = monotone_grad && r.trace[i].grad_norm <= r.trace[i - 1].grad_norm;
    CHECK(monotone_grad);
    bool monotone_F = true;
    for (std::size_t i = 1; i < r.trace.size(); ++i)
      monotone_F = monotone_F && std::abs(r.trace[i].F) <= std::abs(r.trace[i - 1].F);
    CHECK(monotone_F);
    CHECK_THAT(r.F, WithinRel(functional_F(r.pair, zero_A(g), lambda).value, 1e-6) || WithinAbs(r.F, 1e-12));
    double mass = compensated_sum(r.pair.P.values) * g.cell_volume();
    CHECK_THAT(mass, WithinAbs(1.0, 1e-9));
    finals.push_back(r.F);
    initials.push_back(std::abs(F0));
  }
  // the stationary value does not depend on lambda
  CHECK(std::abs(finals[0] - finals[1]) <= 1e-4 * std::max(initials[0], initials[1]));
  }
}

TEST_CASE("tighter minimisation shrinks the KG residual of the composed field", "[slow]") {
  const auto g = box_grid(32, 8 * kPi, 8 * kPi);
  const double lambda = 4.0;
  const auto start = noisy_start(g, lambda, 23);
  double prev = max_abs(kg_residual_from_polar(start, zero_A(g), lambda));
  for (double tol : {1e-1, 1e-2, 1e-4}) {
    MinimizeOptions o;
    o.gtol_rel = tol;
    const auto r = minimize_F(start, zero_A(g), lambda, 1.0, o);
    const double res = max_abs(kg_residual_from_polar(r.pair, zero_A(g), lambda));
    INFO("tol " << tol << " residual " << res << " previous " << prev);
    CHECK(res < prev);
    prev = res;
  }
}

TEST_CASE("minimize_F rejects unusable inputs") {
  const auto g = box_grid(8, 1.0, 1.0, Boundary::Interior);
  PolarPair pair{ScalarField(g, 1.0), ActionField{ScalarField(g)}};
  CHECK_THROWS_AS(minimize_F(pair, zero_A(g), 4.0), InputError);
  const auto gp = box_grid(8, 1.0, 1.0);
  PolarPair bad{ScalarField(gp, 1.0), ActionField{ScalarField(gp)}};
  bad.P.values[3] = 0.0;
  CHECK_THROWS_AS(minimize_F(bad, zero_A(gp), 4.0), InputError);
  CHECK_THROWS_AS(minimize_F(bad, zero_A(gp), -1.0), ParameterError);
}

TEST_CASE("minimiser trace is written as CSV") {
  const auto path = std::filesystem::temp_directory_path() / "kgli_trace_test.csv";
  write_trace(path, {{0, 1.5, 2.0, 0.0}, {1, 0.25, 0.5, 0.125}});
  CHECK(read_text(path) == "iter,F,grad_norm,step\n0,1.5,2,0\n1,0.25,0.5,0.125\n");
  std::filesystem::remove(path);
  CHECK(std::string(to_string(MinimizeStatus::LineSearchFailed)) == "line_search_failed");
}

TEST_CASE("first-order mode descends the merit without Newton directions") {
  const auto g = box_grid(16, 8 * kPi, 8 * kPi);
  const auto start = noisy_start(g, 4.0, 5);
  MinimizeOptions o;
  o.newton = false;
  o.max_iterations = 300;
  const auto r = minimize_F(start, zero_A(g), 4.0, 1.0, o);
  REQUIRE(r.trace.size() > 2);
  CHECK(r.grad_norm < 0.5 * r.trace.front().grad_norm);
  for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i].grad_norm <= r.trace[i - 1].grad_norm);
}
