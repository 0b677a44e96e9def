#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "analytic_fields.hpp"
#include "kgli/field_io.hpp"
#include "kgli/hje.hpp"
#include "kgli/numerics.hpp"

using namespace kgli;
using namespace kgli::testing;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const std::array<double, 4> kBox{2.0, 3.0, 1.0, 1.0};

SpacetimeGrid periodic_grid(int n = 24) {
  return SpacetimeGrid::make_1p1(0.0, kBox[0], n, 0.0, kBox[1], n, Boundary::Periodic);
}

// Pure-gauge four-velocity U^mu = d^mu S.
VectorJet pure_gauge(const ScalarJet& s) {
  VectorJet v;
  for (int nu = 0; nu < 4; ++nu) {
    v.value[nu] = kMetric[nu] * s.d[nu];
    for (int mu = 0; mu < 4; ++mu) v.d[mu][nu] = kMetric[nu] * s.dd[mu][nu];
  }
  return v;
}

// Hyperbolic flow U = (c / rho) (x^1, x^0), rho^2 = (x^1)^2 - (x^0)^2, with
// F^{01} = c / rho.
VectorJet hyperbolic(const FourVector& x, double c) {
  const double r2 = x[1] * x[1] - x[0] * x[0];
  const double rho = std::sqrt(r2);
  VectorJet v;
  v.value = FourVector{{c * x[1] / rho, c * x[0] / rho, 0, 0}};
  const double r3 = rho * r2;
  v.d[0][0] = c * x[1] * x[0] / r3;
  v.d[1][0] = c / rho - c * x[1] * x[1] / r3;
  v.d[0][1] = c / rho + c * x[0] * x[0] / r3;
  v.d[1][1] = -c * x[0] * x[1] / r3;
  return v;
}

Tensor4 hyperbolic_F(const FourVector& x, double c) {
  const double rho = std::sqrt(x[1] * x[1] - x[0] * x[0]);
  Tensor4 F{};
  F[0][1] = c / rho;
  F[1][0] = -c / rho;
  return F;
}

}  // namespace

TEST_CASE("field strength storage is antisymmetric") {
  FieldStrength F(periodic_grid(4));
  F.set(3, 0, 1, 2.5);
  F.set(3, 1, 2, -1.0);
  CHECK(F.at(3, 1, 0) == -2.5);
  CHECK(F.at(3, 2, 1) == 1.0);
  CHECK(F.at(3, 2, 2) == 0.0);
  const auto t = F.tensor(3);
  for (int mu = 0; mu < 4; ++mu)
    for (int nu = 0; nu < 4; ++nu) CHECK(t[mu][nu] == -t[nu][mu]);
  CHECK_THROWS_AS(F.set(0, 1, 0, 1.0), InputError);
}

TEST_CASE("constant and pure-gauge U have zero field strength") {
  const auto g = periodic_grid();
  CHECK(field_strength(FourVectorField(g, FourVector{{1.0, 0.3, 0, 0}})).max_abs() == 0.0);
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto S = random_trig(gen, 2, kBox, 4);
    const auto U = sample_vector_jets(g, [&](const FourVector& x) { return pure_gauge(S(x)); });
    CHECK(field_strength(U).max_abs() <= 1e-10);
  }
}

TEST_CASE("centered-difference field strength matches an independent stencil") {
  const auto g = SpacetimeGrid::make_1p1(0.0, 2.0, 20, 0.0, 3.0, 20, Boundary::Interior);
  std::mt19937_64 gen(8);
  const auto Uf = random_trig_vector(gen, 2, kBox);
  const auto U = values_of(sample_vector_jets(g, Uf));
  const auto F = field_strength(U);
  std::array<ScalarField, 4> comp{ScalarField(g), ScalarField(g), ScalarField(g), ScalarField(g)};
  for (int nu = 0; nu < 4; ++nu)
    for (std::size_t p = 0; p < g.size(); ++p) comp[nu].values[p] = U.values[p][nu];
  std::uniform_int_distribution<int> pick(1, 18);
  for (int i = 0; i < 10; ++i) {
    const std::size_t p = g.flatten({pick(gen), pick(gen), 0, 0});
    REQUIRE(F.is_defined(p));
    for (int mu = 0; mu < 4; ++mu)
      for (int nu = mu + 1; nu < 4; ++nu) {
        const double oracle = four_gradient(comp[nu], p)[mu] - four_gradient(comp[mu], p)[nu];
        CHECK_THAT(F.at(p, mu, nu), WithinAbs(oracle, 1e-10));
      }
  }
  CHECK_FALSE(F.is_defined(0));
}

TEST_CASE("norm constraint residuals") {
  const auto g = periodic_grid();
  const double c = 1.5;
  const auto rest = norm_constraint_residual(FourVectorField(g, FourVector{{c, 0, 0, 0}}), c);
  CHECK(rest.max_norm == 0.0);
  CHECK(rest.max_derivative == 0.0);

  const FourVector boosted = boost(FourVector{{c, 0, 0, 0}}, 0.9, 1);
  const auto b = norm_constraint_residual(FourVectorField(g, boosted), c);
  CHECK(b.max_norm <= 1e-12);
  CHECK(b.max_derivative <= 1e-12);

  auto wobble = [&](const FourVector& x) {
    const double k = 2 * 3.141592653589793 / kBox[1];
    VectorJet v;
    v.value[0] = c * (1 + 0.01 * std::sin(k * x[1]));
    v.d[1][0] = c * 0.01 * k * std::cos(k * x[1]);
    return v;
  };
  const auto w = norm_constraint_residual(sample_vector_jets(g, wobble), c);
  for (std::size_t p = 0; p < g.size(); ++p) {
    const double s = 1 + 0.01 * std::sin(2 * 3.141592653589793 / kBox[1] * g.position(p)[1]);
    CHECK_THAT(w.norm.values[p], WithinAbs(c * c * (s * s - 1), 1e-14));
  }
  CHECK(w.max_derivative > 1e-3);
  const auto wfd = norm_constraint_residual(values_of(sample_vector_jets(g, wobble)), c);
  CHECK_THAT(wfd.max_derivative, WithinRel(w.max_derivative, 0.05));
}

TEST_CASE("worldline at rest drifts backwards in x0") {
  const double c = 2.0;
  const FourVector x0{{1.0, 0.5, 0, 0}};
  const auto w = integrate_worldline([&](const FourVector&) { return FourVector{{c, 0, 0, 0}}; }, x0, 3.0,
                                     30, c);
  REQUIRE(w.x.size() == 31);
  CHECK_FALSE(w.truncated);
  for (std::size_t i = 0; i < w.x.size(); ++i) {
    CHECK_THAT(w.x[i][0], WithinAbs(x0[0] - c * w.tau[i], 1e-13));
    CHECK(w.x[i][1] == 0.5);
  }
  CHECK(w.max_norm_drift == 0.0);
}

TEST_CASE("worldline in a constant boosted grid field is straight") {
  const double c = 1.0;
  const auto g = SpacetimeGrid::make_1p1(-10.0, 20.0, 16, -10.0, 20.0, 16, Boundary::Interior);
  const FourVector U = boost(FourVector{{c, 0, 0, 0}}, 0.4, 1);
  const auto w = integrate_worldline(FourVectorField(g, U), FourVector{{2.0, 1.0, 0, 0}}, 5.0, 200, c);
  CHECK_FALSE(w.truncated);
  CHECK(w.max_norm_drift <= 1e-10);
  const auto& end = w.x.back();
  CHECK_THAT(end[0], WithinAbs(2.0 - 5.0 * U[0], 1e-12));
  CHECK_THAT(end[1], WithinAbs(1.0 - 5.0 * U[1], 1e-12));
}

TEST_CASE("worldline leaving the grid is truncated") {
  const auto g = SpacetimeGrid::make_1p1(0.0, 2.0, 8, 0.0, 2.0, 8, Boundary::Interior);
  const auto w = integrate_worldline(FourVectorField(g, FourVector{{1, 0, 0, 0}}), FourVector{{1.5, 1.0, 0, 0}},
                                     5.0, 50, 1.0);
  CHECK(w.truncated);
  CHECK(w.x.size() > 1);
  CHECK(w.x.size() < 51);
}

TEST_CASE("worldline in a uniform field follows the Lorentz-force form") {
  const double c = 1.0;
  const auto U = [&](const FourVector& x) { return hyperbolic(x, c).value; };
  const auto w = integrate_worldline(U, FourVector{{0.0, 1.0, 0, 0}}, 3.0, 10000, c);
  CHECK_FALSE(w.truncated);
  CHECK(w.max_norm_drift <= 1e-8);
  for (const auto& x : w.x) CHECK_THAT(x[1] * x[1] - x[0] * x[0], WithinAbs(1.0, 1e-8));
  const auto coarse = integrate_worldline(U, FourVector{{0.0, 1.0, 0, 0}}, 2.0, 200, c);
  CHECK(max_lorentz_residual(coarse, [&](const FourVector& x) { return hyperbolic_F(x, c); }) <= 1e-8);
}

TEST_CASE("norm drift stays within ten local truncation errors") {
  const double c = 1.0;
  const auto U = [&](const FourVector& x) { return hyperbolic(x, c).value; };
  const FourVector start{{0.2, 1.0, 0, 0}};
  const auto w = integrate_worldline(U, start, 1.0, 50, c);
  // local error per step from step doubling
  const auto one = integrate_worldline(U, start, 0.02, 1, c);
  const auto two = integrate_worldline(U, start, 0.02, 2, c);
  double local = 0;
  for (int mu = 0; mu < 4; ++mu) local = std::max(local, std::abs(one.x.back()[mu] - two.x.back()[mu]));
  CHECK(w.max_norm_drift <= 10.0 * 50 * local + 1e-15);
}

TEST_CASE("hyperbolic field strength from jets matches the closed form") {
  const auto g = SpacetimeGrid::make_1p1(-0.5, 1.0, 10, 2.0, 1.0, 10, Boundary::Interior);
  const auto F = field_strength(sample_vector_jets(g, [](const FourVector& x) { return hyperbolic(x, 1.0); }));
  for (std::size_t p = 0; p < g.size(); ++p)
    CHECK_THAT(F.at(p, 0, 1), WithinAbs(hyperbolic_F(g.position(p), 1.0)[0][1], 1e-13));
  const auto N = norm_constraint_residual(sample_vector_jets(g, [](const FourVector& x) { return hyperbolic(x, 1.0); }), 1.0);
  CHECK(N.max_norm <= 1e-13);
  CHECK(N.max_derivative <= 1e-13);
}

TEST_CASE("gauge shift") {
  const auto g = periodic_grid();
  std::mt19937_64 gen(21);
  const auto Uf = random_trig_vector(gen, 2, kBox);
  const auto U = sample_vector_jets(g, Uf);
  const ActionField constant{ScalarField(g, 4.2)};
  const auto A0 = gauge_shift(values_of(U), constant);
  for (std::size_t p = 0; p < g.size(); ++p) CHECK(A0.values[p] == U.values[p].value);

  for (int trial = 0; trial < 10; ++trial) {
    const auto S = sample_jets(g, random_trig(gen, 2, kBox, 3));
    CHECK(field_strength(gauge_shift(U, S)).max_diff(field_strength(U)) <= 1e-10);
  }
}

TEST_CASE("gauge shift of a normalised U turns into the per-mass HJE") {
  const auto g = periodic_grid();
  const double c = 1.3;
  std::mt19937_64 gen(4);
  const FourVector u = boost(FourVector{{c, 0, 0, 0}}, -0.6, 1);
  const auto Ugrid = sample_vector_jets(g, [&](const FourVector&) { VectorJet v; v.value = u; return v; });
  const auto S = sample_jets(g, random_trig(gen, 2, kBox, 3));
  const auto A = values_of(gauge_shift(Ugrid, S));
  PhysicalParams params;
  params.c = c;
  CHECK(max_abs(hje_residual(S, A, params, ActionConvention::PerMass)) <= 1e-12);
}

TEST_CASE("hje residual examples") {
  const auto g = periodic_grid(8);
  PhysicalParams params;
  params.c = 2.0;
  const auto r = hje_residual(ActionField{ScalarField(g, 0.0)}, FourVectorField(g), params);
  for (double v : r.values) CHECK(v == -4.0);

  params = PhysicalParams{1.7, 1.0, 0.8, 0.0};
  const double p = 1.1;
  const double E = std::sqrt(p * p * params.c * params.c + params.m * params.m * std::pow(params.c, 4));
  const auto free = sample_jets(g, [&](const FourVector& x) {
    ScalarJet j;
    j.value = E / params.c * x[0] - p * x[1];
    j.d[0] = E / params.c;
    j.d[1] = -p;
    return j;
  });
  CHECK(max_abs(hje_residual(free, FourVectorField(g), params, ActionConvention::Physical)) <= 1e-10);
}

TEST_CASE("centered differences satisfy the hyperbolic free action exactly") {
  const double m = 0.9, c = 1.0;
  PhysicalParams params{c, 1.0, m, 0.0};
  const auto g = SpacetimeGrid::make_1p1(2.0, 1.0, 16, -0.5, 1.0, 16, Boundary::Interior);
  ActionField S{sample<double>(g, [&](const FourVector& x) { return m * c * std::sqrt(minkowski_dot(x, x)); }),
                {}, ActionConvention::Physical};
  CHECK(max_abs(hje_residual(S, FourVectorField(g), params)) <= 1e-12);
}

TEST_CASE("hje residual with centered differences converges at second order") {
  const BeamAction beam{0.9, 1.0, 0.7};
  PhysicalParams params{beam.c, 1.0, beam.m, 0.0};
  std::vector<double> h, err;
  for (int n : {32, 64, 128}) {
    const auto g = SpacetimeGrid::make_1p1(0.5, 1.0, n, 0.0, 1.0, n, Boundary::Interior);
    const auto jets = sample_jets(g, beam);
    CHECK(max_abs(hje_residual(jets, FourVectorField(g), params, ActionConvention::Physical)) <= 1e-10);
    ActionField S{values_of(jets), {}, ActionConvention::Physical};
    h.push_back(1.0 / n);
    err.push_back(max_abs(hje_residual(S, FourVectorField(g), params)));
  }
  CHECK_THAT(log_log_slope(h, err), WithinAbs(2.0, 0.2));
  CHECK_THAT(err[1] / err[2], WithinAbs(4.0, 0.4));
}

TEST_CASE("physical residual is m^2 times the per-mass residual after the symbol map") {
  const auto g = periodic_grid(12);
  std::mt19937_64 gen(30);
  const PhysicalParams params{1.3, 0.7, 1.9, -0.6};
  for (int trial = 0; trial < 5; ++trial) {
    const auto S = sample_jets(g, random_trig(gen, 2, kBox, 3, 2.0));
    const auto A = values_of(sample_vector_jets(g, random_trig_vector(gen, 2, kBox)));
    ScalarJetField s_pm = S;
    for (auto& j : s_pm.values) {
      j.value /= params.m;
      for (auto& d : j.d) d /= params.m;
    }
    FourVectorField a_pm = A;
    for (auto& v : a_pm.values) v *= params.q / (params.m * params.c);
    const auto phys = hje_residual(S, A, params, ActionConvention::Physical);
    const auto pm = hje_residual(s_pm, a_pm, params, ActionConvention::PerMass);
    for (std::size_t p = 0; p < g.size(); ++p)
      CHECK_THAT(phys.values[p], WithinAbs(params.m * params.m * pm.values[p], 1e-12 * (1 + std::abs(phys.values[p]))));
  }
}

TEST_CASE("worldline CSV layout") {
  const auto dir = std::filesystem::temp_directory_path() / "kgli_test_hje";
  const auto w = integrate_worldline([](const FourVector&) { return FourVector{{1, 0, 0, 0}}; },
                                     FourVector{{0, 0, 0, 0}}, 1.0, 2, 1.0);
  write_worldline(dir / "w.csv", w, 1);
  CHECK(read_text(dir / "w.csv") == "tau,x0,x1,u0,u1\n0,0,0,-1,0\n0.5,-0.5,0,-1,0\n1,-1,0,-1,0\n");
}
