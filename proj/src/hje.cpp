#include "kgli/hje.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "kgli/field_io.hpp"

namespace kgli {

namespace {

constexpr std::array<std::array<int, 2>, 6> kPairs{{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

std::vector<std::uint8_t> merge_defined(const std::vector<std::uint8_t>& a,
                                        const std::vector<std::uint8_t>& b, std::size_t n) {
  if (a.empty() && b.empty()) return {};
  std::vector<std::uint8_t> out(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<std::uint8_t>((a.empty() || a[i]) && (b.empty() || b[i]));
  return out;
}

}  // namespace

FieldStrength::FieldStrength(SpacetimeGrid grid)
    : grid_(std::move(grid)), comps_(grid_.size(), std::array<double, 6>{}) {}

int FieldStrength::slot(int mu, int nu) {
  for (int s = 0; s < 6; ++s)
    if (kPairs[static_cast<std::size_t>(s)][0] == mu && kPairs[static_cast<std::size_t>(s)][1] == nu) return s;
  throw InputError("field strength: slot needs mu < nu");
}

double FieldStrength::at(std::size_t point, int mu, int nu) const {
  if (mu == nu) return 0.0;
  if (mu < nu) return comps_[point][static_cast<std::size_t>(slot(mu, nu))];
  return -comps_[point][static_cast<std::size_t>(slot(nu, mu))];
}

void FieldStrength::set(std::size_t point, int mu, int nu, double value) {
  comps_[point][static_cast<std::size_t>(slot(mu, nu))] = value;
}

Tensor4 FieldStrength::tensor(std::size_t point) const {
  Tensor4 t{};
  for (int mu = 0; mu < 4; ++mu)
    for (int nu = 0; nu < 4; ++nu) t[mu][nu] = at(point, mu, nu);
  return t;
}

double FieldStrength::max_abs() const {
  double m = 0.0;
  for (std::size_t p = 0; p < comps_.size(); ++p) {
    if (!is_defined(p)) continue;
    for (double v : comps_[p]) m = std::max(m, std::abs(v));
  }
  return m;
}

double FieldStrength::max_diff(const FieldStrength& other) const {
  if (!(grid_ == other.grid_)) throw InputError("field strength: grids differ");
  double m = 0.0;
  for (std::size_t p = 0; p < comps_.size(); ++p) {
    if (!is_defined(p) || !other.is_defined(p)) continue;
    for (std::size_t s = 0; s < 6; ++s) m = std::max(m, std::abs(comps_[p][s] - other.comps_[p][s]));
  }
  return m;
}

Tensor4 field_strength_at(const VectorJet& U) {
  Tensor4 F{};
  for (int mu = 0; mu < 4; ++mu)
    for (int nu = 0; nu < 4; ++nu)
      F[mu][nu] = kMetric[mu] * U.d[mu][nu] - kMetric[nu] * U.d[nu][mu];
  return F;
}

FieldStrength field_strength(const VectorJetField& U) {
  FieldStrength out(U.grid);
  out.defined() = U.defined;
  for (std::size_t p = 0; p < U.grid.size(); ++p) {
    if (!U.is_defined(p)) continue;
    const Tensor4 F = field_strength_at(U.values[p]);
    for (const auto& [mu, nu] : kPairs) out.set(p, mu, nu, F[mu][nu]);
  }
  return out;
}

FieldStrength field_strength(const FourVectorField& U) { return field_strength(finite_difference_jets(U)); }

NormResidual norm_constraint_residual(const VectorJetField& U, double c) {
  NormResidual r{ScalarField(U.grid), ScalarField(U.grid)};
  r.norm.defined = U.defined;
  r.derivative.defined = U.defined;
  for (std::size_t p = 0; p < U.grid.size(); ++p) {
    if (!U.is_defined(p)) continue;
    const auto& j = U.values[p];
    r.norm.values[p] = minkowski_dot(j.value, j.value) - c * c;
    double d = 0.0;
    for (int mu = 0; mu < 4; ++mu) d = std::max(d, std::abs(2.0 * minkowski_dot(j.value, j.d[mu])));
    r.derivative.values[p] = d;
  }
  r.max_norm = max_abs(r.norm);
  r.max_derivative = max_abs(r.derivative);
  return r;
}

NormResidual norm_constraint_residual(const FourVectorField& U, double c) {
  ScalarField n(U.grid);
  n.defined = U.defined;
  for (std::size_t p = 0; p < U.grid.size(); ++p) n.values[p] = minkowski_dot(U.values[p], U.values[p]);
  const auto jets = finite_difference_jets(n);
  NormResidual r{ScalarField(U.grid), ScalarField(U.grid)};
  r.norm.defined = U.defined;
  r.derivative.defined = jets.defined;
  for (std::size_t p = 0; p < U.grid.size(); ++p) {
    r.norm.values[p] = n.values[p] - c * c;
    double d = 0.0;
    for (int mu = 0; mu < 4; ++mu) d = std::max(d, std::abs(jets.values[p].d[mu]));
    r.derivative.values[p] = d;
  }
  r.max_norm = max_abs(r.norm);
  r.max_derivative = max_abs(r.derivative);
  return r;
}

std::optional<FourVector> interpolate(const FourVectorField& U, const FourVector& x) {
  const auto& g = U.grid;
  const int axes = g.axes();
  std::array<int, 4> lo{};
  std::array<double, 4> frac{};
  for (int a = 0; a < axes; ++a) {
    const int n = g.points(a);
    const double s = (x[a] - g.origin(a)) / g.spacing(a) - 0.5;
    if (!std::isfinite(s)) return std::nullopt;
    double i0 = std::floor(s);
    if (!g.periodic()) {
      if (s < 0.0 || s > n - 1) return std::nullopt;
      if (i0 >= n - 1) i0 = n - 2;
    }
    frac[static_cast<std::size_t>(a)] = s - i0;
    lo[static_cast<std::size_t>(a)] = static_cast<int>(i0);
  }
  FourVector out{};
  for (int corner = 0; corner < (1 << axes); ++corner) {
    SpacetimeGrid::Index idx{};
    double w = 1.0;
    for (int a = 0; a < axes; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      const int up = (corner >> a) & 1;
      int i = lo[ua] + up;
      if (g.periodic()) i = ((i % g.points(a)) + g.points(a)) % g.points(a);
      idx[ua] = i;
      w *= up ? frac[ua] : 1.0 - frac[ua];
    }
    if (w == 0.0) continue;
    const std::size_t p = g.flatten(idx);
    if (!U.is_defined(p)) return std::nullopt;
    out += U.values[p] * w;
  }
  return out;
}

namespace {

using MaybeVelocity = std::function<std::optional<FourVector>(const FourVector&)>;

Worldline rk4(const MaybeVelocity& U, const FourVector& x0, double tau_max, int steps, double c) {
  if (steps < 1) throw ParameterError("worldline: steps must be >= 1");
  if (!(tau_max > 0.0)) throw ParameterError("worldline: tau_max must be positive");
  const double h = tau_max / steps;
  Worldline w;
  auto record = [&](double tau, const FourVector& x, const FourVector& u) {
    w.tau.push_back(tau);
    w.x.push_back(x);
    w.u.push_back(u);
    w.max_norm_drift = std::max(w.max_norm_drift, std::abs(minkowski_dot(u, u) - c * c));
  };
  auto f = [&](const FourVector& x) -> std::optional<FourVector> {
    auto v = U(x);
    if (!v) return std::nullopt;
    return -*v;
  };
  FourVector x = x0;
  auto k1 = f(x);
  if (!k1) {
    w.truncated = true;
    return w;
  }
  record(0.0, x, *k1);
  for (int n = 0; n < steps; ++n) {
    const auto k2 = f(x + (0.5 * h) * *k1);
    if (!k2) break;
    const auto k3 = f(x + (0.5 * h) * *k2);
    if (!k3) break;
    const auto k4 = f(x + h * *k3);
    if (!k4) break;
    const FourVector next = x + (h / 6.0) * (*k1 + 2.0 * *k2 + 2.0 * *k3 + *k4);
    const auto k_next = f(next);
    if (!k_next) break;
    x = next;
    k1 = k_next;
    record((n + 1) * h, x, *k1);
  }
  w.truncated = static_cast<int>(w.tau.size()) != steps + 1;
  return w;
}

}  // namespace

Worldline integrate_worldline(const VelocityFn& U, const FourVector& x0, double tau_max, int steps,
                              double c) {
  return rk4([&](const FourVector& x) { return std::optional<FourVector>(U(x)); }, x0, tau_max, steps, c);
}

Worldline integrate_worldline(const FourVectorField& U, const FourVector& x0, double tau_max,
                              int steps, double c) {
  return rk4([&](const FourVector& x) { return interpolate(U, x); }, x0, tau_max, steps, c);
}

double max_lorentz_residual(const Worldline& w, const std::function<Tensor4(const FourVector&)>& F) {
  if (w.x.size() < 5) throw InputError("lorentz residual: worldline needs at least 5 samples");
  const double h = w.tau[1] - w.tau[0];
  double worst = 0.0;
  for (std::size_t i = 2; i + 2 < w.x.size(); ++i) {
    const Tensor4 f = F(w.x[i]);
    const FourVector lower = flip_index(w.u[i]);
    for (int mu = 0; mu < 4; ++mu) {
      const double acc = (-w.x[i + 2][mu] + 16.0 * w.x[i + 1][mu] - 30.0 * w.x[i][mu] +
                          16.0 * w.x[i - 1][mu] - w.x[i - 2][mu]) /
                         (12.0 * h * h);
      double rhs = 0.0;
      for (int nu = 0; nu < 4; ++nu) rhs += f[mu][nu] * lower[nu];
      worst = std::max(worst, std::abs(acc - rhs));
    }
  }
  return worst;
}

void write_worldline(const std::filesystem::path& csv, const Worldline& w, int spatial_dims) {
  const int axes = spatial_dims + 1;
  std::string out = "tau";
  for (int a = 0; a < axes; ++a) out += ",x" + std::to_string(a);
  for (int a = 0; a < axes; ++a) out += ",u" + std::to_string(a);
  out += '\n';
  for (std::size_t i = 0; i < w.tau.size(); ++i) {
    out += format_double(w.tau[i]);
    for (int a = 0; a < axes; ++a) out += "," + format_double(w.x[i][a]);
    for (int a = 0; a < axes; ++a) out += "," + format_double(w.u[i][a]);
    out += '\n';
  }
  write_text(csv, out);
}

FourVectorField gauge_shift(const FourVectorField& U, const ActionField& S) {
  if (!(U.grid == S.S.grid)) throw InputError("gauge_shift: grids differ");
  const auto jets = S.jets();
  FourVectorField A(U.grid);
  A.defined = merge_defined(U.defined, jets.defined, U.grid.size());
  for (std::size_t p = 0; p < U.grid.size(); ++p) {
    const auto up = raise(jets.values[p].d);
    for (int mu = 0; mu < 4; ++mu) A.values[p][mu] = U.values[p][mu] + up[static_cast<std::size_t>(mu)];
  }
  return A;
}

VectorJetField gauge_shift(const VectorJetField& U, const ScalarJetField& S) {
  if (!(U.grid == S.grid)) throw InputError("gauge_shift: grids differ");
  VectorJetField A(U.grid);
  A.defined = merge_defined(U.defined, S.defined, U.grid.size());
  for (std::size_t p = 0; p < U.grid.size(); ++p) {
    const auto& u = U.values[p];
    const auto& s = S.values[p];
    auto& a = A.values[p];
    for (int nu = 0; nu < 4; ++nu) a.value[nu] = u.value[nu] + kMetric[nu] * s.d[nu];
    for (int mu = 0; mu < 4; ++mu)
      for (int nu = 0; nu < 4; ++nu) a.d[mu][nu] = u.d[mu][nu] + kMetric[nu] * s.dd[mu][nu];
  }
  return A;
}

double hje_residual_at(const ScalarJet& S, const FourVector& A, const PhysicalParams& params,
                       ActionConvention convention) {
  const double c = params.c;
  if (convention == ActionConvention::PerMass) {
    const double t = S.d[0] - A[0];
    double s = 0.0;
    for (int i = 1; i < 4; ++i) s += (S.d[i] + A[i]) * (S.d[i] + A[i]);
    return t * t - s - c * c;
  }
  const double k = params.q / c;
  const double t = S.d[0] - k * A[0];
  double s = 0.0;
  for (int i = 1; i < 4; ++i) s += (S.d[i] + k * A[i]) * (S.d[i] + k * A[i]);
  return t * t - s - params.m * params.m * c * c;
}

ScalarField hje_residual(const ScalarJetField& S, const FourVectorField& A,
                         const PhysicalParams& params, ActionConvention convention) {
  if (!(S.grid == A.grid)) throw InputError("hje_residual: grids differ");
  ScalarField out(S.grid);
  out.defined = merge_defined(S.defined, A.defined, S.grid.size());
  for (std::size_t p = 0; p < S.grid.size(); ++p)
    if (out.is_defined(p)) out.values[p] = hje_residual_at(S.values[p], A.values[p], params, convention);
  return out;
}

ScalarField hje_residual(const ActionField& S, const FourVectorField& A, const PhysicalParams& params) {
  return hje_residual(S.jets(), A, params, S.convention);
}

double max_abs(const ScalarField& f) {
  double m = 0.0;
  for (std::size_t p = 0; p < f.values.size(); ++p)
    if (f.is_defined(p)) m = std::max(m, std::abs(f.values[p]));
  return m;
}

}  // namespace kgli
