#include "kgli/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kgli/field_io.hpp"
#include "kgli/numerics.hpp"

namespace kgli {

namespace {

constexpr double kFloorRatio = 1e-12;

void require_lambda(double lambda) {
  if (!(lambda > 0.0)) throw ParameterError("lambda must be positive");
}

}  // namespace

void normalise(PolarPair& pair) {
  CompensatedSum s;
  for (double v : pair.P.values) s.add(v);
  const double z = s.value() * pair.P.grid.cell_volume();
  if (!(z > 0.0)) throw InputError("normalise: density has no mass");
  for (auto& v : pair.P.values) v /= z;
}

double F_integrand(const ScalarJet& P, const ScalarJet& S, const FourVector& A, double lambda, double c) {
  double fisher = P.d[0] * P.d[0];
  double hje = (S.d[0] - A[0]) * (S.d[0] - A[0]);
  for (int i = 1; i < 4; ++i) {
    fisher -= P.d[i] * P.d[i];
    hje -= (S.d[i] + A[i]) * (S.d[i] + A[i]);
  }
  return c * c * (fisher / P.value + lambda * (hje - c * c) * P.value);
}

double Q_integrand(const ComplexJet& phi, const FourVector& A, double lambda, double c) {
  const double a = std::sqrt(lambda) / (2.0 * c);
  const Complex I(0.0, 1.0);
  double sum = std::norm(phi.d[0] - I * a * A[0] * phi.value);
  for (int i = 1; i < 4; ++i) sum -= std::norm(phi.d[i] + I * a * A[i] * phi.value);
  sum -= 0.25 * lambda * c * c * std::norm(phi.value);
  return 4.0 * c * c * sum;
}

FunctionalReport functional_F(const ScalarJetField& P, const ScalarJetField& S, const FourVectorField& A,
                              double lambda, double c) {
  require_lambda(lambda);
  if (!(P.grid == S.grid) || !(P.grid == A.grid)) throw InputError("functional_F: grids differ");
  const auto& g = P.grid;
  double pmax = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p)
    if (P.is_defined(p)) pmax = std::max(pmax, P.values[p].value);
  const double floor = kFloorRatio * pmax;
  FunctionalReport r{0.0, ScalarField(g), lambda, 0};
  r.integrand.defined.assign(g.size(), 0);
  CompensatedSum acc;
  const double w = g.cell_volume();
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!P.is_defined(p) || !S.is_defined(p) || !A.is_defined(p) || !(P.values[p].value > floor)) {
      ++r.excluded_points;
      continue;
    }
    const double f = F_integrand(P.values[p], S.values[p], A.values[p], lambda, c);
    r.integrand.values[p] = f;
    r.integrand.defined[p] = 1;
    acc.add(f * w);
  }
  if (r.excluded_points == g.size()) throw InputError("functional_F: every point was excluded");
  r.value = acc.value();
  return r;
}

FunctionalReport functional_F(const PolarPair& pair, const FourVectorField& A, double lambda, double c) {
  return functional_F(finite_difference_jets(pair.P), pair.S.jets(), A, lambda, c);
}

FunctionalReport functional_Q(const ComplexJetField& phi, const FourVectorField& A, double lambda,
                              double c) {
  require_lambda(lambda);
  if (!(phi.grid == A.grid)) throw InputError("functional_Q: grids differ");
  const auto& g = phi.grid;
  FunctionalReport r{0.0, ScalarField(g), lambda, 0};
  r.integrand.defined.assign(g.size(), 0);
  CompensatedSum acc;
  const double w = g.cell_volume();
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (!phi.is_defined(p) || !A.is_defined(p)) {
      ++r.excluded_points;
      continue;
    }
    const double f = Q_integrand(phi.values[p], A.values[p], lambda, c);
    r.integrand.values[p] = f;
    r.integrand.defined[p] = 1;
    acc.add(f * w);
  }
  r.value = acc.value();
  return r;
}

FunctionalReport functional_Q(const ComplexField& phi, const FourVectorField& A, double lambda, double c) {
  return functional_Q(finite_difference_jets(phi), A, lambda, c);
}

ComplexField polar_compose(const PolarPair& pair, double lambda) {
  require_lambda(lambda);
  const double beta = 0.5 * std::sqrt(lambda);
  ComplexField out(pair.P.grid);
  for (std::size_t p = 0; p < out.values.size(); ++p) {
    const double P = pair.P.values[p];
    if (P < 0.0) throw InputError("polar_compose: negative density");
    out.values[p] = std::polar(std::sqrt(P), beta * pair.S.S.values[p]);
  }
  return out;
}

ComplexJetField polar_compose(const ScalarJetField& P, const ScalarJetField& S, double lambda) {
  require_lambda(lambda);
  if (!(P.grid == S.grid)) throw InputError("polar_compose: grids differ");
  const double beta = 0.5 * std::sqrt(lambda);
  const Complex I(0.0, 1.0);
  ComplexJetField out(P.grid);
  if (!P.defined.empty() || !S.defined.empty()) {
    out.defined.assign(P.grid.size(), 0);
    for (std::size_t p = 0; p < P.grid.size(); ++p) out.defined[p] = P.is_defined(p) && S.is_defined(p);
  }
  for (std::size_t p = 0; p < P.grid.size(); ++p) {
    const auto& pj = P.values[p];
    const auto& sj = S.values[p];
    if (pj.value < 0.0) throw InputError("polar_compose: negative density");
    auto& f = out.values[p];
    f.value = std::polar(std::sqrt(pj.value), beta * sj.value);
    if (!(pj.value > 0.0)) continue;
    // phi = exp(g), g = ln(P)/2 + i beta S
    std::array<Complex, 4> dg;
    for (int m = 0; m < 4; ++m) dg[m] = pj.d[m] / (2.0 * pj.value) + I * beta * sj.d[m];
    for (int m = 0; m < 4; ++m) {
      f.d[m] = f.value * dg[m];
      for (int n = 0; n < 4; ++n) {
        const Complex ddg = pj.dd[m][n] / (2.0 * pj.value) -
                            pj.d[m] * pj.d[n] / (2.0 * pj.value * pj.value) + I * beta * sj.dd[m][n];
        f.dd[m][n] = f.value * (ddg + dg[m] * dg[n]);
      }
    }
  }
  return out;
}

PolarDecomposition polar_decompose(const ComplexField& phi, double lambda, double floor) {
  require_lambda(lambda);
  const auto& g = phi.grid;
  const double to_action = 2.0 / std::sqrt(lambda);
  PolarDecomposition out{PolarPair{ScalarField(g), ActionField{ScalarField(g)}}, 0};
  auto& P = out.pair.P;
  auto& S = out.pair.S.S;
  S.defined.assign(g.size(), 0);
  std::vector<double> theta(g.size(), 0.0);
  auto wrap = [](double d) { return d - 2.0 * std::numbers::pi * std::round(d / (2.0 * std::numbers::pi)); };

  for (std::size_t p = 0; p < g.size(); ++p) {
    P.values[p] = std::norm(phi.values[p]);
    if (!(P.values[p] > floor)) {
      ++out.flagged_points;
      continue;
    }
    const double raw = std::arg(phi.values[p]);
    // walk back along the sweep until a point with a defined phase
    std::optional<std::size_t> prev;
    auto idx = g.unflatten(p);
    while (true) {
      int axis = -1;
      for (int a = g.axes() - 1; a >= 0; --a)
        if (idx[static_cast<std::size_t>(a)] > 0) {
          axis = a;
          break;
        }
      if (axis < 0) break;
      --idx[static_cast<std::size_t>(axis)];
      const std::size_t q = g.flatten(idx);
      if (S.defined[q]) {
        prev = q;
        break;
      }
    }
    theta[p] = prev ? theta[*prev] + wrap(raw - theta[*prev]) : raw;
    S.values[p] = to_action * theta[p];
    S.defined[p] = 1;
  }
  if (out.flagged_points == 0) S.defined.clear();

  if (g.periodic()) {
    for (int a = 0; a < g.axes(); ++a) {
      double turn = 0.0;
      std::size_t p = 0;
      for (int i = 0; i < g.points(a); ++i) {
        const std::size_t q = *g.shifted(p, a, 1);
        turn += wrap(std::arg(phi.values[q]) - std::arg(phi.values[p]));
        p = q;
      }
      const double n = std::round(turn / (2.0 * std::numbers::pi));
      out.pair.S.winding[static_cast<std::size_t>(a)] = to_action * 2.0 * std::numbers::pi * n;
    }
  }
  return out;
}

namespace {

FourVectorField scaled(const FourVectorField& A, double s) {
  FourVectorField out = A;
  for (auto& v : out.values) v *= s;
  return out;
}

double relative(double F, double Q, double floor) {
  const double denom = std::max({std::abs(F), std::abs(Q), floor});
  return std::abs(F - Q) / denom;
}

}  // namespace

double identity_check(const ScalarJetField& P, const ScalarJetField& S, const FourVectorField& A,
                      double lambda, double c, double floor) {
  const auto F = functional_F(P, S, A, lambda, c);
  const auto Q = functional_Q(polar_compose(P, S, lambda), scaled(A, c), lambda, c);
  return relative(F.value, Q.value, floor);
}

double identity_check(const PolarPair& pair, const FourVectorField& A, double lambda, double c,
                      double floor) {
  const auto F = functional_F(pair, A, lambda, c);
  const auto Q = functional_Q(polar_compose(pair, lambda), scaled(A, c), lambda, c);
  return relative(F.value, Q.value, floor);
}

ComplexField kg_residual_from_polar(const ScalarJetField& P, const ScalarJetField& S, const VectorJetField& A,
                                    double lambda, double c, KgOperatorSign sign) {
  const auto phi = polar_compose(P, S, lambda);
  if (!(phi.grid == A.grid)) throw InputError("kg_residual_from_polar: grids differ");
  const double a = (sign == KgOperatorSign::EulerLagrange ? 1.0 : -1.0) * std::sqrt(lambda) / (2.0 * c);
  const Complex I(0.0, 1.0);
  ComplexField out(phi.grid);
  out.defined.assign(phi.grid.size(), 0);
  for (std::size_t p = 0; p < phi.grid.size(); ++p) {
    if (!phi.is_defined(p) || !A.is_defined(p)) continue;
    const auto& f = phi.values[p];
    const auto& av = A.values[p];
    // potential of the quadratic functional: c times the per-mass potential
    const double A0 = c * av.value[0];
    const double dA0 = c * av.d[0][0];
    Complex r = f.dd[0][0] - I * a * dA0 * f.value - 2.0 * I * a * A0 * f.d[0] - a * a * A0 * A0 * f.value;
    for (int i = 1; i < 4; ++i) {
      const double Ai = c * av.value[i];
      const double dAi = c * av.d[i][i];
      r -= f.dd[i][i] + I * a * dAi * f.value + 2.0 * I * a * Ai * f.d[i] - a * a * Ai * Ai * f.value;
    }
    r += 0.25 * lambda * c * c * f.value;
    out.values[p] = r;
    out.defined[p] = 1;
  }
  return out;
}

ComplexField kg_residual_from_polar(const PolarPair& pair, const FourVectorField& A, double lambda, double c,
                                    KgOperatorSign sign) {
  return kg_residual_from_polar(finite_difference_jets(pair.P), pair.S.jets(), finite_difference_jets(A),
                                lambda, c, sign);
}

double max_abs(const ComplexField& f) {
  double m = 0.0;
  for (std::size_t p = 0; p < f.values.size(); ++p)
    if (f.is_defined(p)) m = std::max(m, std::abs(f.values[p]));
  return m;
}

// ---------------------------------------------------------------------------
// Minimiser

namespace {

// Forward-mode dual number for Hessian-vector products.
struct Dual {
  double v = 0.0;
  double d = 0.0;
  Dual() = default;
  Dual(double value, double deriv = 0.0) : v(value), d(deriv) {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
  friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
  }
};

Dual exp(const Dual& a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}

// Discrete F on a periodic grid with centered differences, as a function of
// (u = log P up to normalisation, S).
class DiscreteProblem {
 public:
  DiscreteProblem(const SpacetimeGrid& g, const std::array<double, 4>& winding, const FourVectorField& A,
                  double lambda, double c)
      : g_(g), axes_(g.axes()), n_(g.size()), lambda_(lambda), c_(c), w_(g.cell_volume()) {
    nb_.resize(n_ * static_cast<std::size_t>(axes_) * 2);
    shift_.resize(nb_.size());
    acov_.resize(n_ * static_cast<std::size_t>(axes_));
    for (std::size_t p = 0; p < n_; ++p)
      for (int a = 0; a < axes_; ++a) {
        for (int s = 0; s < 2; ++s) {
          int wraps = 0;
          const auto q = g.shifted(p, a, s == 0 ? 1 : -1, &wraps);
          nb_[slot(p, a, s)] = *q;
          shift_[slot(p, a, s)] = wraps * winding[static_cast<std::size_t>(a)];
        }
        acov_[p * static_cast<std::size_t>(axes_) + static_cast<std::size_t>(a)] =
            kMetric[static_cast<std::size_t>(a)] * A.values[p][a];
      }
  }

  double weight() const { return w_; }

  // F at P = exp(u), with dF/du = P dF/dP and dF/dS. F is homogeneous of
  // degree one in P, so sum_p dF/du_p = F.
  template <class T>
  T gradient(const std::vector<T>& u, const std::vector<T>& S, std::vector<T>& gu, std::vector<T>& gS) const {
    using std::exp;
    const auto na = static_cast<std::size_t>(axes_);
    std::vector<T> P(n_);
    for (std::size_t p = 0; p < n_; ++p) P[p] = exp(u[p]);

    std::vector<T> R(n_ * na), Y(n_ * na), Xi(n_);
    T F(0.0);
    for (std::size_t p = 0; p < n_; ++p) {
      T fisher(0.0), hje(-c_ * c_);
      for (std::size_t a = 0; a < na; ++a) {
        const double inv = 1.0 / (2.0 * g_.spacing(static_cast<int>(a)));
        const double s = kMetric[a];
        const std::size_t up = slot(p, static_cast<int>(a), 0), dn = slot(p, static_cast<int>(a), 1);
        const T dP = (P[nb_[up]] - P[nb_[dn]]) * T(inv);
        const T dS = (S[nb_[up]] + T(shift_[up]) - S[nb_[dn]] - T(shift_[dn])) * T(inv);
        const T V = dS - T(acov_[p * na + a]);
        const T r = dP / P[p];
        fisher += T(s) * dP * r;
        hje += T(s) * V * V;
        R[p * na + a] = r;
        Y[p * na + a] = P[p] * V;
      }
      Xi[p] = hje;
      F += fisher + T(lambda_) * hje * P[p];
    }
    const double k = c_ * c_ * w_;
    F = F * T(k);

    gu.assign(n_, T(0.0));
    gS.assign(n_, T(0.0));
    for (std::size_t p = 0; p < n_; ++p) {
      T gp = T(lambda_) * Xi[p];
      T gs(0.0);
      for (std::size_t a = 0; a < na; ++a) {
        const double inv = 1.0 / (2.0 * g_.spacing(static_cast<int>(a)));
        const double s = kMetric[a];
        const std::size_t up = nb_[slot(p, static_cast<int>(a), 0)], dn = nb_[slot(p, static_cast<int>(a), 1)];
        const T r = R[p * na + a];
        gp -= T(s) * (r * r + T(2.0) * (R[up * na + a] - R[dn * na + a]) * T(inv));
        gs -= T(2.0 * lambda_ * s) * (Y[up * na + a] - Y[dn * na + a]) * T(inv);
      }
      gu[p] = T(k) * gp * P[p];
      gS[p] = T(k) * gs;
    }
    return F;
  }

  double raw_gradient(const std::vector<double>& P, const std::vector<double>& S, std::vector<double>& gP,
                      std::vector<double>& gS) const {
    std::vector<double> u(n_), gu;
    for (std::size_t p = 0; p < n_; ++p) u[p] = std::log(P[p]);
    const double F = gradient(u, S, gu, gS);
    gP.resize(n_);
    for (std::size_t p = 0; p < n_; ++p) gP[p] = gu[p] / P[p];
    return F;
  }

 private:
  std::size_t slot(std::size_t p, int a, int s) const {
    return (p * static_cast<std::size_t>(axes_) + static_cast<std::size_t>(a)) * 2 + static_cast<std::size_t>(s);
  }

  const SpacetimeGrid& g_;
  int axes_;
  std::size_t n_;
  double lambda_, c_, w_;
  std::vector<std::size_t> nb_;
  std::vector<double> shift_;
  std::vector<double> acov_;
};

struct Point {
  std::vector<double> u, S;
};

struct Eval {
  double F = 0.0;
  std::vector<double> gu, gS;
  double merit = 0.0;  // 1/2 sum g^2 / w
};

Eval evaluate(const DiscreteProblem& prob, const Point& x) {
  Eval e;
  e.F = prob.gradient(x.u, x.S, e.gu, e.gS);
  double m = 0.0;
  for (double v : e.gu) m += v * v;
  for (double v : e.gS) m += v * v;
  e.merit = 0.5 * m / prob.weight();
  return e;
}

// (H v) / w for the Hessian H of F in (u, S), by one forward-mode pass.
void hessian_product(const DiscreteProblem& prob, const Point& x, const std::vector<double>& vu,
                     const std::vector<double>& vS, std::vector<double>& hu, std::vector<double>& hS) {
  const std::size_t n = x.u.size();
  std::vector<Dual> u(n), S(n), gu, gS;
  for (std::size_t p = 0; p < n; ++p) {
    u[p] = Dual(x.u[p], vu[p]);
    S[p] = Dual(x.S[p], vS[p]);
  }
  prob.gradient(u, S, gu, gS);
  hu.resize(n);
  hS.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    hu[p] = gu[p].d / prob.weight();
    hS[p] = gS[p].d / prob.weight();
  }
}

// The merit is evaluated on the normalised density, which makes it a
// function of u modulo constants. Its gradient is H g / w with the u part
// projected along the normalisation.
void merit_gradient(const DiscreteProblem& prob, const Point& x, const Eval& e, std::vector<double>& du,
                    std::vector<double>& dS) {
  hessian_product(prob, x, e.gu, e.gS, du, dS);
  const double w = prob.weight();
  double sum = 0.0;
  for (double v : du) sum += v;
  // sum equals 2 merit: the merit is homogeneous of degree two in P
  for (std::size_t p = 0; p < du.size(); ++p) du[p] -= w * std::exp(x.u[p]) * sum;
}

// Inexact Newton direction: MINRES on (H / w) d = -g / w. H is symmetric
// but indefinite and singular along S -> S + const.
void newton_direction(const DiscreteProblem& prob, const Point& x, const Eval& e, int max_iter, double rtol,
                      std::vector<double>& du, std::vector<double>& dS) {
  const std::size_t n = x.u.size();
  const double w = prob.weight();
  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < 2 * n; ++i) s += a[i] * b[i];
    return s;
  };
  std::vector<double> b(2 * n);
  for (std::size_t p = 0; p < n; ++p) {
    b[p] = -e.gu[p] / w;
    b[n + p] = -e.gS[p] / w;
  }
  std::vector<double> xk(2 * n, 0.0), r1 = b, r2 = b, y = b, v(2 * n), wv(2 * n, 0.0), w1(2 * n), w2(2 * n, 0.0);
  std::vector<double> vu(n), vS(n), hu, hS;
  const double beta1 = std::sqrt(dot(b, b));
  double beta = beta1, oldb = 0.0, dbar = 0.0, epsln = 0.0, phibar = beta1, cs = -1.0, sn = 0.0;
  for (int it = 1; it <= max_iter && beta > 0.0; ++it) {
    for (std::size_t i = 0; i < 2 * n; ++i) v[i] = y[i] / beta;
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), vu.begin());
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(n), v.end(), vS.begin());
    hessian_product(prob, x, vu, vS, hu, hS);
    for (std::size_t p = 0; p < n; ++p) {
      y[p] = hu[p];
      y[n + p] = hS[p];
    }
    if (it >= 2)
      for (std::size_t i = 0; i < 2 * n; ++i) y[i] -= (beta / oldb) * r1[i];
    const double alfa = dot(v, y);
    for (std::size_t i = 0; i < 2 * n; ++i) y[i] -= (alfa / beta) * r2[i];
    r1 = r2;
    r2 = y;
    oldb = beta;
    beta = std::sqrt(std::max(0.0, dot(r2, y)));
    const double oldeps = epsln;
    const double delta = cs * dbar + sn * alfa;
    const double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    const double gamma = std::max(std::hypot(gbar, beta), 1e-300);
    cs = gbar / gamma;
    sn = beta / gamma;
    const double phi = cs * phibar;
    phibar = sn * phibar;
    w1 = w2;
    w2 = wv;
    for (std::size_t i = 0; i < 2 * n; ++i) {
      wv[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
      xk[i] += phi * wv[i];
    }
    if (phibar <= rtol * beta1) break;
  }
  du.assign(xk.begin(), xk.begin() + static_cast<std::ptrdiff_t>(n));
  dS.assign(xk.begin() + static_cast<std::ptrdiff_t>(n), xk.end());
}

void renormalise(Point& x, double w) {
  double m = *std::max_element(x.u.begin(), x.u.end());
  double z = 0.0;
  for (double v : x.u) z += std::exp(v - m);
  const double shift = m + std::log(z * w);
  for (auto& v : x.u) v -= shift;
}

PolarPair to_pair(const Point& x, const PolarPair& like) {
  PolarPair out = like;
  for (std::size_t p = 0; p < x.u.size(); ++p) {
    out.P.values[p] = std::exp(x.u[p]);
    out.S.S.values[p] = x.S[p];
  }
  normalise(out);
  return out;
}

}  // namespace

DiscreteGradient discrete_F_gradient(const PolarPair& pair, const FourVectorField& A, double lambda, double c) {
  require_lambda(lambda);
  const auto& g = pair.P.grid;
  if (!g.periodic()) throw InputError("discrete_F_gradient: grid must be periodic");
  const DiscreteProblem prob(g, pair.S.winding, A, lambda, c);
  DiscreteGradient out;
  out.F = prob.raw_gradient(pair.P.values, pair.S.S.values, out.dP, out.dS);
  return out;
}

MinimizeResult minimize_F(const PolarPair& initial, const FourVectorField& A, double lambda, double c,
                          const MinimizeOptions& opts) {
  require_lambda(lambda);
  const auto& g = initial.P.grid;
  if (!g.periodic()) throw InputError("minimize_F: the variational problem needs a periodic grid");
  if (!(g == initial.S.S.grid) || !(g == A.grid)) throw InputError("minimize_F: grids differ");
  for (double v : initial.P.values)
    if (!(v > 0.0)) throw InputError("minimize_F: initial density must be strictly positive");

  const DiscreteProblem prob(g, initial.S.winding, A, lambda, c);
  const double w = prob.weight();
  Point x;
  x.u.resize(g.size());
  for (std::size_t p = 0; p < g.size(); ++p) x.u[p] = std::log(initial.P.values[p]);
  x.S = initial.S.S.values;
  renormalise(x, w);

  MinimizeResult res{initial, {}, MinimizeStatus::MaxIterations, 0.0, 0.0, 0};
  Eval e = evaluate(prob, x);
  auto grad_norm = [](const Eval& ev) { return std::sqrt(2.0 * ev.merit); };
  const double g0 = grad_norm(e);
  const double target = std::max(opts.gtol_abs, opts.gtol_rel * g0);
  res.trace.push_back({0, e.F, g0, 0.0});

  std::vector<double> gu, gS, du, dS;
  const std::size_t n = g.size();
  Point trial;
  Eval next;
  double accepted_step = 0.0;

  // Backtracking along (du, dS): Armijo on the merit and, if requested,
  // |F| non-increasing. A step that no longer moves any parameter fails.
  auto search = [&](double alpha) {
    double slope = 0.0, dmax = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      slope += gu[p] * du[p] + gS[p] * dS[p];
      dmax = std::max({dmax, std::abs(du[p]), std::abs(dS[p])});
    }
    if (!(slope < 0.0) || !(dmax > 0.0)) return false;
    alpha = std::min(alpha, opts.max_step / dmax);
    for (int bt = 0; bt <= opts.max_backtracks && alpha * dmax > 1e-13; ++bt) {
      trial = x;
      for (std::size_t p = 0; p < n; ++p) {
        trial.u[p] += alpha * du[p];
        trial.S[p] += alpha * dS[p];
      }
      renormalise(trial, w);
      next = evaluate(prob, trial);
      if (std::isfinite(next.merit) && next.merit <= e.merit + opts.armijo * alpha * slope &&
          (!opts.monotone_F || std::abs(next.F) <= std::abs(e.F))) {
        accepted_step = alpha;
        return true;
      }
      alpha *= opts.shrink;
    }
    return false;
  };

  res.status = MinimizeStatus::MaxIterations;
  int it = 0;
  while (true) {
    if (grad_norm(e) <= target) {
      res.status = MinimizeStatus::Converged;
      break;
    }
    if (it >= opts.max_iterations) break;
    merit_gradient(prob, x, e, gu, gS);
    bool ok = false;
    if (opts.newton) {
      newton_direction(prob, x, e, opts.krylov_iterations, opts.krylov_rtol, du, dS);
      ok = search(1.0);
    }
    if (!ok) {
      du.resize(n);
      dS.resize(n);
      double nm = 0.0;
      for (std::size_t p = 0; p < n; ++p) nm += gu[p] * gu[p] + gS[p] * gS[p];
      nm = std::sqrt(nm);
      if (nm > 0.0) {
        for (std::size_t p = 0; p < n; ++p) {
          du[p] = -gu[p];
          dS[p] = -gS[p];
        }
        ok = search(e.merit / (nm * nm));
      }
      if (!ok && opts.monotone_F && nm > 0.0) {
        // bisect the merit descent direction and the |F| descent direction
        const double sgn = e.F < 0.0 ? -1.0 : 1.0;
        std::vector<double> fu(n), fS(n);
        double nf = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
          fu[p] = sgn * (e.gu[p] - w * std::exp(x.u[p]) * e.F);
          fS[p] = sgn * e.gS[p];
          nf += fu[p] * fu[p] + fS[p] * fS[p];
        }
        nf = std::sqrt(nf);
        if (nf > 0.0) {
          for (std::size_t p = 0; p < n; ++p) {
            du[p] = -(gu[p] / nm + fu[p] / nf);
            dS[p] = -(gS[p] / nm + fS[p] / nf);
          }
          ok = search(e.merit / nm);
        }
      }
    }
    if (!ok) {
      res.status = MinimizeStatus::LineSearchFailed;
      break;
    }
    ++it;
    x = std::move(trial);
    e = std::move(next);
    res.trace.push_back({it, e.F, grad_norm(e), accepted_step});
  }
  res.iterations = it;
  res.pair = to_pair(x, initial);
  res.F = e.F;
  res.grad_norm = grad_norm(e);
  return res;
}

const char* to_string(MinimizeStatus s) {
  switch (s) {
    case MinimizeStatus::Converged: return "converged";
    case MinimizeStatus::MaxIterations: return "max_iterations";
    case MinimizeStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

void write_trace(const std::filesystem::path& csv, const std::vector<TraceRow>& trace) {
  std::string out = "iter,F,grad_norm,step\n";
  for (const auto& r : trace)
    out += std::to_string(r.iter) + "," + format_double(r.F) + "," + format_double(r.grad_norm) + "," +
           format_double(r.step) + "\n";
  write_text(csv, out);
}

}  // namespace kgli
