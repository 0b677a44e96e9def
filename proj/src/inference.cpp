#include "kgli/inference.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "kgli/experiment.hpp"
#include "kgli/numerics.hpp"

namespace kgli {

std::optional<double> forward_proper_time(const FourVector& x, double c) {
  const double s = minkowski_dot(x, x);
  if (!(x[0] > 0.0) || !(s > 0.0)) return std::nullopt;
  return std::sqrt(s) / c;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Gauss {
  double sigma;
  double operator()(double u) const {
    return std::exp(-0.5 * u * u / (sigma * sigma)) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
  }
  double d(double u) const { return -u / (sigma * sigma) * (*this)(u); }
};

// Covariant gradient of tau(x): x_mu / (c^2 tau).
FourVector grad_tau(const FourVector& x, double tau, double c) {
  const FourVector lower = flip_index(x);
  return lower * (1.0 / (c * c * tau));
}

// Lifts a proper-time family P(tau | theta) to space-time, zero outside the
// forward light cone.
void lift(ParametricDensity& m) {
  const double c = m.c;
  auto f = m.eval_tau;
  auto ft = m.d_dtheta_tau;
  auto fs = m.d_dtau_tau;
  m.eval = [f, c](const FourVector& x, double th) {
    const auto tau = forward_proper_time(x, c);
    return tau ? f(*tau, th) : 0.0;
  };
  m.d_dtheta = [ft, c](const FourVector& x, double th) {
    const auto tau = forward_proper_time(x, c);
    return tau ? ft(*tau, th) : 0.0;
  };
  m.d_dtau = [fs, c](const FourVector& x, double th) {
    const auto tau = forward_proper_time(x, c);
    return tau ? fs(*tau, th) : 0.0;
  };
  m.gradient = [fs, c](const FourVector& x, double th) {
    const auto tau = forward_proper_time(x, c);
    if (!tau) return FourVector{};
    return grad_tau(x, *tau, c) * fs(*tau, th);
  };
}

}  // namespace

ParametricDensity gaussian_proper_time_family(double sigma, double c) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian family: sigma must be positive");
  const Gauss g{sigma};
  ParametricDensity m;
  m.name = "gaussian_proper_time";
  m.c = c;
  m.eval_tau = [g](double tau, double th) { return g(tau - th); };
  m.d_dtheta_tau = [g](double tau, double th) { return -g.d(tau - th); };
  m.d_dtau_tau = [g](double tau, double th) { return g.d(tau - th); };
  lift(m);
  return m;
}

ParametricDensity tau_weighted_gaussian_family(double sigma, double c) {
  if (!(sigma > 0.0)) throw ParameterError("tau-weighted family: sigma must be positive");
  const Gauss g{sigma};
  ParametricDensity m;
  m.name = "tau_weighted_gaussian";
  m.c = c;
  m.eval_tau = [g](double tau, double th) { return tau * g(tau - th); };
  m.d_dtheta_tau = [g](double tau, double th) { return -tau * g.d(tau - th); };
  m.d_dtau_tau = [g](double tau, double th) { return g(tau - th) + tau * g.d(tau - th); };
  lift(m);
  return m;
}

ParametricDensity tilted_gaussian_family(double sigma, double tilt, double c) {
  if (!(sigma > 0.0)) throw ParameterError("tilted family: sigma must be positive");
  const Gauss g{sigma};
  ParametricDensity m;
  m.name = "tilted_gaussian";
  m.c = c;
  m.eval = [g, tilt, c](const FourVector& x, double th) {
    const auto tau = forward_proper_time(x, c);
    return tau ? g(*tau - th) * (1.0 + tilt * x[1]) : 0.0;
  };
  m.d_dtheta = [g, tilt, c](const FourVector& x, double th) {
    const auto tau = forward_proper_time(x, c);
    return tau ? -g.d(*tau - th) * (1.0 + tilt * x[1]) : 0.0;
  };
  m.d_dtau = [g, tilt, c](const FourVector& x, double th) {
    const auto tau = forward_proper_time(x, c);
    return tau ? g.d(*tau - th) * (1.0 + tilt * x[1]) : 0.0;
  };
  m.gradient = [g, tilt, c](const FourVector& x, double th) {
    const auto tau = forward_proper_time(x, c);
    if (!tau) return FourVector{};
    FourVector out = grad_tau(x, *tau, c) * (g.d(*tau - th) * (1.0 + tilt * x[1]));
    out[1] += g(*tau - th) * tilt;
    return out;
  };
  return m;
}

ParametricDensity static_family(double scale, double c) {
  if (!(scale > 0.0)) throw ParameterError("static family: scale must be positive");
  ParametricDensity m;
  m.name = "static";
  m.c = c;
  m.eval_tau = [scale](double tau, double) { return std::exp(-tau / scale); };
  m.d_dtheta_tau = [](double, double) { return 0.0; };
  m.d_dtau_tau = [scale](double tau, double) { return -std::exp(-tau / scale) / scale; };
  lift(m);
  return m;
}

namespace {

double resolve_tau_min(double tau_min, const SpacetimeGrid& grid, double c) {
  return tau_min < 0.0 ? 2.0 * grid.max_spacing() / c : tau_min;
}

}  // namespace

FisherResult fisher_continuum(const ParametricDensity& model, double theta,
                              const SpacetimeGrid& grid, FisherForm form, double tau_min) {
  if (!model.eval || !model.d_dtheta) throw InputError("fisher_continuum: model is incomplete");
  if (form == FisherForm::Tau && !model.d_dtau)
    throw InputError("fisher_continuum: tau form needs a tau derivative");
  FisherResult r;
  r.tau_min = resolve_tau_min(tau_min, grid, model.c);

  std::vector<double> P, D;
  P.reserve(grid.size());
  D.reserve(grid.size());
  CompensatedSum Z, Zd;
  const double w = grid.cell_volume();
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const FourVector x = grid.position(p);
    if (model.timelike_support) {
      const auto tau = forward_proper_time(x, model.c);
      if (!tau || *tau < r.tau_min) {
        ++r.excluded_points;
        continue;
      }
    }
    const double v = model.eval(x, theta);
    const double d = form == FisherForm::Theta ? model.d_dtheta(x, theta) : -model.d_dtau(x, theta);
    if (v < 0.0) throw InputError("fisher_continuum: negative density");
    ++r.included_points;
    Z.add(w * v);
    Zd.add(w * d);
    P.push_back(v);
    D.push_back(d);
  }
  const double z = Z.value();
  if (r.included_points == 0 || !(z > 0.0))
    throw InputError("fisher_continuum: model support does not meet the grid box");
  const double ratio = Zd.value() / z;
  CompensatedSum acc;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double num = D[i] - P[i] * ratio;
    if (P[i] == 0.0) {
      if (num != 0.0) throw InputError("fisher_continuum: derivative nonzero where density vanishes");
      continue;
    }
    acc.add(w * num * num / P[i]);
  }
  r.value = acc.value() / z;
  r.normalisation = z;
  return r;
}

double homogeneity_residual(const ParametricDensity& model, double tau, double theta, double delta) {
  if (!model.eval_tau) throw InputError("homogeneity_residual: model has no proper-time form");
  return model.eval_tau(tau + delta, theta + delta) - model.eval_tau(tau, theta);
}

GradientIdentityResult gradient_identity_residual(const ParametricDensity& model,
                                                  const SpacetimeGrid& grid, double theta,
                                                  DerivativeMode mode, double tau_min) {
  if (!model.d_dtau) throw InputError("gradient_identity_residual: model has no tau derivative");
  if (mode == DerivativeMode::Analytic && !model.gradient)
    throw InputError("gradient_identity_residual: model has no analytic gradient");
  const double c = model.c;
  GradientIdentityResult out{ScalarField(grid), 0, 0.0, resolve_tau_min(tau_min, grid, c)};
  out.residual.defined.assign(grid.size(), 0);
  auto timelike = [&](const FourVector& x) {
    const auto tau = forward_proper_time(x, c);
    return tau && *tau > out.tau_min;
  };
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const FourVector x = grid.position(p);
    if (!timelike(x)) {
      ++out.excluded_points;
      continue;
    }
    FourVector g{};
    bool ok = true;
    if (mode == DerivativeMode::Analytic) {
      g = model.gradient(x, theta);
    } else {
      for (int a = 0; a < grid.axes() && ok; ++a) {
        const double h = grid.spacing(a);
        FourVector xp = x, xm = x;
        xp[a] += h;
        xm[a] -= h;
        if (!timelike(xp) || !timelike(xm)) {
          ok = false;
          break;
        }
        g[a] = (model.eval(xp, theta) - model.eval(xm, theta)) / (2.0 * h);
      }
    }
    if (!ok) {
      ++out.excluded_points;
      continue;
    }
    const double dt = model.d_dtau(x, theta);
    const double res = minkowski_dot(flip_index(g), flip_index(g)) - dt * dt / (c * c);
    out.residual.values[p] = res;
    out.residual.defined[p] = 1;
    out.max_abs = std::max(out.max_abs, std::abs(res));
  }
  return out;
}

BinModel two_bin_model() {
  BinModel m;
  m.name = "two_bin";
  m.bins = 2;
  m.p = [](double th) { return std::vector<double>{th, 1.0 - th}; };
  m.dp = [](double) { return std::vector<double>{1.0, -1.0}; };
  m.d2p = [](double) { return std::vector<double>{0.0, 0.0}; };
  return m;
}

BinModel uniform_bin_model(std::size_t bins) {
  if (bins == 0) throw InputError("uniform model needs at least one bin");
  BinModel m;
  m.name = "uniform";
  m.bins = bins;
  m.p = [bins](double) { return std::vector<double>(bins, 1.0 / static_cast<double>(bins)); };
  m.dp = [bins](double) { return std::vector<double>(bins, 0.0); };
  m.d2p = m.dp;
  return m;
}

BinModel random_softmax_model(std::size_t bins, std::uint64_t seed, double scale) {
  if (bins == 0) throw InputError("softmax model needs at least one bin");
  EventSampler rng(seed);
  std::vector<double> a(bins), b(bins), q(bins);
  for (std::size_t j = 0; j < bins; ++j) {
    a[j] = scale * (2.0 * rng.uniform() - 1.0);
    b[j] = scale * (2.0 * rng.uniform() - 1.0);
    q[j] = scale * (2.0 * rng.uniform() - 1.0);
  }
  struct Eval {
    std::vector<double> p, z1, z2;
    double m1 = 0, m2 = 0, var = 0;
  };
  auto eval = [a, b, q](double th) {
    const std::size_t n = a.size();
    Eval e;
    e.p.resize(n);
    e.z1.resize(n);
    e.z2.resize(n);
    double zmax = -kInf;
    for (std::size_t j = 0; j < n; ++j) zmax = std::max(zmax, a[j] + b[j] * th + q[j] * th * th);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      e.p[j] = std::exp(a[j] + b[j] * th + q[j] * th * th - zmax);
      s += e.p[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      e.p[j] /= s;
      e.z1[j] = b[j] + 2.0 * q[j] * th;
      e.z2[j] = 2.0 * q[j];
      e.m1 += e.p[j] * e.z1[j];
      e.m2 += e.p[j] * e.z2[j];
    }
    for (std::size_t j = 0; j < n; ++j) e.var += e.p[j] * (e.z1[j] - e.m1) * (e.z1[j] - e.m1);
    return e;
  };
  BinModel m;
  m.name = "softmax";
  m.bins = bins;
  m.p = [eval](double th) { return eval(th).p; };
  m.dp = [eval](double th) {
    auto e = eval(th);
    std::vector<double> out(e.p.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = e.p[j] * (e.z1[j] - e.m1);
    return out;
  };
  m.d2p = [eval](double th) {
    auto e = eval(th);
    std::vector<double> out(e.p.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
      const double u = e.z1[j] - e.m1;
      out[j] = e.p[j] * (u * u + e.z2[j] - e.m2 - e.var);
    }
    return out;
  };
  return m;
}

namespace {

void check_bins(std::span<const double> counts, const BinModel& model) {
  if (counts.size() != model.bins) throw InputError("evidence: counts do not match model bins");
}

}  // namespace

EvidenceValue evidence_exact(std::span<const double> counts, const BinModel& model, double theta,
                             double epsilon) {
  check_bins(counts, model);
  if (epsilon == 0.0) return {};
  const auto p0 = model.p(theta);
  const auto p1 = model.p(theta + epsilon);
  CompensatedSum acc;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0.0) continue;
    if (!(p1[j] > 0.0)) return {-kInf, j};
    if (!(p0[j] > 0.0)) return {kInf, j};
    acc.add(counts[j] * (std::log(p1[j]) - std::log(p0[j])));
  }
  return {acc.value(), std::nullopt};
}

double evidence_linear_coefficient(std::span<const double> counts, const BinModel& model,
                                   double theta) {
  check_bins(counts, model);
  const auto p = model.p(theta);
  const auto dp = model.dp(theta);
  CompensatedSum acc;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0.0) continue;
    if (!(p[j] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    acc.add(counts[j] * dp[j] / p[j]);
  }
  return acc.value();
}

EvidenceValue evidence_quadratic(std::span<const double> counts, const BinModel& model,
                                 double theta, double epsilon) {
  check_bins(counts, model);
  const auto p = model.p(theta);
  const auto dp = model.dp(theta);
  const auto d2p = model.d2p(theta);
  CompensatedSum lin, quad;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0.0) continue;
    if (!(p[j] > 0.0)) return {-kInf, j};
    const double r = dp[j] / p[j];
    lin.add(counts[j] * r);
    quad.add(counts[j] * (r * r - d2p[j] / p[j]));
  }
  return {epsilon * lin.value() - 0.5 * epsilon * epsilon * quad.value(), std::nullopt};
}

std::vector<double> robust_counts(const BinModel& model, double theta, double N) {
  auto p = model.p(theta);
  for (auto& v : p) v *= N;
  return p;
}

std::vector<double> sampled_counts(const BinModel& model, double theta, std::size_t N,
                                   std::uint64_t seed) {
  const auto p = model.p(theta);
  const auto c = sample_counts(p, N, seed);
  return {c.begin(), c.end()};
}

double fisher_discrete(const BinModel& model, double theta) {
  const auto p = model.p(theta);
  const auto dp = model.dp(theta);
  CompensatedSum acc;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] < 0.0) throw InputError("fisher_discrete: negative probability");
    if (p[j] == 0.0) {
      if (dp[j] != 0.0)
        throw InputError("fisher_discrete: singular model, bin " + std::to_string(j) +
                         " has zero probability but nonzero derivative");
      continue;
    }
    acc.add(dp[j] * dp[j] / p[j]);
  }
  return acc.value();
}

double evidence_remainder_order(std::span<const double> counts, const BinModel& model,
                                double theta, double scale) {
  std::vector<double> eps, err;
  for (double e : {0.1, 0.05, 0.025}) {
    eps.push_back(e * scale);
    err.push_back(std::abs(evidence_exact(counts, model, theta, e * scale).value -
                           evidence_quadratic(counts, model, theta, e * scale).value));
  }
  return log_log_slope(eps, err);
}

EvidenceReport evidence_report(std::span<const double> counts, const BinModel& model, double theta,
                               double epsilon) {
  EvidenceReport r;
  r.theta = theta;
  r.epsilon = epsilon;
  r.ev_exact = evidence_exact(counts, model, theta, epsilon).value;
  r.ev_quadratic = evidence_quadratic(counts, model, theta, epsilon).value;
  r.fisher = fisher_discrete(model, theta);
  return r;
}

Json to_json(const EvidenceReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return Json{{"theta", r.theta},           {"epsilon", r.epsilon},
              {"ev_exact", num(r.ev_exact)}, {"ev_quadratic", num(r.ev_quadratic)},
              {"fisher", num(r.fisher)},     {"excluded_points", r.excluded_points}};
}

}  // namespace kgli
