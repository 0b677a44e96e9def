#include "kgli/spacetime.hpp"

#include <cmath>
#include <sstream>

namespace kgli {

double proper_time(const FourVector& x, double c) {
  if (!(c > 0.0)) throw ParameterError("proper_time: c must be positive");
  const double s2 = minkowski_dot(x, x);
  if (s2 < 0.0) {
    std::ostringstream msg;
    msg << "proper_time: spacelike event (" << x[0] << ", " << x[1] << ", " << x[2] << ", "
        << x[3] << ") has interval " << s2;
    throw DomainError(msg.str());
  }
  return std::sqrt(s2) / c;
}

FourVector boost(const FourVector& x, double rapidity, int axis) {
  if (axis < 1 || axis > 3) throw ParameterError("boost: axis must be 1, 2 or 3");
  const double ch = std::cosh(rapidity);
  const double sh = std::sinh(rapidity);
  FourVector out = x;
  out[0] = ch * x[0] + sh * x[axis];
  out[axis] = sh * x[0] + ch * x[axis];
  return out;
}

void PhysicalParams::validate() const {
  if (!(c > 0.0) || !std::isfinite(c)) throw ParameterError("c must be positive and finite");
  if (!(hbar > 0.0) || !std::isfinite(hbar)) throw ParameterError("hbar must be positive and finite");
  if (!(m > 0.0) || !std::isfinite(m)) throw ParameterError("m must be positive and finite");
  if (!std::isfinite(q)) throw ParameterError("q must be finite");
}

SpacetimeGrid::SpacetimeGrid(int spatial_dims, std::vector<double> origin,
                             std::vector<double> extents, std::vector<int> points,
                             Boundary boundary)
    : spatial_dims_(spatial_dims),
      origin_(std::move(origin)),
      extents_(std::move(extents)),
      points_(std::move(points)),
      boundary_(boundary) {
  if (spatial_dims_ != 1 && spatial_dims_ != 3)
    throw InputError("grid: spatial dimension must be 1 or 3");
  const auto n = static_cast<std::size_t>(axes());
  if (origin_.size() != n || extents_.size() != n || points_.size() != n)
    throw InputError("grid: origin/extents/points must have one entry per axis");
  for (std::size_t a = 0; a < n; ++a) {
    if (!(extents_[a] > 0.0) || !std::isfinite(extents_[a]))
      throw InputError("grid: extents must be positive");
    if (!std::isfinite(origin_[a])) throw InputError("grid: origin must be finite");
    if (points_[a] < 4) throw InputError("grid: at least 4 points per axis are required");
  }
  strides_.assign(n, 1);
  for (std::size_t a = n - 1; a > 0; --a)
    strides_[a - 1] = strides_[a] * static_cast<std::size_t>(points_[a]);
  size_ = strides_[0] * static_cast<std::size_t>(points_[0]);
}

SpacetimeGrid SpacetimeGrid::make_1p1(double ct0, double ct_extent, int nt, double x0,
                                      double x_extent, int nx, Boundary boundary) {
  return SpacetimeGrid(1, {ct0, x0}, {ct_extent, x_extent}, {nt, nx}, boundary);
}

std::size_t SpacetimeGrid::idx(int axis) const {
  if (axis < 0 || axis >= axes()) throw InputError("grid: axis out of range");
  return static_cast<std::size_t>(axis);
}

double SpacetimeGrid::max_spacing() const {
  double h = 0.0;
  for (int a = 0; a < axes(); ++a) h = std::max(h, spacing(a));
  return h;
}

double SpacetimeGrid::cell_volume() const {
  double v = 1.0;
  for (int a = 0; a < axes(); ++a) v *= spacing(a);
  return v;
}

SpacetimeGrid::Index SpacetimeGrid::unflatten(std::size_t flat) const {
  Index out{};
  for (int a = 0; a < axes(); ++a) {
    const auto s = strides_[static_cast<std::size_t>(a)];
    out[static_cast<std::size_t>(a)] = static_cast<int>(flat / s);
    flat %= s;
  }
  return out;
}

std::size_t SpacetimeGrid::flatten(const Index& index) const {
  std::size_t flat = 0;
  for (int a = 0; a < axes(); ++a) {
    const int i = index[static_cast<std::size_t>(a)];
    if (i < 0 || i >= points(a)) throw RangeError("grid: index out of range");
    flat += static_cast<std::size_t>(i) * strides_[static_cast<std::size_t>(a)];
  }
  return flat;
}

FourVector SpacetimeGrid::position(std::size_t flat) const {
  const Index ix = unflatten(flat);
  FourVector x;
  for (int a = 0; a < axes(); ++a) x[a] = coordinate(a, ix[static_cast<std::size_t>(a)]);
  return x;
}

std::optional<std::size_t> SpacetimeGrid::shifted(std::size_t flat, int axis, int offset,
                                                  int* wraps) const {
  const auto a = idx(axis);
  const int n = points_[a];
  const int i = static_cast<int>((flat / strides_[a]) % static_cast<std::size_t>(n));
  int j = i + offset;
  int crossed = 0;
  if (j < 0 || j >= n) {
    if (!periodic()) return std::nullopt;
    crossed = (j < 0) ? -((-j + n - 1) / n) : j / n;
    j -= crossed * n;
  }
  if (wraps) *wraps = crossed;
  return flat + static_cast<std::size_t>(j) * strides_[a] - static_cast<std::size_t>(i) * strides_[a];
}

bool SpacetimeGrid::has_stencil(std::size_t flat, int width) const {
  if (periodic()) return true;
  const Index ix = unflatten(flat);
  for (int a = 0; a < axes(); ++a) {
    const int i = ix[static_cast<std::size_t>(a)];
    if (i - width < 0 || i + width >= points(a)) return false;
  }
  return true;
}

namespace {

template <class T>
Field<Jet<T>> fd_jets(const Field<T>& f, const std::array<double, 4>& winding) {
  const auto& g = f.grid;
  Field<Jet<T>> out(g);
  if (!g.periodic()) out.defined.assign(g.size(), 0);
  const int na = g.axes();
  auto fetch = [&](std::size_t p, int axis, int off) -> T {
    int wraps = 0;
    const std::size_t q = *g.shifted(p, axis, off, &wraps);
    return f.values[q] + static_cast<double>(wraps) * winding[static_cast<std::size_t>(axis)];
  };
  auto fetch2 = [&](std::size_t p, int a, int oa, int b, int ob) -> T {
    int wa = 0, wb = 0;
    const std::size_t q1 = *g.shifted(p, a, oa, &wa);
    const std::size_t q2 = *g.shifted(q1, b, ob, &wb);
    return f.values[q2] + static_cast<double>(wa) * winding[static_cast<std::size_t>(a)] +
           static_cast<double>(wb) * winding[static_cast<std::size_t>(b)];
  };
  for (std::size_t p = 0; p < g.size(); ++p) {
    Jet<T>& jet = out.values[p];
    jet.value = f.values[p];
    if (!g.has_stencil(p, 1) || !f.is_defined(p)) continue;
    for (int a = 0; a < na; ++a) {
      const double h = g.spacing(a);
      const T fp = fetch(p, a, 1);
      const T fm = fetch(p, a, -1);
      jet.d[static_cast<std::size_t>(a)] = (fp - fm) / (2.0 * h);
      jet.dd[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)] =
          (fp - 2.0 * f.values[p] + fm) / (h * h);
      for (int b = a + 1; b < na; ++b) {
        const double hb = g.spacing(b);
        const T mixed = (fetch2(p, a, 1, b, 1) - fetch2(p, a, 1, b, -1) - fetch2(p, a, -1, b, 1) +
                         fetch2(p, a, -1, b, -1)) /
                        (4.0 * h * hb);
        jet.dd[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = mixed;
        jet.dd[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = mixed;
      }
    }
    if (!out.defined.empty()) out.defined[p] = 1;
  }
  return out;
}

}  // namespace

ScalarJetField finite_difference_jets(const ScalarField& f, const std::array<double, 4>& winding) {
  return fd_jets(f, winding);
}

ComplexJetField finite_difference_jets(const ComplexField& f) { return fd_jets(f, {}); }

VectorJetField finite_difference_jets(const FourVectorField& f) {
  const auto& g = f.grid;
  VectorJetField out(g);
  if (!g.periodic()) out.defined.assign(g.size(), 0);
  for (std::size_t p = 0; p < g.size(); ++p) {
    VectorJet& jet = out.values[p];
    jet.value = f.values[p];
    if (!g.has_stencil(p, 1) || !f.is_defined(p)) continue;
    for (int a = 0; a < g.axes(); ++a) {
      const FourVector& up = f.values[*g.shifted(p, a, 1)];
      const FourVector& um = f.values[*g.shifted(p, a, -1)];
      jet.d[static_cast<std::size_t>(a)] = (up - um) * (1.0 / (2.0 * g.spacing(a)));
    }
    if (!out.defined.empty()) out.defined[p] = 1;
  }
  return out;
}

FourVectorField values_of(const VectorJetField& f) {
  FourVectorField out(f.grid);
  for (std::size_t p = 0; p < f.values.size(); ++p) out.values[p] = f.values[p].value;
  out.defined = f.defined;
  return out;
}

FourVector four_gradient(const ScalarField& f, std::size_t point) {
  const auto& g = f.grid;
  if (point >= g.size()) throw RangeError("four_gradient: point out of range");
  if (!g.has_stencil(point, 1))
    throw StencilError("four_gradient: point lies on the boundary of an interior-only grid");
  FourVector out;
  for (int a = 0; a < g.axes(); ++a) {
    const double dp = f.values[*g.shifted(point, a, 1)];
    const double dm = f.values[*g.shifted(point, a, -1)];
    out[a] = kMetric[static_cast<std::size_t>(a)] * (dp - dm) / (2.0 * g.spacing(a));
  }
  return out;
}

}  // namespace kgli
