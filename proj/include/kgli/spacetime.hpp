#pragma once

// Minkowski-space primitives shared by every other module: four-vectors with
// signature (+,-,-,-), uniform space-time grids, sampled fields and the
// centered-difference machinery built on top of them.

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "kgli/error.hpp"

namespace kgli {

using Complex = std::complex<double>;

inline constexpr std::array<double, 4> kMetric{1.0, -1.0, -1.0, -1.0};

struct FourVector {
  std::array<double, 4> x{};

  constexpr double& operator[](int mu) { return x[static_cast<std::size_t>(mu)]; }
  constexpr double operator[](int mu) const { return x[static_cast<std::size_t>(mu)]; }

  constexpr FourVector& operator+=(const FourVector& o) {
    for (int mu = 0; mu < 4; ++mu) (*this)[mu] += o[mu];
    return *this;
  }
  constexpr FourVector& operator-=(const FourVector& o) {
    for (int mu = 0; mu < 4; ++mu) (*this)[mu] -= o[mu];
    return *this;
  }
  constexpr FourVector& operator*=(double s) {
    for (auto& v : x) v *= s;
    return *this;
  }
  friend constexpr FourVector operator+(FourVector a, const FourVector& b) { return a += b; }
  friend constexpr FourVector operator-(FourVector a, const FourVector& b) { return a -= b; }
  friend constexpr FourVector operator*(FourVector a, double s) { return a *= s; }
  friend constexpr FourVector operator*(double s, FourVector a) { return a *= s; }
  friend constexpr FourVector operator-(FourVector a) { return a *= -1.0; }
  friend constexpr bool operator==(const FourVector&, const FourVector&) = default;
};

/// a^0 b^0 - a^1 b^1 - a^2 b^2 - a^3 b^3
constexpr double minkowski_dot(const FourVector& a, const FourVector& b) {
  return a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
}

/// Raises or lowers an index; with the diagonal metric both are the same map.
constexpr FourVector flip_index(const FourVector& a) {
  return FourVector{{a[0], -a[1], -a[2], -a[3]}};
}

/// Proper time of the event x (measured from the origin) in the frame where x
/// is given. Throws DomainError for spacelike x.
double proper_time(const FourVector& x, double c);

/// Hyperbolic rotation in the (0, axis) plane, axis in 1..3.
FourVector boost(const FourVector& x, double rapidity, int axis);

struct PhysicalParams {
  double c = 1.0;
  double hbar = 1.0;
  double m = 1.0;
  double q = 0.0;

  /// Weighting factor 4 m^2 / hbar^2 that turns the quadratic functional into
  /// the Klein-Gordon form.
  double lambda() const { return 4.0 * (m / hbar) * (m / hbar); }
  void validate() const;
};

enum class Boundary { Interior, Periodic };

/// Uniform cell-centred grid on a box [origin, origin + extent) per axis.
/// Axis 0 is x^0 = ct; axes 1..spatial_dims are spatial. Points are stored in
/// lexicographic order with axis 0 varying slowest.
class SpacetimeGrid {
 public:
  using Index = std::array<int, 4>;

  SpacetimeGrid(int spatial_dims, std::vector<double> origin, std::vector<double> extents,
                std::vector<int> points, Boundary boundary);

  /// Convenience constructor for 1+1D boxes.
  static SpacetimeGrid make_1p1(double ct0, double ct_extent, int nt, double x0, double x_extent,
                                int nx, Boundary boundary);

  int spatial_dims() const { return spatial_dims_; }
  int axes() const { return spatial_dims_ + 1; }
  double origin(int axis) const { return origin_[idx(axis)]; }
  double extent(int axis) const { return extents_[idx(axis)]; }
  int points(int axis) const { return points_[idx(axis)]; }
  double spacing(int axis) const { return extents_[idx(axis)] / points_[idx(axis)]; }
  double max_spacing() const;
  Boundary boundary() const { return boundary_; }
  bool periodic() const { return boundary_ == Boundary::Periodic; }

  std::size_t size() const { return size_; }
  std::size_t stride(int axis) const { return strides_[idx(axis)]; }
  /// Product of spacings: c dt dx (dy dz) in the units of the axes.
  double cell_volume() const;

  Index unflatten(std::size_t flat) const;
  std::size_t flatten(const Index& index) const;
  double coordinate(int axis, int i) const { return origin(axis) + (i + 0.5) * spacing(axis); }
  FourVector position(std::size_t flat) const;

  /// Flat index of the point `offset` cells away along `axis`; wraps on
  /// periodic grids, nullopt if it would leave an interior-only grid. If
  /// `wraps` is given it receives the number of times the box was crossed
  /// (+1 / -1 / 0).
  std::optional<std::size_t> shifted(std::size_t flat, int axis, int offset,
                                     int* wraps = nullptr) const;
  /// True if a centered stencil of half-width `width` fits on every axis.
  bool has_stencil(std::size_t flat, int width = 1) const;

  friend bool operator==(const SpacetimeGrid&, const SpacetimeGrid&) = default;

 private:
  std::size_t idx(int axis) const;

  int spatial_dims_;
  std::vector<double> origin_;
  std::vector<double> extents_;
  std::vector<int> points_;
  Boundary boundary_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

/// Values sampled on a grid. `defined` is empty when every point carries a
/// value; otherwise it marks the points where the value is meaningful (e.g.
/// boundary points of a finite-difference result on an interior-only grid).
template <class T>
struct Field {
  SpacetimeGrid grid;
  std::vector<T> values;
  std::vector<std::uint8_t> defined;

  Field(SpacetimeGrid g, T fill = T{}) : grid(std::move(g)), values(grid.size(), fill) {}
  Field(SpacetimeGrid g, std::vector<T> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid.size()) throw InputError("field size does not match grid");
  }

  bool is_defined(std::size_t i) const { return defined.empty() || defined[i] != 0; }
  std::size_t defined_count() const {
    if (defined.empty()) return values.size();
    std::size_t n = 0;
    for (auto d : defined) n += d;
    return n;
  }
  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
};

using ScalarField = Field<double>;
using ComplexField = Field<Complex>;
using FourVectorField = Field<FourVector>;

/// Samples `f` at every cell centre of `grid`.
template <class T, class Fn>
Field<T> sample(const SpacetimeGrid& grid, Fn&& f) {
  Field<T> out(grid);
  for (std::size_t i = 0; i < grid.size(); ++i) out.values[i] = f(grid.position(i));
  return out;
}

/// Value together with first and second covariant partials d/dx^mu.
template <class T>
struct Jet {
  T value{};
  std::array<T, 4> d{};
  std::array<std::array<T, 4>, 4> dd{};
};

using ScalarJet = Jet<double>;
using ComplexJet = Jet<Complex>;
using ScalarJetField = Field<ScalarJet>;
using ComplexJetField = Field<ComplexJet>;

/// Four-vector with its covariant partials: d[mu][nu] = d U^nu / d x^mu.
struct VectorJet {
  FourVector value;
  std::array<FourVector, 4> d{};
};
using VectorJetField = Field<VectorJet>;

/// Second-order centered differences for the first and second partials of a
/// sampled field. On interior-only grids the outer layer is left undefined.
/// `winding[axis]` is added to values that are fetched across the periodic
/// seam (f(x + L) = f(x) + winding), which lets multivalued action fields with
/// a fixed number of phase windings be differentiated on a torus.
ScalarJetField finite_difference_jets(const ScalarField& f,
                                      const std::array<double, 4>& winding = {});
ComplexJetField finite_difference_jets(const ComplexField& f);

/// Centered differences of every component of a four-vector field.
VectorJetField finite_difference_jets(const FourVectorField& f);

/// Drops derivative information.
FourVectorField values_of(const VectorJetField& f);

/// Contravariant four-gradient d^mu f = (d_0 f, -d_1 f, -d_2 f, -d_3 f) by
/// second-order centered differences at one grid point. Throws StencilError
/// at boundary points of an interior-only grid.
FourVector four_gradient(const ScalarField& f, std::size_t point);

/// Covariant gradient of a jet as a contravariant four-vector.
template <class T>
std::array<T, 4> raise(const std::array<T, 4>& d) {
  return {d[0], -d[1], -d[2], -d[3]};
}

}  // namespace kgli
