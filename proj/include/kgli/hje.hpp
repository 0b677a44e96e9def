#pragma once

// Four-velocity fields, their field-strength tensor, worldlines and the
// relativistic Hamilton-Jacobi residual.

#include <array>
#include <filesystem>
#include <functional>
#include <vector>

#include "kgli/spacetime.hpp"

namespace kgli {

using Tensor4 = std::array<std::array<double, 4>, 4>;

/// Antisymmetric F^{mu nu}; only the upper triangle is stored, in the order
/// (01, 02, 03, 12, 13, 23).
class FieldStrength {
 public:
  explicit FieldStrength(SpacetimeGrid grid);

  const SpacetimeGrid& grid() const { return grid_; }
  double at(std::size_t point, int mu, int nu) const;
  void set(std::size_t point, int mu, int nu, double value);  // mu < nu
  Tensor4 tensor(std::size_t point) const;
  bool is_defined(std::size_t point) const { return defined_.empty() || defined_[point] != 0; }
  /// Largest |F^{mu nu}| over defined points.
  double max_abs() const;
  /// Largest componentwise difference over points defined in both.
  double max_diff(const FieldStrength& other) const;

  std::vector<std::uint8_t>& defined() { return defined_; }

  static int slot(int mu, int nu);

 private:
  SpacetimeGrid grid_;
  std::vector<std::array<double, 6>> comps_;
  std::vector<std::uint8_t> defined_;
};

/// d^mu U^nu - d^nu U^mu from analytic derivatives.
FieldStrength field_strength(const VectorJetField& U);
/// Same from centered differences (boundary layer undefined on interior-only grids).
FieldStrength field_strength(const FourVectorField& U);
/// Pointwise tensor from one vector jet.
Tensor4 field_strength_at(const VectorJet& U);

struct NormResidual {
  ScalarField norm;        // U.U - c^2
  ScalarField derivative;  // max_mu |d^mu (U.U)|
  double max_norm = 0.0;
  double max_derivative = 0.0;
};

NormResidual norm_constraint_residual(const VectorJetField& U, double c);
NormResidual norm_constraint_residual(const FourVectorField& U, double c);

/// Multilinear interpolation of a grid field between cell centres; periodic
/// grids wrap, interior-only grids return nullopt outside the hull of the
/// cell centres.
std::optional<FourVector> interpolate(const FourVectorField& U, const FourVector& x);

struct Worldline {
  std::vector<double> tau;
  std::vector<FourVector> x;
  std::vector<FourVector> u;  // dx/dtau
  bool truncated = false;     // left the grid before tau_max
  double max_norm_drift = 0.0;  // max |u.u - c^2|
};

using VelocityFn = std::function<FourVector(const FourVector&)>;

/// Classic RK4 for dx/dtau = -U(x) with `steps` equal steps up to tau_max.
Worldline integrate_worldline(const VelocityFn& U, const FourVector& x0, double tau_max, int steps,
                              double c);
Worldline integrate_worldline(const FourVectorField& U, const FourVector& x0, double tau_max,
                              int steps, double c);

/// Largest |d^2x/dtau^2 - F^{mu nu} u_nu| along the worldline, with the
/// acceleration from fourth-order second differences of the samples.
double max_lorentz_residual(const Worldline& w, const std::function<Tensor4(const FourVector&)>& F);

/// CSV `tau,x0,x1[,x2,x3],u0,u1[,u2,u3]`.
void write_worldline(const std::filesystem::path& csv, const Worldline& w, int spatial_dims);

enum class ActionConvention { PerMass, Physical };

/// Scalar action on a grid. On periodic grids S may wind: S(x + L_a) =
/// S(x) + winding[a].
struct ActionField {
  ScalarField S;
  std::array<double, 4> winding{};
  ActionConvention convention = ActionConvention::PerMass;

  ScalarJetField jets() const { return finite_difference_jets(S, winding); }
};

/// A^mu = U^mu + d^mu S with centered differences of S.
FourVectorField gauge_shift(const FourVectorField& U, const ActionField& S);
/// Same with analytic derivatives carried through (d_mu A^nu included).
VectorJetField gauge_shift(const VectorJetField& U, const ScalarJetField& S);

/// Per-mass: (d_0 S - A^0)^2 - sum_i (d_i S + A^i)^2 - c^2.
/// Physical: (dS/dct - q Phi / c)^2 - sum_i (dS/dx^i + q A_i / c)^2 - m^2 c^2,
/// where A holds (Phi, A_x, A_y, A_z).
double hje_residual_at(const ScalarJet& S, const FourVector& A, const PhysicalParams& params,
                       ActionConvention convention);
ScalarField hje_residual(const ScalarJetField& S, const FourVectorField& A,
                         const PhysicalParams& params, ActionConvention convention);
/// Uses centered differences of S and its own convention flag.
ScalarField hje_residual(const ActionField& S, const FourVectorField& A, const PhysicalParams& params);

/// Largest |value| over the defined points of a field.
double max_abs(const ScalarField& f);

}  // namespace kgli
