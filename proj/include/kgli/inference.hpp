#pragma once

// Evidence of a perturbed hypothesis, robustness of binned experiments and
// the Fisher information of parametric space-time densities.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgli/field_io.hpp"
#include "kgli/spacetime.hpp"

namespace kgli {

/// Proper time tau(x) = sqrt(x.x) / c, or nullopt outside the forward
/// timelike region x^0 > |r|.
std::optional<double> forward_proper_time(const FourVector& x, double c);

/// A family of space-time densities P(x | theta). Families that depend on x
/// only through the proper time also carry their proper-time representation
/// P(tau | theta), which the tau-form of the Fisher information and the
/// homogeneity check use.
struct ParametricDensity {
  std::string name;
  double c = 1.0;
  bool timelike_support = true;

  std::function<double(const FourVector&, double)> eval;
  std::function<double(const FourVector&, double)> d_dtheta;
  // Optional: partial in tau at fixed rapidity, and the covariant gradient
  // dP/dx^mu.
  std::function<double(const FourVector&, double)> d_dtau;
  std::function<FourVector(const FourVector&, double)> gradient;

  // Optional proper-time representation.
  std::function<double(double, double)> eval_tau;
  std::function<double(double, double)> d_dtheta_tau;
  std::function<double(double, double)> d_dtau_tau;

  bool tau_only() const { return static_cast<bool>(eval_tau); }
};

/// P ~ exp(-(tau - theta)^2 / (2 sigma^2)): a shift-invariant location family.
ParametricDensity gaussian_proper_time_family(double sigma, double c = 1.0);
/// P ~ tau exp(-(tau - theta)^2 / (2 sigma^2)): depends on tau alone but is not
/// shift-invariant.
ParametricDensity tau_weighted_gaussian_family(double sigma, double c = 1.0);
/// Gaussian in (tau - theta) multiplied by (1 + tilt x^1): depends on more than
/// the proper time.
ParametricDensity tilted_gaussian_family(double sigma, double tilt, double c = 1.0);
/// theta-independent density exp(-tau / scale).
ParametricDensity static_family(double scale, double c = 1.0);

enum class FisherForm { Theta, Tau };

struct FisherResult {
  double value = 0.0;
  std::size_t included_points = 0;
  std::size_t excluded_points = 0;  // outside the timelike region or below tau_min
  double tau_min = 0.0;
  double normalisation = 0.0;       // integral of the raw density over the included points
};

/// Midpoint quadrature of the integral of (1/p)(dp/dtheta)^2 over the grid
/// box with measure equal to the cell volume (c dt dx ... in grid units). The
/// density is renormalised over the included points first; its theta
/// derivative includes the derivative of the normaliser. Points outside the
/// forward light cone or with tau < tau_min are excluded and counted; a
/// negative tau_min selects the default 2 x max grid spacing / c. The Tau form
/// replaces dP/dtheta by -dP/dtau and requires a proper-time family.
FisherResult fisher_continuum(const ParametricDensity& model, double theta,
                              const SpacetimeGrid& grid, FisherForm form = FisherForm::Theta,
                              double tau_min = -1.0);

/// P(tau + delta | theta + delta) - P(tau | theta).
double homogeneity_residual(const ParametricDensity& model, double tau, double theta, double delta);

enum class DerivativeMode { Analytic, FiniteDifference };

struct GradientIdentityResult {
  ScalarField residual;  // defined only at included points
  std::size_t excluded_points = 0;
  double max_abs = 0.0;
  double tau_min = 0.0;
};

/// Pointwise eta_{mu nu} (d^mu P)(d^nu P) - (dP/dtau)^2 / c^2 at the timelike
/// grid points with tau > tau_min. The space-time gradient is analytic or a
/// centered difference with the grid spacing; dP/dtau always comes from the
/// model's d_dtau.
GradientIdentityResult gradient_identity_residual(const ParametricDensity& model,
                                                  const SpacetimeGrid& grid, double theta,
                                                  DerivativeMode mode = DerivativeMode::Analytic,
                                                  double tau_min = -1.0);

/// Bin probabilities P(j | theta) with first and second theta-derivatives.
struct BinModel {
  std::string name;
  std::size_t bins = 0;
  std::function<std::vector<double>(double)> p;
  std::function<std::vector<double>(double)> dp;
  std::function<std::vector<double>(double)> d2p;
};

/// P = (theta, 1 - theta).
BinModel two_bin_model();
/// P_j = 1 / B for every theta.
BinModel uniform_bin_model(std::size_t bins);
/// Softmax of quadratic polynomials in theta with random coefficients of
/// size `scale`.
BinModel random_softmax_model(std::size_t bins, std::uint64_t seed, double scale = 1.0);

struct EvidenceValue {
  double value = 0.0;
  std::optional<std::size_t> singular_bin;  // occupied bin with zero probability
};

/// sum_j c_j [ln P(j | theta + eps) - ln P(j | theta)]. An occupied bin with
/// zero probability returns an infinite sentinel (+inf if only the
/// unperturbed model vanishes there) and the bin id.
EvidenceValue evidence_exact(std::span<const double> counts, const BinModel& model, double theta,
                             double epsilon);

/// Second-order expansion of evidence_exact about epsilon = 0.
EvidenceValue evidence_quadratic(std::span<const double> counts, const BinModel& model,
                                 double theta, double epsilon);

/// Coefficient of epsilon in evidence_quadratic: sum_j c_j P'_j / P_j.
double evidence_linear_coefficient(std::span<const double> counts, const BinModel& model,
                                   double theta);

/// c_j = N P(j | theta), not rounded.
std::vector<double> robust_counts(const BinModel& model, double theta, double N);
/// Multinomial counts from N draws of the model (the rounded, sampled mode).
std::vector<double> sampled_counts(const BinModel& model, double theta, std::size_t N,
                                   std::uint64_t seed);

/// sum_j (P'_j)^2 / P_j. Throws InputError if a bin has P = 0 but P' != 0.
double fisher_discrete(const BinModel& model, double theta);

/// Slope of log|exact - quadratic| against log(eps) over eps in
/// {0.1, 0.05, 0.025} x scale.
double evidence_remainder_order(std::span<const double> counts, const BinModel& model,
                                double theta, double scale = 1.0);

struct EvidenceReport {
  double theta = 0.0;
  double epsilon = 0.0;
  double ev_exact = 0.0;
  double ev_quadratic = 0.0;
  double fisher = 0.0;
  std::size_t excluded_points = 0;
};

EvidenceReport evidence_report(std::span<const double> counts, const BinModel& model, double theta,
                               double epsilon);
Json to_json(const EvidenceReport& r);

}  // namespace kgli
