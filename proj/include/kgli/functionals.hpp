#pragma once

// The constrained variational problem: the Fisher-plus-HJE functional F of
// a density P and action S, the quadratic functional Q of a complex field
// phi, the polar map between them, and a minimiser for F.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kgli/hje.hpp"
#include "kgli/spacetime.hpp"

namespace kgli {

/// Density P (normalised over the box) and per-mass action S.
struct PolarPair {
  ScalarField P;
  ActionField S;
};

/// Divides P by its quadrature norm.
void normalise(PolarPair& pair);

struct FunctionalReport {
  double value = 0.0;
  ScalarField integrand;  // defined where evaluated; value = sum integrand x cell volume
  double lambda = 0.0;
  std::size_t excluded_points = 0;
};

/// Pointwise integrand of F:
/// c^2 { (1/P)[(d_0 P)^2 - sum_i (d_i P)^2] + lambda [(d_0 S - A^0)^2 - sum_i (d_i S + A^i)^2 - c^2] P }.
double F_integrand(const ScalarJet& P, const ScalarJet& S, const FourVector& A, double lambda, double c);

/// Pointwise integrand of Q, a = sqrt(lambda) / (2c):
/// 4c^2 { |(d_0 - i a A^0) phi|^2 - sum_i |(d_i + i a A^i) phi|^2 - (lambda c^2 / 4) |phi|^2 }.
double Q_integrand(const ComplexJet& phi, const FourVector& A, double lambda, double c);

/// F from supplied derivatives. Points with P below 1e-12 max(P), or with
/// undefined jets, are excluded and counted. Throws InputError if every point
/// is excluded.
FunctionalReport functional_F(const ScalarJetField& P, const ScalarJetField& S, const FourVectorField& A,
                              double lambda, double c = 1.0);
/// F with centered differences of P and S (S winding honoured).
FunctionalReport functional_F(const PolarPair& pair, const FourVectorField& A, double lambda, double c = 1.0);

FunctionalReport functional_Q(const ComplexJetField& phi, const FourVectorField& A, double lambda,
                              double c = 1.0);
FunctionalReport functional_Q(const ComplexField& phi, const FourVectorField& A, double lambda,
                              double c = 1.0);

/// phi = sqrt(P) exp(i sqrt(lambda) S / 2). Throws ParameterError for
/// lambda <= 0 and InputError for negative P.
ComplexField polar_compose(const PolarPair& pair, double lambda);
/// Same with derivatives by the chain rule.
ComplexJetField polar_compose(const ScalarJetField& P, const ScalarJetField& S, double lambda);

struct PolarDecomposition {
  PolarPair pair;                  // S.S.defined marks points with a defined phase
  std::size_t flagged_points = 0;  // |phi|^2 <= floor
};

/// P = |phi|^2 and S = (2 / sqrt(lambda)) x unwrapped phase. Unwrapping
/// starts at the first grid point and sweeps axis by axis: each point
/// continues from its neighbour one step back along the last axis with a
/// nonzero index. On periodic grids the integer phase winding around each
/// axis becomes the action winding. Points with |phi|^2 <= floor are flagged.
PolarDecomposition polar_decompose(const ComplexField& phi, double lambda, double floor = 1e-24);

/// |F - Q| / max(|F|, |Q|, floor) with Q evaluated on the composed field.
/// The per-mass potential A of F enters Q as c A.
double identity_check(const ScalarJetField& P, const ScalarJetField& S, const FourVectorField& A,
                      double lambda, double c = 1.0, double floor = 1e-300);
/// Centered-difference variant: F from differences of (P, S), Q from
/// differences of the composed phi (the grid must be periodic in phi, or the
/// boundary layer is excluded on interior-only grids).
double identity_check(const PolarPair& pair, const FourVectorField& A, double lambda, double c = 1.0,
                      double floor = 1e-300);

enum class KgOperatorSign {
  EulerLagrange,  // (d_0 - i a A^0)^2 - sum_i (d_i + i a A^i)^2 + lambda c^2 / 4: stationarity of Q in phi*
  Conjugate,      // (d_0 + i a A^0)^2 - sum_i (d_i - i a A^i)^2 + lambda c^2 / 4
};

/// Klein-Gordon operator applied to phi = polar_compose(P, S), with
/// a = sqrt(lambda) / (2c) and the per-mass A of F entering as c A.
ComplexField kg_residual_from_polar(const ScalarJetField& P, const ScalarJetField& S,
                                    const VectorJetField& A, double lambda, double c = 1.0,
                                    KgOperatorSign sign = KgOperatorSign::EulerLagrange);
/// Same with centered-difference jets of P, S (with winding) and A.
ComplexField kg_residual_from_polar(const PolarPair& pair, const FourVectorField& A, double lambda,
                                    double c = 1.0, KgOperatorSign sign = KgOperatorSign::EulerLagrange);

/// Largest |value| over defined points.
double max_abs(const ComplexField& f);

struct MinimizeOptions {
  int max_iterations = 20000;
  double gtol_abs = 1e-10;    // stop when grad_norm <= max(gtol_abs, gtol_rel x initial grad_norm)
  double gtol_rel = 1e-4;
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 60;
  double max_step = 0.5;      // cap on the largest parameter change per step
  bool newton = true;           // false: first-order descent on the merit only
  int krylov_iterations = 200;  // MINRES iterations per Newton direction
  double krylov_rtol = 1e-3;
  bool monotone_F = true;       // also require |F| to be non-increasing on accepted steps
};

enum class MinimizeStatus { Converged, MaxIterations, LineSearchFailed };

struct TraceRow {
  int iter = 0;
  double F = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};

struct MinimizeResult {
  PolarPair pair;
  std::vector<TraceRow> trace;
  MinimizeStatus status = MinimizeStatus::MaxIterations;
  double F = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Drives (log P, S) to a stationary point of F on a periodic grid. P stays
/// positive through the log parameterisation and is renormalised after every
/// step; F is homogeneous in P, so a stationary point has F = 0. F itself is
/// indefinite, so the backtracking line search works on the stationarity
/// merit 1/2 |grad F|^2 (grad_norm is its square root in the weighted L2
/// norm), along an inexact Newton direction from MINRES, or steepest descent
/// on the merit when that is not a descent direction. The merit, and hence
/// grad_norm, is non-increasing over accepted steps; with monotone_F so is
/// |F| (F may start on either side of zero). If no step satisfies both the
/// best point so far is returned with LineSearchFailed.
MinimizeResult minimize_F(const PolarPair& initial, const FourVectorField& A, double lambda, double c = 1.0,
                          const MinimizeOptions& opts = {});

/// Discrete F (the value the minimiser works with) and its variational
/// gradient dF/dP_q, dF/dS_q per point; exposed for cross-checks.
struct DiscreteGradient {
  double F = 0.0;
  std::vector<double> dP;
  std::vector<double> dS;
};
DiscreteGradient discrete_F_gradient(const PolarPair& pair, const FourVectorField& A, double lambda,
                                     double c = 1.0);

const char* to_string(MinimizeStatus s);

/// CSV `iter,F,grad_norm,step`.
void write_trace(const std::filesystem::path& csv, const std::vector<TraceRow>& trace);

}  // namespace kgli
