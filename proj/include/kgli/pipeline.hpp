#pragma once

// Batch drivers behind the kgli command line. Every command reads a JSON
// config, writes its outputs under the output directory together with one
// run.json manifest, and reports failures through the exit-code contract
// 0 ok / 2 usage or config / 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgli/error.hpp"
#include "kgli/experiment.hpp"
#include "kgli/field_io.hpp"
#include "kgli/inference.hpp"
#include "kgli/kg_solver.hpp"

namespace kgli::pipeline {

// Bad command line or config (exit 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: divergence, unnormalisable density, failed line search (exit 3).
class NumericFailure : public Error {
 public:
  using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// DivergenceError and NumericFailure map to 3, everything else to 2.
int exit_code(const std::exception& e);

const char* version();

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

struct RunOptions {
  std::filesystem::path config;
  std::filesystem::path out = "kgli_out";
  std::optional<std::uint64_t> seed;  // overrides the config seed
};

struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;  // relative to the output directory
  double wall_clock = 0.0;                      // seconds
  Json diagnostics = Json::object();
  int exit_code = kExitOk;
  std::string error;
};

/// Manifest with SHA-256 of the config, inputs and outputs.
Json to_json(const RunManifest& m, const std::filesystem::path& out_dir);

/// Reads the config, runs the command, writes run.json (also on failure, when
/// the output directory can be created) and returns the exit code. Errors are
/// reported on `log`.
int run(const std::string& command, const RunOptions& opts, std::ostream& log);

/// The file formats read and written by the commands.
std::string help_formats();

// Command bodies. They throw on failure; the manifest collects outputs and
// diagnostics. Relative paths in the config are resolved against the
// config's directory.
void cmd_solve(const Json& config, const RunOptions& opts, RunManifest& m);
void cmd_sample(const Json& config, const RunOptions& opts, RunManifest& m);
void cmd_analyze(const Json& config, const RunOptions& opts, RunManifest& m);
void cmd_verify(const Json& config, const RunOptions& opts, RunManifest& m);
void cmd_minimize(const Json& config, const RunOptions& opts, RunManifest& m);

/// Level file of the solver history: CSV `axis1,re,im` with a JSON sidecar
/// {step, t, lattice}.
void write_level(const std::filesystem::path& csv, const Lattice1D& lattice, const Levels& level, long step,
                 double t);
Levels read_level(const std::filesystem::path& csv, Lattice1D* lattice = nullptr);

/// Time-shift family of a recorded density: P(x | theta) is the density at
/// x^0 - c theta, renormalised over the detector window. The density is a
/// space-time field whose axis-0 cell centres are the recorded levels; in
/// between levels the spatial-bin masses are interpolated linearly in t.
/// Detector bins follow bin_event with clock time t - t_begin and position
/// x - x_origin; bins with j = 0 or k = 0 have zero probability. p(theta)
/// throws RangeError when the shifted window leaves the recorded times.
BinModel time_shift_model(const ScalarField& density, double c, const DetectorConfig& cfg, double t_begin);

/// Ev(eps) / N from data against its second-order prediction
/// -(eps^2 / 2) I_F, with the multinomial standard error
/// sqrt(Var_P(ln P(eps) / P) / N) taken under the unperturbed model.
struct EvidenceCheck {
  double epsilon = 0.0;
  double ev_per_event = 0.0;
  double predicted = 0.0;
  double standard_error = 0.0;

  double z() const { return standard_error > 0.0 ? (ev_per_event - predicted) / standard_error : 0.0; }
};
std::vector<EvidenceCheck> evidence_checks(std::span<const double> counts, const BinModel& model, double theta,
                                           std::span<const double> epsilons);

struct Check {
  std::string name;
  double value = 0.0;
  std::optional<double> lower;
  std::optional<double> upper;

  bool pass() const;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;

  bool pass() const;
};
Json to_json(const SuiteReport& r);

/// Suites: identity, hje, gauge, scale, dispersion, continuity. `points` sets
/// the base grid size. Throws UsageError for an unknown suite.
SuiteReport verify_suite(const std::string& suite, int points, std::uint64_t seed);

}  // namespace kgli::pipeline
