#pragma once

// The ideal particle-detection experiment: clock times and detector positions
// are binned with resolutions (dt, ds), every repetition produces exactly one
// event, and the N events reduce to a histogram of counts per space-time bin.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "kgli/field_io.hpp"
#include "kgli/spacetime.hpp"

namespace kgli {

struct DetectorConfig {
  double delta_t = 1.0;   // temporal resolution
  double delta_s = 1.0;   // spatial resolution
  int J = 1;              // largest time-bin index
  std::vector<int> K{1};  // largest space-bin index per spatial axis
  std::uint64_t N = 1;    // number of repetitions

  int spatial_dims() const { return static_cast<int>(K.size()); }
  void validate() const;
  /// Number of bins (J+1) * prod(K_i+1).
  std::size_t bin_count() const;
  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

struct EventRecord {
  int j = 0;
  std::array<int, 3> k{};

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

std::size_t flat_bin(const EventRecord& e, const DetectorConfig& cfg);
EventRecord unflat_bin(std::size_t flat, const DetectorConfig& cfg);

struct BinnedDataset {
  DetectorConfig config;
  std::vector<std::uint64_t> counts;  // one per bin, lexicographic (j slowest)
  std::uint64_t total = 0;

  std::vector<double> counts_real() const { return {counts.begin(), counts.end()}; }
  friend bool operator==(const BinnedDataset&, const BinnedDataset&) = default;
};

/// j = ceiling(t / dt), k = ceiling(r / ds) elementwise. Throws RangeError if
/// t < 0 or the bin falls outside [0, J] x [0, K].
EventRecord bin_event(double t, std::span<const double> r, const DetectorConfig& cfg);

/// Histogram of the records; total equals the number of records.
BinnedDataset aggregate(std::span<const EventRecord> events, const DetectorConfig& cfg);

/// Detector whose bins are `coarsen` x `coarsen` blocks of grid cells
/// measured from the grid origin (clock time t = (x^0 - origin_0) / c).
DetectorConfig detector_for_grid(const SpacetimeGrid& grid, double c, int coarsen_t = 1,
                                 int coarsen_s = 1);

/// Detector bin of every grid cell, evaluated at the cell centre.
std::vector<std::size_t> cell_bins(const SpacetimeGrid& grid, const DetectorConfig& cfg, double c);

/// Probability of each detector bin: sum of density x cell volume over the
/// cells that fall into the bin.
std::vector<double> bin_probabilities(const ScalarField& density, const DetectorConfig& cfg,
                                      double c);

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
/// The generator is std::mt19937_64, whose output sequence is fixed by the
/// C++ standard, so samples are identical across platforms for a given seed.
class EventSampler {
 public:
  explicit EventSampler(std::uint64_t seed);
  double uniform();

 private:
  std::mt19937_64 engine_;
};

/// N independent categorical draws over the cells of `density`, with cell
/// probabilities density x cell volume (inverse CDF in flat order). Throws
/// InputError if the density is negative somewhere, sums to zero, or is not
/// normalised to 1 within 1e-9.
std::vector<std::size_t> sample_cells(const ScalarField& density, std::size_t N,
                                      std::uint64_t seed);

/// sample_cells followed by bin_event at each drawn cell centre.
std::vector<EventRecord> sample_events(const ScalarField& density, std::size_t N,
                                       std::uint64_t seed, const DetectorConfig& cfg,
                                       double c = 1.0);

/// Categorical draws directly over bin probabilities (inverse CDF in bin
/// order), returned as counts per bin.
std::vector<std::uint64_t> sample_counts(std::span<const double> probs, std::size_t N,
                                         std::uint64_t seed);

struct LogIprob {
  double value = 0.0;  // ln P(D | theta, N, Z), -inf if impossible
  std::optional<std::size_t> impossible_bin;
};

/// ln[ N! prod_j P_j^{c_j} / c_j! ] with log-gamma factorials.
LogIprob log_multinomial_iprob(std::span<const double> counts, std::span<const double> probs);
LogIprob log_multinomial_iprob(const BinnedDataset& data, std::span<const double> probs);

Json detector_to_json(const DetectorConfig& cfg);
DetectorConfig detector_from_json(const Json& j);

/// Events file: CSV `n,j,k0[,k1,k2]`.
void write_events(const std::filesystem::path& csv, std::span<const EventRecord> events,
                  const DetectorConfig& cfg);
std::vector<EventRecord> read_events(const std::filesystem::path& csv, const DetectorConfig& cfg);

/// Dataset file: CSV `j,k0[,k1,k2],count` plus JSON sidecar {"N", "config"}.
void write_dataset(const std::filesystem::path& csv, const BinnedDataset& data);
BinnedDataset read_dataset(const std::filesystem::path& csv);

}  // namespace kgli
