#include "kgli/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kgli/numerics.hpp"

namespace kgli {

void DetectorConfig::validate() const {
  if (!(delta_t > 0.0)) throw InputError("detector: delta_t must be positive");
  if (!(delta_s > 0.0)) throw InputError("detector: delta_s must be positive");
  if (J < 1) throw InputError("detector: J must be >= 1");
  if (K.size() != 1 && K.size() != 3) throw InputError("detector: K must have 1 or 3 components");
  for (int k : K)
    if (k < 1) throw InputError("detector: every K component must be >= 1");
  if (N < 1) throw InputError("detector: N must be >= 1");
}

std::size_t DetectorConfig::bin_count() const {
  std::size_t n = static_cast<std::size_t>(J) + 1;
  for (int k : K) n *= static_cast<std::size_t>(k) + 1;
  return n;
}

std::size_t flat_bin(const EventRecord& e, const DetectorConfig& cfg) {
  std::size_t flat = static_cast<std::size_t>(e.j);
  for (std::size_t a = 0; a < cfg.K.size(); ++a)
    flat = flat * (static_cast<std::size_t>(cfg.K[a]) + 1) + static_cast<std::size_t>(e.k[a]);
  return flat;
}

EventRecord unflat_bin(std::size_t flat, const DetectorConfig& cfg) {
  EventRecord e;
  for (std::size_t a = cfg.K.size(); a-- > 0;) {
    const auto n = static_cast<std::size_t>(cfg.K[a]) + 1;
    e.k[a] = static_cast<int>(flat % n);
    flat /= n;
  }
  e.j = static_cast<int>(flat);
  return e;
}

EventRecord bin_event(double t, std::span<const double> r, const DetectorConfig& cfg) {
  if (r.size() != cfg.K.size()) throw InputError("bin_event: position dimension does not match detector");
  auto out_of_range = [](const char* what, double coord, long idx, int max) {
    std::ostringstream msg;
    msg << "bin_event: " << what << " = " << coord << " maps to bin " << idx
        << " outside [0, " << max << "]";
    return RangeError(msg.str());
  };
  if (!(t >= 0.0) || !std::isfinite(t)) throw out_of_range("t", t, -1, cfg.J);
  EventRecord e;
  const double jt = std::ceil(t / cfg.delta_t);
  if (jt > cfg.J) throw out_of_range("t", t, static_cast<long>(jt), cfg.J);
  e.j = static_cast<int>(jt);
  for (std::size_t a = 0; a < r.size(); ++a) {
    const double ka = std::ceil(r[a] / cfg.delta_s);
    if (!std::isfinite(ka) || ka < 0.0 || ka > cfg.K[a])
      throw out_of_range("r", r[a], std::isfinite(ka) ? static_cast<long>(ka) : -1, cfg.K[a]);
    e.k[a] = static_cast<int>(ka);
  }
  return e;
}

BinnedDataset aggregate(std::span<const EventRecord> events, const DetectorConfig& cfg) {
  BinnedDataset d;
  d.config = cfg;
  d.counts.assign(cfg.bin_count(), 0);
  for (const auto& e : events) {
    if (e.j < 0 || e.j > cfg.J) throw RangeError("aggregate: time bin out of range");
    for (std::size_t a = 0; a < cfg.K.size(); ++a)
      if (e.k[a] < 0 || e.k[a] > cfg.K[a]) throw RangeError("aggregate: space bin out of range");
    ++d.counts[flat_bin(e, cfg)];
  }
  d.total = events.size();
  d.config.N = std::max<std::uint64_t>(1, d.total);
  return d;
}

DetectorConfig detector_for_grid(const SpacetimeGrid& grid, double c, int coarsen_t, int coarsen_s) {
  if (coarsen_t < 1 || coarsen_s < 1) throw InputError("detector: coarsening factors must be >= 1");
  DetectorConfig cfg;
  cfg.delta_t = coarsen_t * grid.spacing(0) / c;
  const double hs = grid.spacing(1);
  for (int a = 2; a < grid.axes(); ++a)
    if (std::abs(grid.spacing(a) - hs) > 1e-12 * hs)
      throw InputError("detector: spatial spacing must be equal on every axis");
  cfg.delta_s = coarsen_s * hs;
  cfg.J = (grid.points(0) + coarsen_t - 1) / coarsen_t;
  cfg.K.assign(static_cast<std::size_t>(grid.spatial_dims()), 0);
  for (int a = 1; a < grid.axes(); ++a)
    cfg.K[static_cast<std::size_t>(a - 1)] = (grid.points(a) + coarsen_s - 1) / coarsen_s;
  return cfg;
}

std::vector<std::size_t> cell_bins(const SpacetimeGrid& grid, const DetectorConfig& cfg, double c) {
  std::vector<std::size_t> out(grid.size());
  std::array<double, 3> r{};
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const FourVector x = grid.position(p);
    const double t = (x[0] - grid.origin(0)) / c;
    for (int a = 1; a < grid.axes(); ++a)
      r[static_cast<std::size_t>(a - 1)] = x[a] - grid.origin(a);
    out[p] = flat_bin(
        bin_event(t, std::span<const double>(r.data(), static_cast<std::size_t>(grid.spatial_dims())), cfg),
        cfg);
  }
  return out;
}

std::vector<double> bin_probabilities(const ScalarField& density, const DetectorConfig& cfg, double c) {
  const auto bins = cell_bins(density.grid, cfg, c);
  std::vector<CompensatedSum> acc(cfg.bin_count());
  const double w = density.grid.cell_volume();
  for (std::size_t p = 0; p < bins.size(); ++p) acc[bins[p]].add(density.values[p] * w);
  std::vector<double> out(acc.size());
  for (std::size_t b = 0; b < acc.size(); ++b) out[b] = acc[b].value();
  return out;
}

EventSampler::EventSampler(std::uint64_t seed) : engine_(seed) {}

double EventSampler::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

namespace {

std::vector<double> cumulative(std::span<const double> mass, const char* who) {
  std::vector<double> cdf(mass.size());
  CompensatedSum acc;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (!(mass[i] >= 0.0) || !std::isfinite(mass[i]))
      throw InputError(std::string(who) + ": negative or non-finite probability mass");
    acc.add(mass[i]);
    cdf[i] = acc.value();
  }
  if (cdf.empty() || !(cdf.back() > 0.0))
    throw InputError(std::string(who) + ": density is not normalisable (zero total mass)");
  return cdf;
}

std::size_t draw(const std::vector<double>& cdf, EventSampler& rng) {
  const double u = rng.uniform() * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<std::size_t>(it - cdf.begin());
}

}  // namespace

std::vector<std::size_t> sample_cells(const ScalarField& density, std::size_t N, std::uint64_t seed) {
  std::vector<double> mass(density.values.size());
  const double w = density.grid.cell_volume();
  for (std::size_t p = 0; p < mass.size(); ++p) mass[p] = density.values[p] * w;
  const auto cdf = cumulative(mass, "sample_events");
  if (std::abs(cdf.back() - 1.0) > 1e-9)
    throw InputError("sample_events: density is not normalised (total mass " +
                     format_double(cdf.back()) + ")");
  EventSampler rng(seed);
  std::vector<std::size_t> out(N);
  for (auto& cell : out) cell = draw(cdf, rng);
  return out;
}

std::vector<EventRecord> sample_events(const ScalarField& density, std::size_t N, std::uint64_t seed,
                                       const DetectorConfig& cfg, double c) {
  const auto cells = sample_cells(density, N, seed);
  const auto bins = cell_bins(density.grid, cfg, c);
  std::vector<EventRecord> out;
  out.reserve(N);
  for (std::size_t cell : cells) out.push_back(unflat_bin(bins[cell], cfg));
  return out;
}

std::vector<std::uint64_t> sample_counts(std::span<const double> probs, std::size_t N, std::uint64_t seed) {
  const auto cdf = cumulative(probs, "sample_counts");
  EventSampler rng(seed);
  std::vector<std::uint64_t> counts(probs.size(), 0);
  for (std::size_t n = 0; n < N; ++n) ++counts[draw(cdf, rng)];
  return counts;
}

LogIprob log_multinomial_iprob(std::span<const double> counts, std::span<const double> probs) {
  if (counts.size() != probs.size()) throw InputError("log_multinomial_iprob: bin count mismatch");
  CompensatedSum acc;
  double total = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    const double c = counts[j];
    if (c < 0.0) throw InputError("log_multinomial_iprob: negative count");
    total += c;
    if (c == 0.0) continue;
    if (!(probs[j] > 0.0))
      return LogIprob{-std::numeric_limits<double>::infinity(), j};
    acc.add(c * std::log(probs[j]) - std::lgamma(c + 1.0));
  }
  acc.add(std::lgamma(total + 1.0));
  return LogIprob{acc.value(), std::nullopt};
}

LogIprob log_multinomial_iprob(const BinnedDataset& data, std::span<const double> probs) {
  const auto c = data.counts_real();
  return log_multinomial_iprob(c, probs);
}

Json detector_to_json(const DetectorConfig& cfg) {
  return Json{{"delta_t", cfg.delta_t}, {"delta_s", cfg.delta_s}, {"J", cfg.J},
              {"K", cfg.K},             {"N", cfg.N}};
}

DetectorConfig detector_from_json(const Json& j) {
  try {
    DetectorConfig cfg;
    cfg.delta_t = j.at("delta_t").get<double>();
    cfg.delta_s = j.at("delta_s").get<double>();
    cfg.J = j.at("J").get<int>();
    cfg.K = j.at("K").get<std::vector<int>>();
    cfg.N = j.value("N", std::uint64_t{1});
    cfg.validate();
    return cfg;
  } catch (const Json::exception& e) {
    throw InputError(std::string("detector config: ") + e.what());
  }
}

void write_events(const std::filesystem::path& csv, std::span<const EventRecord> events,
                  const DetectorConfig& cfg) {
  std::string out = "n,j";
  for (std::size_t a = 0; a < cfg.K.size(); ++a) out += ",k" + std::to_string(a);
  out += '\n';
  for (std::size_t n = 0; n < events.size(); ++n) {
    out += std::to_string(n + 1) + "," + std::to_string(events[n].j);
    for (std::size_t a = 0; a < cfg.K.size(); ++a) out += "," + std::to_string(events[n].k[a]);
    out += '\n';
  }
  write_text(csv, out);
}

namespace {

int parse_int(std::string_view s) {
  const double v = parse_double(s);
  if (v != std::floor(v)) throw InputError("expected an integer, got '" + std::string(s) + "'");
  return static_cast<int>(v);
}

}  // namespace

std::vector<EventRecord> read_events(const std::filesystem::path& csv, const DetectorConfig& cfg) {
  std::istringstream in(read_text(csv));
  std::string line;
  if (!std::getline(in, line)) throw InputError("events file is empty");
  const auto header = split_csv_line(line);
  if (header.size() != 2 + cfg.K.size() || header[0] != "n" || header[1] != "j")
    throw InputError("events file header does not match detector dimension");
  std::vector<EventRecord> out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != header.size()) throw InputError("events file: ragged row");
    EventRecord e;
    e.j = parse_int(cols[1]);
    for (std::size_t a = 0; a < cfg.K.size(); ++a) e.k[a] = parse_int(cols[2 + a]);
    out.push_back(e);
  }
  return out;
}

void write_dataset(const std::filesystem::path& csv, const BinnedDataset& data) {
  const auto& cfg = data.config;
  std::string out = "j";
  for (std::size_t a = 0; a < cfg.K.size(); ++a) out += ",k" + std::to_string(a);
  out += ",count\n";
  for (std::size_t b = 0; b < data.counts.size(); ++b) {
    const EventRecord e = unflat_bin(b, cfg);
    out += std::to_string(e.j);
    for (std::size_t a = 0; a < cfg.K.size(); ++a) out += "," + std::to_string(e.k[a]);
    out += "," + std::to_string(data.counts[b]) + "\n";
  }
  write_text(csv, out);
  write_json(sidecar_path(csv), Json{{"N", data.total}, {"config", detector_to_json(cfg)}});
}

BinnedDataset read_dataset(const std::filesystem::path& csv) {
  const Json meta = read_json(sidecar_path(csv));
  BinnedDataset d;
  try {
    d.config = detector_from_json(meta.at("config"));
    d.total = meta.at("N").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw InputError(std::string("dataset metadata: ") + e.what());
  }
  d.counts.assign(d.config.bin_count(), 0);
  std::istringstream in(read_text(csv));
  std::string line;
  if (!std::getline(in, line)) throw InputError("dataset file is empty");
  const auto header = split_csv_line(line);
  if (header.size() != 2 + d.config.K.size()) throw InputError("dataset header does not match config");
  std::uint64_t sum = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != header.size()) throw InputError("dataset file: ragged row");
    EventRecord e;
    e.j = parse_int(cols[0]);
    for (std::size_t a = 0; a < d.config.K.size(); ++a) e.k[a] = parse_int(cols[1 + a]);
    if (e.j < 0 || e.j > d.config.J) throw RangeError("dataset: time bin out of range");
    for (std::size_t a = 0; a < d.config.K.size(); ++a)
      if (e.k[a] < 0 || e.k[a] > d.config.K[a]) throw RangeError("dataset: space bin out of range");
    const double c = parse_double(cols.back());
    if (c < 0 || c != std::floor(c)) throw InputError("dataset: counts must be non-negative integers");
    d.counts[flat_bin(e, d.config)] = static_cast<std::uint64_t>(c);
    sum += static_cast<std::uint64_t>(c);
  }
  if (sum != d.total) throw InputError("dataset: counts do not sum to N");
  return d;
}

}  // namespace kgli
