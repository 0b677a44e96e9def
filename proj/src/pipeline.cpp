#include "kgli/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>

#include "kgli/analytic.hpp"
#include "kgli/functionals.hpp"
#include "kgli/hje.hpp"
#include "kgli/numerics.hpp"

namespace kgli::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

fs::path resolve(const fs::path& p, const RunOptions& opts) {
  if (p.is_absolute()) return p;
  return opts.config.parent_path() / p;
}

const Json& require(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw UsageError(std::string("config: missing key '") + key + "'");
  return j.at(key);
}

std::uint64_t seed_of(const Json& config, const RunOptions& opts) {
  if (opts.seed) return *opts.seed;
  return config.value("seed", std::uint64_t{0});
}

PhysicalParams params_from_json(const Json& j) {
  PhysicalParams p;
  if (j.is_object()) {
    p.c = j.value("c", 1.0);
    p.hbar = j.value("hbar", 1.0);
    p.m = j.value("m", 1.0);
    p.q = j.value("q", 0.0);
  }
  p.validate();
  return p;
}

Json params_to_json(const PhysicalParams& p) { return {{"c", p.c}, {"hbar", p.hbar}, {"m", p.m}, {"q", p.q}}; }

Json lattice_to_json(const Lattice1D& l) { return {{"origin", l.origin}, {"length", l.length}, {"points", l.points}}; }

Lattice1D lattice_from_json(const Json& j) {
  Lattice1D l;
  l.origin = j.value("origin", 0.0);
  l.length = require(j, "length").get<double>();
  l.points = require(j, "points").get<int>();
  l.validate();
  return l;
}

std::vector<double> read_column(const fs::path& path) {
  std::vector<double> out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_double(split_csv_line(line).back()));
  }
  return out;
}

// number | {"const": a, "modes": [{"amp", "k", "phase"}]} | {"file": path}
std::vector<double> profile(const Json& j, const Lattice1D& lat, const RunOptions& opts, RunManifest& m) {
  const auto n = static_cast<std::size_t>(lat.points);
  if (j.is_null()) return {};
  if (j.is_number()) return std::vector<double>(n, j.get<double>());
  if (!j.is_object()) throw UsageError("config: a potential is a number or an object");
  if (j.contains("file")) {
    const auto path = resolve(j.at("file").get<std::string>(), opts);
    m.inputs.push_back(path);
    auto v = read_column(path);
    if (v.size() != n) throw UsageError("potential file " + path.string() + " does not match the lattice");
    return v;
  }
  std::vector<double> v(n, j.value("const", 0.0));
  for (const auto& mode : j.value("modes", Json::array())) {
    const double amp = mode.value("amp", 0.0), k = mode.value("k", 0.0), ph = mode.value("phase", 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i] += amp * std::cos(k * lat.x(static_cast<int>(i)) + ph);
  }
  return v;
}

bool constant(const std::vector<double>& v, double* value) {
  *value = v.empty() ? 0.0 : v.front();
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == *value; });
}

ScalarField density_of(const ComplexField& f) {
  ScalarField d(f.grid);
  const bool complex = std::any_of(f.values.begin(), f.values.end(), [](const Complex& z) { return z.imag() != 0.0; });
  for (std::size_t p = 0; p < f.values.size(); ++p)
    d.values[p] = complex ? std::norm(f.values[p]) : f.values[p].real();
  return d;
}

void normalise_density(ScalarField& d) {
  for (double v : d.values)
    if (!std::isfinite(v) || v < 0.0) throw NumericFailure("density is negative or not finite and cannot be normalised");
  const double total = compensated_sum(d.values) * d.grid.cell_volume();
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericFailure("density sums to zero and cannot be normalised");
  for (auto& v : d.values) v /= total;
}

void add_output(RunManifest& m, const fs::path& rel) { m.outputs.push_back(rel); }

std::string csv_row(std::initializer_list<double> vals) {
  std::string s;
  bool first = true;
  for (double v : vals) {
    if (!first) s += ',';
    s += format_double(v);
    first = false;
  }
  return s + '\n';
}

Levels superposition(const Lattice1D& lat, const PhysicalParams& p, double t, double k1, double k2, double a) {
  const double w1 = dispersion_omega(k1, p), w2 = dispersion_omega(k2, p);
  Levels out(static_cast<std::size_t>(lat.points));
  for (int i = 0; i < lat.points; ++i)
    out[static_cast<std::size_t>(i)] =
        std::polar(1.0, k1 * lat.x(i) - w1 * t) + a * std::polar(1.0, k2 * lat.x(i) + w2 * t);
  return out;
}

}  // namespace

int exit_code(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const NumericFailure*>(&e)) return kExitNumeric;
  return kExitUsage;
}

const char* version() { return "kgli 0.1.0"; }

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  std::string hex;
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

Json to_json(const RunManifest& m, const fs::path& out_dir) {
  auto entry = [](const fs::path& shown, const fs::path& real) {
    Json e{{"path", shown.generic_string()}};
    std::error_code ec;
    e["sha256"] = fs::is_regular_file(real, ec) ? Json(sha256_file(real)) : Json(nullptr);
    return e;
  };
  Json j;
  j["command"] = m.command;
  j["config"] = entry(m.config_path, m.config_path);
  j["seed"] = m.seed;
  j["inputs"] = Json::array();
  for (const auto& p : m.inputs) j["inputs"].push_back(entry(p, p));
  j["outputs"] = Json::array();
  for (const auto& p : m.outputs) j["outputs"].push_back(entry(p, out_dir / p));
  j["version"] = version();
  j["threads"] = thread_count();
  j["wall_clock_seconds"] = m.wall_clock;
  j["exit_code"] = m.exit_code;
  if (!m.error.empty()) j["error"] = m.error;
  j["diagnostics"] = m.diagnostics;
  return j;
}

// ---------------------------------------------------------------- levels

void write_level(const fs::path& csv, const Lattice1D& lattice, const Levels& level, long step, double t) {
  std::string s = "axis1,re,im\n";
  for (int i = 0; i < lattice.points; ++i) {
    const auto& z = level[static_cast<std::size_t>(i)];
    s += csv_row({lattice.x(i), z.real(), z.imag()});
  }
  write_text(csv, s);
  write_json(sidecar_path(csv), Json{{"step", step}, {"t", t}, {"lattice", lattice_to_json(lattice)}});
}

Levels read_level(const fs::path& csv, Lattice1D* lattice) {
  const auto meta = read_json(sidecar_path(csv));
  const auto lat = lattice_from_json(meta.at("lattice"));
  std::istringstream in(read_text(csv));
  std::string line;
  std::getline(in, line);
  Levels out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 3) throw InputError("level file: expected 3 columns in " + csv.string());
    out.emplace_back(parse_double(cols[1]), parse_double(cols[2]));
  }
  if (out.size() != static_cast<std::size_t>(lat.points)) throw InputError("level file: row count mismatch");
  if (lattice) *lattice = lat;
  return out;
}

// ---------------------------------------------------------------- solve

void cmd_solve(const Json& config, const RunOptions& opts, RunManifest& m) {
  const auto lat = lattice_from_json(require(config, "grid"));
  const auto params = params_from_json(config.value("params", Json::object()));
  Potentials pots;
  if (config.contains("potentials")) {
    const auto& pj = config.at("potentials");
    if (pj.contains("phi")) pots.phi = profile(pj.at("phi"), lat, opts, m);
    if (pj.contains("ax")) pots.ax = profile(pj.at("ax"), lat, opts, m);
  }
  const long steps = require(config, "steps").get<long>();
  if (steps < 0) throw UsageError("config: steps must be >= 0");
  const int record_every = config.value("record_every", 1);
  if (record_every < 1) throw UsageError("config: record_every must be >= 1");

  SolveOptions so;
  so.record_every = record_every;
  double dt = 0.0;
  if (config.contains("dt")) {
    dt = config.at("dt").get<double>();
  } else {
    const double cfl = config.value("cfl", 0.9);
    if (!(cfl > 0.0) || cfl > so.stability.cfl_max)
      throw ParameterError("config: cfl must lie in (0, " + format_double(so.stability.cfl_max) + "]");
    dt = cfl * lat.spacing() / params.c;
    // dt is derived from the Courant number itself; allow for its rounding
    so.stability.cfl_max *= 1.0 + 1e-12;
  }

  const auto& init = require(config, "initial");
  const std::string kind = require(init, "kind").get<std::string>();
  Levels l0, l1;
  std::optional<double> omega;
  double k = 0.0;
  if (kind == "plane_wave") {
    k = require(init, "k").get<double>();
    const int branch = init.value("branch", 1);
    if (branch != 1 && branch != -1) throw UsageError("config: branch must be +1 or -1");
    double phi0 = 0.0, ax0 = 0.0;
    if (!constant(pots.phi, &phi0) || !constant(pots.ax, &ax0))
      throw UsageError("config: plane_wave initial data needs constant potentials");
    plane_wave(k, params, lat);  // commensurability check
    const double a = params.q / params.hbar, mu = params.m / params.hbar;
    const double kc = k - a * ax0 / params.c;
    omega = branch * std::sqrt(params.c * params.c * kc * kc + mu * mu * std::pow(params.c, 4)) + a * phi0;
    l0.resize(static_cast<std::size_t>(lat.points));
    l1.resize(l0.size());
    for (int i = 0; i < lat.points; ++i) {
      l0[static_cast<std::size_t>(i)] = std::polar(1.0, k * lat.x(i));
      l1[static_cast<std::size_t>(i)] = std::polar(1.0, k * lat.x(i) - *omega * dt);
    }
  } else if (kind == "packet") {
    std::tie(l0, l1) = wave_packet(lat, params, dt, require(init, "x0").get<double>(),
                                   require(init, "sigma").get<double>(), require(init, "k0").get<double>());
  } else if (kind == "file") {
    const auto path = resolve(require(init, "path").get<std::string>(), opts);
    m.inputs.push_back(path);
    const auto f = read_complex_field(path);
    if (f.grid.spatial_dims() != 1 || f.grid.points(1) != lat.points)
      throw UsageError("initial file does not match the lattice");
    const auto n = static_cast<std::size_t>(lat.points);
    l0.assign(f.values.begin(), f.values.begin() + static_cast<long>(n));
    l1.assign(f.values.begin() + static_cast<long>(n), f.values.begin() + static_cast<long>(2 * n));
  } else {
    throw UsageError("config: unknown initial kind '" + kind + "'");
  }

  fs::create_directories(opts.out / "history");
  Json diag;
  diag["dt"] = dt;
  diag["courant"] = params.c * dt / lat.spacing();
  diag["steps"] = steps;
  SolveResult res;
  try {
    res = solve(l0, l1, pots, steps, params, lat, dt, so);
  } catch (const DivergenceError& e) {
    diag["diverged_at_step"] = e.step();
    diag["error"] = e.what();
    write_json(opts.out / "diagnostics.json", diag);
    add_output(m, "diagnostics.json");
    m.diagnostics = diag;
    throw;
  }

  for (std::size_t r = 0; r < res.history.size(); ++r) {
    char name[64];
    std::snprintf(name, sizeof name, "level_%06ld.csv", res.recorded[r]);
    const fs::path rel = fs::path("history") / name;
    write_level(opts.out / rel, lat, res.history[r], res.recorded[r], static_cast<double>(res.recorded[r]) * dt);
    add_output(m, rel);
    add_output(m, sidecar_path(rel));
  }
  if (res.history.size() >= 4) {
    try {
      write_field(opts.out / "history.csv", history_field(res, lat, dt, params.c),
                  Json{{"dt", dt}, {"params", params_to_json(params)}});
      add_output(m, "history.csv");
      add_output(m, "history.json");
    } catch (const InputError&) {
      // recorded levels not evenly spaced: no space-time file
    }
  }

  double worst = 0.0;
  for (const auto& d : res.diagnostics) worst = std::max(worst, d.continuity);
  diag["levels_recorded"] = res.history.size();
  diag["warnings"] = res.warnings;
  diag["max_continuity_residual"] = worst;
  if (!res.diagnostics.empty()) {
    diag["norm_initial"] = res.diagnostics.front().norm;
    diag["norm_final"] = res.diagnostics.back().norm;
    diag["charge_initial"] = res.diagnostics.front().charge;
    diag["charge_final"] = res.diagnostics.back().charge;
  }
  if (omega) {
    // phase advance per step of the last two levels, averaged over the lattice
    const auto& st = res.final_state;
    CompensatedSum acc;
    double err = 0.0;
    for (std::size_t i = 0; i < st.curr.size(); ++i) {
      acc.add(-std::arg(st.curr[i] / st.prev[i]) / dt);
      const auto exact = std::polar(1.0, k * lat.x(static_cast<int>(i)) - *omega * st.time());
      err = std::max(err, std::abs(st.curr[i] - exact));
    }
    const double measured = acc.value() / static_cast<double>(st.curr.size());
    const double rel = std::abs(measured - *omega) / std::abs(*omega);
    diag["dispersion"] = {{"omega_exact", *omega},
                          {"omega_measured", measured},
                          {"relative_error", rel},
                          {"threshold", 1e-3},
                          {"pass", rel <= 1e-3},
                          {"max_error_final", err}};
  }
  write_json(opts.out / "diagnostics.json", diag);
  add_output(m, "diagnostics.json");
  m.diagnostics = diag;
}

// ---------------------------------------------------------------- sample

void cmd_sample(const Json& config, const RunOptions& opts, RunManifest& m) {
  const auto path = resolve(require(config, "field").get<std::string>(), opts);
  m.inputs.push_back(path);
  const auto N = require(config, "N").get<long long>();
  if (N < 1) throw UsageError("config: N must be >= 1");
  double c = 1.0;
  const auto meta = read_json(sidecar_path(path));
  if (meta.contains("params")) c = meta.at("params").value("c", 1.0);
  c = config.value("c", c);
  auto density = density_of(read_complex_field(path));
  normalise_density(density);
  const auto cfg0 = detector_for_grid(density.grid, c, config.value("coarsen_t", 1), config.value("coarsen_s", 1));
  auto cfg = cfg0;
  cfg.N = static_cast<std::uint64_t>(N);
  const auto events = sample_events(density, static_cast<std::size_t>(N), m.seed, cfg, c);
  const auto data = aggregate(events, cfg);
  write_events(opts.out / "events.csv", events, cfg);
  write_dataset(opts.out / "dataset.csv", data);
  add_output(m, "events.csv");
  add_output(m, "dataset.csv");
  add_output(m, sidecar_path("dataset.csv"));

  // goodness of fit against the bin probabilities the events were drawn from
  const auto probs = bin_probabilities(density, cfg, c);
  CompensatedSum chi2;
  std::size_t support = 0, occupied = 0;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    if (data.counts[b] > 0) ++occupied;
    if (probs[b] <= 0.0) continue;
    ++support;
    const double e = static_cast<double>(N) * probs[b];
    const double d = static_cast<double>(data.counts[b]) - e;
    chi2.add(d * d / e);
  }
  m.diagnostics = {{"N", N},
                   {"bins", probs.size()},
                   {"occupied_bins", occupied},
                   {"chi_square", chi2.value()},
                   {"degrees_of_freedom", support > 0 ? support - 1 : 0},
                   {"detector", detector_to_json(cfg)}};
}

// ---------------------------------------------------------------- analyze

namespace {

BinModel model_from_json(const Json& j, const RunOptions& opts, RunManifest& m) {
  const std::string kind = require(j, "kind").get<std::string>();
  if (kind == "two_bin") return two_bin_model();
  if (kind == "uniform") return uniform_bin_model(require(j, "bins").get<std::size_t>());
  if (kind == "softmax")
    return random_softmax_model(require(j, "bins").get<std::size_t>(), j.value("seed", std::uint64_t{1}),
                                j.value("scale", 1.0));
  if (kind == "time_shift") {
    const auto path = resolve(require(j, "field").get<std::string>(), opts);
    m.inputs.push_back(path);
    double c = 1.0;
    const auto meta = read_json(sidecar_path(path));
    if (meta.contains("params")) c = meta.at("params").value("c", 1.0);
    c = j.value("c", c);
    return time_shift_model(density_of(read_complex_field(path)), c, detector_from_json(require(j, "detector")),
                            require(j, "t_begin").get<double>());
  }
  throw UsageError("config: unknown model kind '" + kind + "'");
}

}  // namespace

void cmd_analyze(const Json& config, const RunOptions& opts, RunManifest& m) {
  const auto model = model_from_json(require(config, "model"), opts, m);
  const double theta = require(config, "theta").get<double>();
  const auto eps = require(config, "epsilons").get<std::vector<double>>();
  std::vector<double> counts;
  std::string mode;
  if (config.contains("dataset")) {
    const auto path = resolve(config.at("dataset").get<std::string>(), opts);
    m.inputs.push_back(path);
    counts = read_dataset(path).counts_real();
    mode = "dataset";
  } else {
    const auto& cj = require(config, "counts");
    mode = require(cj, "mode").get<std::string>();
    const double N = require(cj, "N").get<double>();
    if (mode == "robust")
      counts = robust_counts(model, theta, N);
    else if (mode == "sampled")
      counts = sampled_counts(model, theta, static_cast<std::size_t>(N), m.seed);
    else
      throw UsageError("config: counts mode must be robust or sampled");
  }
  if (counts.size() != model.bins)
    throw UsageError("dataset has " + std::to_string(counts.size()) + " bins but the model has " +
                     std::to_string(model.bins));

  const double fisher = fisher_discrete(model, theta);
  const double linear = evidence_linear_coefficient(counts, model, theta);
  const auto checks = evidence_checks(counts, model, theta, eps);
  Json out;
  out["model"] = model.name;
  out["theta"] = theta;
  out["counts_mode"] = mode;
  out["N"] = compensated_sum(counts);
  out["fisher"] = fisher;
  out["linear_coefficient"] = linear;
  out["reports"] = Json::array();
  std::string csv = "epsilon,ev_exact,ev_quadratic,fisher,ev_per_event,predicted,standard_error,z\n";
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const auto r = evidence_report(counts, model, theta, eps[i]);
    auto rj = to_json(r);
    rj["ev_per_event"] = checks[i].ev_per_event;
    rj["predicted"] = checks[i].predicted;
    rj["standard_error"] = checks[i].standard_error;
    rj["z"] = checks[i].z();
    out["reports"].push_back(rj);
    csv += csv_row({eps[i], r.ev_exact, r.ev_quadratic, r.fisher, checks[i].ev_per_event, checks[i].predicted,
                    checks[i].standard_error, checks[i].z()});
  }
  write_json(opts.out / "evidence.json", out);
  write_text(opts.out / "evidence.csv", csv);
  add_output(m, "evidence.json");
  add_output(m, "evidence.csv");
  m.diagnostics = {{"fisher", fisher}, {"linear_coefficient", linear}, {"bins", model.bins}};
}

// ---------------------------------------------------------------- time-shift family

namespace {

struct ShiftData {
  double t0 = 0.0, dtl = 0.0;
  int nt = 0;
  int K = 0;
  std::vector<std::vector<double>> M;  // per space bin, per level

  std::pair<int, double> locate(double t) const {
    const double s = (t - t0) / dtl;
    if (s < -1e-9 || s > nt - 1 + 1e-9)
      throw RangeError("time_shift: shifted window leaves the recorded times (t = " + format_double(t) + ")");
    const int n = std::clamp(static_cast<int>(std::floor(s)), 0, nt - 2);
    return {n, t - (t0 + n * dtl)};
  }
  double mass(int k, double t) const {
    const auto [n, u] = locate(t);
    const auto& v = M[static_cast<std::size_t>(k)];
    return v[static_cast<std::size_t>(n)] + (v[static_cast<std::size_t>(n) + 1] - v[static_cast<std::size_t>(n)]) * u / dtl;
  }
  double slope(int k, double t) const {
    const auto n = static_cast<std::size_t>(locate(t).first);
    const auto& v = M[static_cast<std::size_t>(k)];
    return (v[n + 1] - v[n]) / dtl;
  }
  // integral of the interpolant over [a, b], summed segment by segment (a
  // difference of cumulative sums would cancel in the tails)
  double integral(int k, double a, double b) const {
    const auto& v = M[static_cast<std::size_t>(k)];
    auto piece = [&](int n, double u0, double u1) {
      const auto i = static_cast<std::size_t>(n);
      const double s = (v[i + 1] - v[i]) / dtl;
      return v[i] * (u1 - u0) + 0.5 * s * (u1 * u1 - u0 * u0);
    };
    const auto [na, ua] = locate(a);
    const auto [nb, ub] = locate(b);
    if (na == nb) return piece(na, ua, ub);
    CompensatedSum acc;
    acc.add(piece(na, ua, dtl));
    for (int n = na + 1; n < nb; ++n) acc.add(piece(n, 0.0, dtl));
    acc.add(piece(nb, 0.0, ub));
    return acc.value();
  }
};

}  // namespace

BinModel time_shift_model(const ScalarField& density, double c, const DetectorConfig& cfg, double t_begin) {
  const auto& g = density.grid;
  if (g.spatial_dims() != 1) throw InputError("time_shift: density must be 1+1 dimensional");
  if (cfg.spatial_dims() != 1) throw InputError("time_shift: detector must have one spatial axis");
  cfg.validate();
  auto d = std::make_shared<ShiftData>();
  d->t0 = g.coordinate(0, 0) / c;
  d->dtl = g.spacing(0) / c;
  d->nt = g.points(0);
  d->K = cfg.K[0];
  d->M.assign(static_cast<std::size_t>(d->K) + 1, std::vector<double>(static_cast<std::size_t>(d->nt), 0.0));
  const double dx = g.spacing(1);
  for (int i = 0; i < g.points(1); ++i) {
    const double r = g.coordinate(1, i) - g.origin(1);
    const int k = static_cast<int>(std::ceil(r / cfg.delta_s));
    if (k > d->K) continue;  // outside the detector
    for (int n = 0; n < d->nt; ++n)
      d->M[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)] +=
          density.values[g.flatten({n, i, 0, 0})] * dx;
  }

  // order 0, 1, 2 in theta: bin masses, then the renormalised probabilities
  auto eval = [d, cfg, t_begin](double theta, int order) {
    const int J = cfg.J, K = cfg.K[0];
    const double T0 = t_begin - theta, T1 = t_begin + J * cfg.delta_t - theta;
    double Z = 0.0, Z1 = 0.0, Z2 = 0.0;
    for (int k = 1; k <= K; ++k) {
      Z += d->integral(k, T0, T1);
      Z1 += d->mass(k, T0) - d->mass(k, T1);
      Z2 += d->slope(k, T1) - d->slope(k, T0);
    }
    if (!(Z > 0.0)) throw NumericFailure("time_shift: no probability inside the detector window");
    std::vector<double> out(cfg.bin_count(), 0.0);
    for (int j = 1; j <= J; ++j) {
      const double a = t_begin + (j - 1) * cfg.delta_t - theta, b = t_begin + j * cfg.delta_t - theta;
      for (int k = 1; k <= K; ++k) {
        const double m0 = d->integral(k, a, b);
        const double p = m0 / Z;
        double v = p;
        if (order >= 1) {
          const double m1 = d->mass(k, a) - d->mass(k, b);
          const double p1 = (m1 - p * Z1) / Z;
          v = p1;
          if (order == 2) {
            const double m2 = d->slope(k, b) - d->slope(k, a);
            v = (m2 - 2.0 * p1 * Z1 - p * Z2) / Z;
          }
        }
        EventRecord e;
        e.j = j;
        e.k[0] = k;
        out[flat_bin(e, cfg)] = v;
      }
    }
    return out;
  };

  BinModel model;
  model.name = "time_shift";
  model.bins = cfg.bin_count();
  model.p = [eval](double t) { return eval(t, 0); };
  model.dp = [eval](double t) { return eval(t, 1); };
  model.d2p = [eval](double t) { return eval(t, 2); };
  return model;
}

std::vector<EvidenceCheck> evidence_checks(std::span<const double> counts, const BinModel& model, double theta,
                                           std::span<const double> epsilons) {
  const double N = compensated_sum(counts);
  const double fisher = fisher_discrete(model, theta);
  const auto p0 = model.p(theta);
  std::vector<EvidenceCheck> out;
  for (double e : epsilons) {
    EvidenceCheck ch;
    ch.epsilon = e;
    ch.predicted = -0.5 * e * e * fisher;
    if (e != 0.0) {
      const auto p1 = model.p(theta + e);
      CompensatedSum mean, sq;
      for (std::size_t b = 0; b < p0.size(); ++b) {
        if (p0[b] <= 0.0) continue;
        const double l = std::log(p1[b] / p0[b]);
        mean.add(p0[b] * l);
        sq.add(p0[b] * l * l);
      }
      const double var = std::max(0.0, sq.value() - mean.value() * mean.value());
      ch.standard_error = N > 0.0 ? std::sqrt(var / N) : 0.0;
    }
    ch.ev_per_event = N > 0.0 ? evidence_exact(counts, model, theta, e).value / N : 0.0;
    out.push_back(ch);
  }
  return out;
}

// ---------------------------------------------------------------- verify

bool Check::pass() const {
  if (!std::isfinite(value)) return false;
  if (lower && value < *lower) return false;
  if (upper && value > *upper) return false;
  return true;
}

bool SuiteReport::pass() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass(); });
}

Json to_json(const SuiteReport& r) {
  Json j;
  j["suite"] = r.suite;
  j["pass"] = r.pass();
  j["checks"] = Json::array();
  for (const auto& c : r.checks) {
    Json cj{{"name", c.name}, {"value", std::isfinite(c.value) ? Json(c.value) : Json(nullptr)}, {"pass", c.pass()}};
    cj["lower"] = c.lower ? Json(*c.lower) : Json(nullptr);
    cj["upper"] = c.upper ? Json(*c.upper) : Json(nullptr);
    j["checks"].push_back(cj);
  }
  return j;
}

namespace {

using namespace kgli::analytic;

const std::array<double, 4> kBox{2.0, 3.0, 1.0, 1.0};

SuiteReport suite_identity(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const auto g = SpacetimeGrid::make_1p1(0.0, kBox[0], n, 0.0, kBox[1], n, Boundary::Periodic);
  std::uniform_real_distribution<double> lam(0.2, 20.0), cs(0.5, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto fp = random_trig(gen, 2, kBox, 3, 0.6);
    const auto fs = random_trig(gen, 2, kBox, 3, 1.5);
    const auto fa = random_trig_vector(gen, 2, kBox, 0.8);
    const double lambda = lam(gen), c = cs(gen);
    const auto P = sample_jets(g, [&](const FourVector& x) { return positive_jet(fp(x)); });
    const auto S = sample_jets(g, fs);
    const auto A = kgli::values_of(sample_vector_jets(g, fa));
    worst = std::max(worst, identity_check(P, S, A, lambda, c));
  }
  return {"identity", {{"max_relative_residual", worst, std::nullopt, 1e-12}}};
}

SuiteReport suite_hje(int n) {
  const BeamAction beam{0.9, 1.0, 0.7};
  const PhysicalParams params{beam.c, 1.0, beam.m, 0.0};
  std::vector<double> h, err;
  double analytic = 0.0;
  for (int f : {1, 2, 4}) {
    const auto g = SpacetimeGrid::make_1p1(0.5, 1.0, n * f, 0.0, 1.0, n * f, Boundary::Interior);
    const auto jets = sample_jets(g, beam);
    analytic = std::max(analytic, max_abs(hje_residual(jets, FourVectorField(g), params, ActionConvention::Physical)));
    ActionField S{analytic::values_of(jets), {}, ActionConvention::Physical};
    h.push_back(1.0 / (n * f));
    err.push_back(max_abs(hje_residual(S, FourVectorField(g), params)));
  }
  return {"hje",
          {{"analytic_residual", analytic, std::nullopt, 1e-10},
           {"finite_difference_order", log_log_slope(h, err), 1.8, 2.2}}};
}

SuiteReport suite_gauge(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const auto g = SpacetimeGrid::make_1p1(0.0, kBox[0], n, 0.0, kBox[1], n, Boundary::Periodic);
  const auto fs = random_trig(gen, 2, kBox, 3, 1.0);
  const auto S = sample_jets(g, fs);
  const auto pure = sample_vector_jets(g, [&](const FourVector& x) { return pure_gauge_jet(fs(x)); });
  const auto U = sample_vector_jets(g, random_trig_vector(gen, 2, kBox, 1.0));
  const auto F = field_strength(U);
  double antisym = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto t = F.tensor(p);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) antisym = std::max(antisym, std::abs(t[a][b] + t[b][a]));
  }
  const auto box = SpacetimeGrid::make_1p1(-1e4, 2e4, 8, -1e4, 2e4, 8, Boundary::Interior);
  const FourVector u = boost(FourVector{{1.0, 0, 0, 0}}, 0.4, 1);
  const auto w = integrate_worldline(FourVectorField(box, u), FourVector{{0.0, 0.0, 0, 0}}, 100.0, 10000, 1.0);
  return {"gauge",
          {{"antisymmetry", antisym, std::nullopt, 0.0},
           {"pure_gauge_field_strength", field_strength(pure).max_abs(), std::nullopt, 1e-10},
           {"gauge_shift_invariance", field_strength(gauge_shift(U, S)).max_diff(F), std::nullopt, 1e-10},
           {"worldline_norm_drift", w.truncated ? std::numeric_limits<double>::infinity() : w.max_norm_drift,
            std::nullopt, 1e-8}}};
}

SuiteReport suite_scale(int n, std::uint64_t seed) {
  const PhysicalParams p{1.0, 1.0, 1.0, 0.8};
  const auto p2 = scale_transform(p, 2.0);
  const Lattice1D lat{0.0, 2 * kPi, n};
  const double dt = 0.4 * lat.spacing();
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  Potentials pots;
  const double a1 = u(gen), a2 = u(gen);
  for (int i = 0; i < n; ++i) {
    pots.phi.push_back(a1 * std::cos(lat.x(i)));
    pots.ax.push_back(a2 * std::sin(lat.x(i)));
  }
  const auto l0 = superposition(lat, p, 0.0, 1.0, 3.0, 0.4);
  const auto l1 = superposition(lat, p, dt, 1.0, 3.0, 0.4);
  const auto r1 = solve(l0, l1, pots, 200, p, lat, dt);
  const auto r2 = solve(l0, l1, pots, 200, p2, lat, dt);
  double mismatched = r1.history.size() == r2.history.size() ? 0.0 : 1.0;
  for (std::size_t k = 0; mismatched == 0.0 && k < r1.history.size(); ++k)
    if (r1.history[k] != r2.history[k]) mismatched += 1.0;
  return {"scale",
          {{"mismatched_levels", mismatched, std::nullopt, 0.0},
           {"lambda_change", std::abs(p2.lambda() - p.lambda()), std::nullopt, 0.0}}};
}

double plane_wave_run_error(int nx) {
  const PhysicalParams p{1.0, 1.0, 1.0, 0.0};
  const double L = 2 * kPi, T = 2 * kPi, k = 2.0;
  const int nt = static_cast<int>(std::lround(nx * 400.0 / 256.0));
  const Lattice1D lat{0.0, L, nx};
  const double dt = T / nt;
  const auto res = solve(plane_wave(k, p, lat, 0.0).values, plane_wave(k, p, lat, dt).values, Potentials{}, nt - 1,
                         p, lat, dt);
  const auto exact = plane_wave(k, p, lat, T).values;
  double e = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) e = std::max(e, std::abs(res.final_state.curr[i] - exact[i]));
  return e;
}

SuiteReport suite_dispersion(int n) {
  std::vector<double> h, err;
  for (int f : {1, 2, 4}) {
    h.push_back(1.0 / (n * f));
    err.push_back(plane_wave_run_error(n * f));
  }
  return {"dispersion",
          {{"convergence_order", log_log_slope(h, err), 1.8, 2.2}, {"error_ratio", err[0] / err[1], 3.6, 4.4}}};
}

SuiteReport suite_continuity(int n) {
  const PhysicalParams p{1.0, 1.0, 1.0, 0.0};
  std::vector<double> h, res;
  for (int f : {1, 2, 4}) {
    const Lattice1D lat{0.0, 2 * kPi, n * f};
    const double dt = 0.5 * lat.spacing(), t = 0.37;
    const auto r = continuity_residual(lat, p, dt, superposition(lat, p, t - dt, 1.0, 2.0, 0.9),
                                       superposition(lat, p, t, 1.0, 2.0, 0.9),
                                       superposition(lat, p, t + dt, 1.0, 2.0, 0.9), Potentials{});
    h.push_back(lat.spacing());
    res.push_back(max_abs(r));
  }
  const Lattice1D lat{0.0, 2 * kPi, n};
  const double dt = 1e-3;
  const auto neg = conserved_current(
      make_state(lat, p, dt, plane_wave(3.0, p, lat, 0.0, -1).values, plane_wave(3.0, p, lat, dt, -1).values), {});
  const auto mixed = conserved_current(
      make_state(lat, p, dt, superposition(lat, p, 0.0, 1.0, 2.0, 0.9), superposition(lat, p, dt, 1.0, 2.0, 0.9)),
      {});
  return {"continuity",
          {{"residual_order", log_log_slope(h, res), 1.8, 2.2},
           {"negative_frequency_max_rho", *std::max_element(neg.rho.begin(), neg.rho.end()), std::nullopt, -1e-12},
           {"mixed_min_rho", *std::min_element(mixed.rho.begin(), mixed.rho.end()), std::nullopt, -1e-12},
           {"mixed_max_rho", *std::max_element(mixed.rho.begin(), mixed.rho.end()), 1e-12, std::nullopt}}};
}

}  // namespace

SuiteReport verify_suite(const std::string& suite, int points, std::uint64_t seed) {
  if (points < 8) throw UsageError("verify: points must be >= 8");
  if (suite == "identity") return suite_identity(points, seed);
  if (suite == "hje") return suite_hje(points);
  if (suite == "gauge") return suite_gauge(points, seed);
  if (suite == "scale") return suite_scale(points, seed);
  if (suite == "dispersion") return suite_dispersion(points);
  if (suite == "continuity") return suite_continuity(points);
  throw UsageError("verify: unknown suite '" + suite + "'");
}

void cmd_verify(const Json& config, const RunOptions& opts, RunManifest& m) {
  const auto report = verify_suite(require(config, "suite").get<std::string>(), config.value("points", 32), m.seed);
  const auto j = to_json(report);
  write_json(opts.out / "report.json", j);
  add_output(m, "report.json");
  m.diagnostics = j;
  if (!report.pass()) throw NumericFailure("verify: suite '" + report.suite + "' failed");
}

// ---------------------------------------------------------------- minimize

void cmd_minimize(const Json& config, const RunOptions& opts, RunManifest& m) {
  const auto& gj = require(config, "grid");
  const int n = gj.value("points", 32);
  const double T = gj.value("ct_extent", 8 * kPi), L = gj.value("x_extent", 8 * kPi);
  const auto g = SpacetimeGrid::make_1p1(0.0, T, n, 0.0, L, n, Boundary::Periodic);
  const double lambda = require(config, "lambda").get<double>();
  const double c = config.value("c", 1.0);
  if (!(lambda > 0.0)) throw ParameterError("config: lambda must be positive");

  const auto& init = config.value("initial", Json::object());
  const std::string kind = init.value("kind", std::string("perturbed"));
  const double k = init.value("k", 0.75);
  const double w = init.value("w", std::sqrt(k * k + c * c));
  PolarPair start = [&] {
    if (kind == "free_particle") return free_particle_pair(g, k, w);
    if (kind == "perturbed") return perturbed_free_particle(g, k, w, lambda, m.seed, init.value("noise", 0.05));
    throw UsageError("config: initial kind must be free_particle or perturbed");
  }();

  MinimizeOptions mo;
  const auto oj = config.value("options", Json::object());
  mo.max_iterations = oj.value("max_iterations", mo.max_iterations);
  mo.gtol_abs = oj.value("gtol_abs", mo.gtol_abs);
  mo.gtol_rel = oj.value("gtol_rel", mo.gtol_rel);
  mo.max_step = oj.value("max_step", mo.max_step);
  mo.newton = oj.value("newton", mo.newton);
  mo.krylov_iterations = oj.value("krylov_iterations", mo.krylov_iterations);
  mo.krylov_rtol = oj.value("krylov_rtol", mo.krylov_rtol);
  mo.monotone_F = oj.value("monotone_F", mo.monotone_F);

  const FourVectorField A(g);
  const double F0 = functional_F(start, A, lambda, c).value;
  const double kg0 = max_abs(kg_residual_from_polar(start, A, lambda, c));
  const auto r = minimize_F(start, A, lambda, c, mo);
  const double kg1 = max_abs(kg_residual_from_polar(r.pair, A, lambda, c));

  const Json winding{r.pair.S.winding[0], r.pair.S.winding[1]};
  write_field(opts.out / "P.csv", r.pair.P);
  write_field(opts.out / "S.csv", r.pair.S.S, Json{{"winding", winding}});
  write_trace(opts.out / "trace.csv", r.trace);
  for (const char* f : {"P.csv", "P.json", "S.csv", "S.json", "trace.csv"}) add_output(m, f);
  Json summary{{"status", to_string(r.status)},
               {"lambda", lambda},
               {"initial_kind", kind},
               {"F_initial", F0},
               {"F_final", r.F},
               {"F_ratio", F0 != 0.0 ? std::abs(r.F / F0) : 0.0},
               {"grad_norm", r.grad_norm},
               {"iterations", r.iterations},
               {"kg_residual_initial", kg0},
               {"kg_residual_final", kg1}};
  write_json(opts.out / "summary.json", summary);
  add_output(m, "summary.json");
  m.diagnostics = summary;
  if (r.status == MinimizeStatus::LineSearchFailed)
    throw NumericFailure("minimize: line search failed; best point so far written");
  if (r.status == MinimizeStatus::MaxIterations)
    throw NumericFailure("minimize: iteration limit reached before the gradient tolerance");
}

// ---------------------------------------------------------------- driver

int run(const std::string& command, const RunOptions& opts, std::ostream& log) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  RunManifest m;
  m.command = command;
  m.config_path = opts.config.string();
  int code = kExitOk;
  try {
    if (opts.config.empty()) throw UsageError("--config is required");
    std::error_code ec;
    if (!fs::is_regular_file(opts.config, ec)) throw UsageError("config file not found: " + opts.config.string());
    Json config;
    try {
      config = Json::parse(read_text(opts.config));
    } catch (const Json::exception& e) {
      throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    m.seed = seed_of(config, opts);
    fs::create_directories(opts.out);
    if (command == "solve")
      cmd_solve(config, opts, m);
    else if (command == "sample")
      cmd_sample(config, opts, m);
    else if (command == "analyze")
      cmd_analyze(config, opts, m);
    else if (command == "verify")
      cmd_verify(config, opts, m);
    else if (command == "minimize")
      cmd_minimize(config, opts, m);
    else
      throw UsageError("unknown command '" + command + "'");
  } catch (const std::exception& e) {
    code = exit_code(e);
    m.error = e.what();
    log << "kgli " << command << ": " << e.what() << '\n';
  }
  m.exit_code = code;
  m.wall_clock = std::chrono::duration<double>(Clock::now() - start).count();
  try {
    fs::create_directories(opts.out);
    write_json(opts.out / "run.json", to_json(m, opts.out));
  } catch (const std::exception& e) {
    log << "kgli " << command << ": could not write run.json: " << e.what() << '\n';
  }
  return code;
}

std::string help_formats() {
  return R"(kgli file formats

Field file (history.csv, P.csv, S.csv, input densities)
  CSV header axis0,axis1[,axis2,axis3],re[,im]; one row per grid point,
  axis 0 (x0 = c t) slowest. A sidecar <stem>.json holds the grid:
  {dims, origin, extents, points, spacing, periodic} plus extra keys.

Level file (history/level_NNNNNN.csv)
  CSV header axis1,re,im; one row per lattice point. Sidecar
  {step, t, lattice: {origin, length, points}}.

Events file (events.csv)
  CSV n,j,k0[,k1,k2]: event index, time bin, space bins.

Dataset file (dataset.csv)
  CSV j,k0[,k1,k2],count, bins in lexicographic order (j slowest). Sidecar
  {N, config: {delta_t, delta_s, J, K, N}}.

Trace file (trace.csv)
  CSV iter,F,grad_norm,step.

run.json
  {command, config: {path, sha256}, seed, inputs, outputs (path, sha256),
   version, threads, wall_clock_seconds, exit_code, error, diagnostics}.

Configs (relative paths resolve against the config's directory; "seed"
is optional everywhere and --seed overrides it)
  solve:    {grid: {origin, length, points}, params: {c, hbar, m, q},
             potentials: {phi, ax}, initial, steps, cfl | dt, record_every}
            a potential is a number, {const, modes: [{amp, k, phase}]}
            (const + sum amp cos(k x + phase)) or {file} (one value per line)
            initial: {kind: plane_wave, k, branch} | {kind: packet, x0,
            sigma, k0} | {kind: file, path} (first two levels of a field file)
  sample:   {field, N, coarsen_t, coarsen_s, c}
  analyze:  {model, theta, epsilons, dataset | counts: {mode: robust|sampled, N}}
            model: {kind: two_bin} | {kind: uniform, bins} |
            {kind: softmax, bins, seed, scale} |
            {kind: time_shift, field, t_begin, detector: {delta_t, delta_s, J, K, N}}
  verify:   {suite: identity|hje|gauge|scale|dispersion|continuity, points}
  minimize: {grid: {points, ct_extent, x_extent}, lambda, c,
             initial: {kind: free_particle|perturbed, k, w, noise},
             options: {max_iterations, gtol_abs, gtol_rel, max_step, newton,
                       krylov_iterations, krylov_rtol, monotone_F}}

Exit codes: 0 success, 2 usage or config error, 3 numeric failure.
KGLI_THREADS caps the worker count (default 1).
)";
}

}  // namespace kgli::pipeline
