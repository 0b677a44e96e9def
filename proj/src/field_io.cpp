#include "kgli/field_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace kgli {

Json grid_to_json(const SpacetimeGrid& grid) {
  Json origin = Json::array(), extents = Json::array(), points = Json::array(),
       spacing = Json::array();
  for (int a = 0; a < grid.axes(); ++a) {
    origin.push_back(grid.origin(a));
    extents.push_back(grid.extent(a));
    points.push_back(grid.points(a));
    spacing.push_back(grid.spacing(a));
  }
  return Json{{"dims", grid.spatial_dims()}, {"origin", origin},   {"extents", extents},
              {"points", points},            {"spacing", spacing}, {"periodic", grid.periodic()}};
}

SpacetimeGrid grid_from_json(const Json& j) {
  try {
    const int dims = j.at("dims").get<int>();
    auto extents = j.at("extents").get<std::vector<double>>();
    auto points = j.at("points").get<std::vector<int>>();
    std::vector<double> origin(extents.size(), 0.0);
    if (j.contains("origin")) origin = j.at("origin").get<std::vector<double>>();
    if (j.contains("spacing")) {
      const auto spacing = j.at("spacing").get<std::vector<double>>();
      for (std::size_t a = 0; a < spacing.size() && a < extents.size() && a < points.size(); ++a) {
        const double expect = extents[a] / points[a];
        if (std::abs(spacing[a] - expect) > 1e-9 * std::abs(expect))
          throw InputError("grid metadata: spacing is inconsistent with extents/points (grid must be uniform)");
      }
    }
    const bool periodic = j.value("periodic", false);
    return SpacetimeGrid(dims, origin, extents, points,
                         periodic ? Boundary::Periodic : Boundary::Interior);
  } catch (const Json::exception& e) {
    throw InputError(std::string("grid metadata: ") + e.what());
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".json");
  return p;
}

std::string format_double(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("cannot parse number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw InputError("failed writing '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw InputError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

namespace {

template <class T>
void write_field_impl(const std::filesystem::path& csv, const Field<T>& field, const Json& extra,
                      bool complex) {
  const auto& g = field.grid;
  std::string out;
  out.reserve(g.size() * 48);
  for (int a = 0; a < g.axes(); ++a) out += "axis" + std::to_string(a) + ",";
  out += complex ? "re,im\n" : "re\n";
  for (std::size_t p = 0; p < g.size(); ++p) {
    const FourVector x = g.position(p);
    for (int a = 0; a < g.axes(); ++a) {
      out += format_double(x[a]);
      out += ',';
    }
    if constexpr (std::is_same_v<T, Complex>) {
      out += format_double(field.values[p].real());
      out += ',';
      out += format_double(field.values[p].imag());
    } else {
      out += format_double(field.values[p]);
    }
    out += '\n';
  }
  write_text(csv, out);
  Json meta = grid_to_json(g);
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  write_json(sidecar_path(csv), meta);
}

}  // namespace

void write_field(const std::filesystem::path& csv, const ScalarField& field, const Json& extra) {
  write_field_impl(csv, field, extra, false);
}

void write_field(const std::filesystem::path& csv, const ComplexField& field, const Json& extra) {
  write_field_impl(csv, field, extra, true);
}

ComplexField read_complex_field(const std::filesystem::path& csv) {
  const SpacetimeGrid grid = grid_from_json(read_json(sidecar_path(csv)));
  ComplexField field(grid);
  std::istringstream in(read_text(csv));
  std::string line;
  if (!std::getline(in, line)) throw InputError("field file '" + csv.string() + "' is empty");
  const auto header = split_csv_line(line);
  const auto axes = static_cast<std::size_t>(grid.axes());
  if (header.size() != axes + 1 && header.size() != axes + 2)
    throw InputError("field file header does not match grid dimension");
  for (std::size_t a = 0; a < axes; ++a)
    if (header[a] != "axis" + std::to_string(a)) throw InputError("field file header: expected axis columns");
  if (header[axes] != "re") throw InputError("field file header: expected 're' column");
  const bool complex = header.size() == axes + 2;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (row >= grid.size()) throw InputError("field file has more rows than grid points");
    const auto cols = split_csv_line(line);
    if (cols.size() != header.size()) throw InputError("field file: ragged row " + std::to_string(row));
    const double re = parse_double(cols[axes]);
    const double im = complex ? parse_double(cols[axes + 1]) : 0.0;
    field.values[row] = Complex(re, im);
    ++row;
  }
  if (row != grid.size()) throw InputError("field file has fewer rows than grid points");
  return field;
}

ScalarField read_scalar_field(const std::filesystem::path& csv) {
  const ComplexField c = read_complex_field(csv);
  ScalarField out(c.grid);
  for (std::size_t p = 0; p < c.values.size(); ++p) out.values[p] = c.values[p].real();
  return out;
}

}  // namespace kgli
