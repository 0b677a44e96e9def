#pragma once

// Field file format: CSV with header `axis0,axis1[,axis2,axis3],re[,im]`, one
// row per grid point in lexicographic order, plus a JSON sidecar next to the
// CSV (same stem, `.json`) holding the grid metadata
// {dims, origin, extents, points, spacing, periodic}.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kgli/spacetime.hpp"

namespace kgli {

using Json = nlohmann::json;

Json grid_to_json(const SpacetimeGrid& grid);
SpacetimeGrid grid_from_json(const Json& j);

std::filesystem::path sidecar_path(const std::filesystem::path& csv);

void write_field(const std::filesystem::path& csv, const ScalarField& field,
                 const Json& extra = Json::object());
void write_field(const std::filesystem::path& csv, const ComplexField& field,
                 const Json& extra = Json::object());

/// Reads a field written by write_field. A real file yields zero imaginary parts.
ComplexField read_complex_field(const std::filesystem::path& csv);
/// Reads the real column of a field file.
ScalarField read_scalar_field(const std::filesystem::path& csv);

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

/// Minimal CSV helpers shared by the other file formats.
std::vector<std::string_view> split_csv_line(std::string_view line);
void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace kgli
