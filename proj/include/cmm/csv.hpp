#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmm/dataset.hpp"

namespace cmm {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text, std::string_view context);
long long parse_int(std::string_view text, std::string_view context);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws if absent.
  std::size_t column(std::string_view name) const;
};

// Plain comma-separated text: no quoting, every row as wide as the header.
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::filesystem::path& path);
void write_csv_row(std::ostream& out, std::span<const std::string> fields);

// Header: x_0..x_{dx-1},y,z_0..z_{dz-1}[,z_key][,weight]
void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);
// |Z| defaults to max(z_key) + 1 when a z_key column is present.
Dataset read_dataset_csv(std::istream& in, std::optional<int> z_cardinality = std::nullopt);
Dataset read_dataset_csv(const std::filesystem::path& path,
                         std::optional<int> z_cardinality = std::nullopt);

}  // namespace cmm
