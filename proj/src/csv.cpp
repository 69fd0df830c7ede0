#include "cmm/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cmm/error.hpp"

namespace cmm {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view context) {
  if (text == "nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError(std::string(context) + ": cannot parse number '" +
                          std::string(text) + "'");
  }
  return v;
}

long long parse_int(std::string_view text, std::string_view context) {
  long long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError(std::string(context) + ": cannot parse integer '" +
                          std::string(text) + "'");
  }
  return v;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ValidationError("csv: missing column '" + std::string(name) + "'");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ValidationError("csv: line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, header has " +
                            std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (!have_header) throw ValidationError("csv: missing header");
  return table;
}

CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return read_csv(in);
}

void write_csv_row(std::ostream& out, std::span<const std::string> fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << fields[i];
  }
  out << '\n';
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  std::vector<std::string> header;
  for (std::size_t k = 0; k < data.dx(); ++k) header.push_back("x_" + std::to_string(k));
  header.push_back("y");
  for (std::size_t k = 0; k < data.dz(); ++k) header.push_back("z_" + std::to_string(k));
  const bool keys = data.discrete_z();
  if (keys) header.push_back("z_key");
  if (data.has_explicit_weights()) header.push_back("weight");
  write_csv_row(out, header);

  const auto w = data.weights();
  std::vector<std::string> row;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    row.clear();
    for (double v : s.x) row.push_back(format_double(v));
    row.push_back(format_double(s.y));
    for (double v : s.z) row.push_back(format_double(v));
    if (keys) row.push_back(std::to_string(*s.z_key));
    if (data.has_explicit_weights()) row.push_back(format_double(w[i]));
    write_csv_row(out, row);
  }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  write_dataset_csv(out, data);
}

Dataset read_dataset_csv(std::istream& in, std::optional<int> z_cardinality) {
  const CsvTable t = read_csv(in);
  std::vector<std::size_t> xcols, zcols;
  std::optional<std::size_t> ycol, keycol, wcol;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const std::string& h = t.header[c];
    if (h == "y") {
      ycol = c;
    } else if (h == "z_key") {
      keycol = c;
    } else if (h == "weight") {
      wcol = c;
    } else if (h.rfind("x_", 0) == 0) {
      if (h != "x_" + std::to_string(xcols.size())) {
        throw ValidationError("dataset csv: unexpected column '" + h + "'");
      }
      xcols.push_back(c);
    } else if (h.rfind("z_", 0) == 0) {
      if (h != "z_" + std::to_string(zcols.size())) {
        throw ValidationError("dataset csv: unexpected column '" + h + "'");
      }
      zcols.push_back(c);
    } else {
      throw ValidationError("dataset csv: unexpected column '" + h + "'");
    }
  }
  if (!ycol) throw ValidationError("dataset csv: missing column 'y'");
  if (t.rows.empty()) throw ValidationError("empty dataset");

  std::vector<SampleTriple> samples;
  samples.reserve(t.rows.size());
  std::vector<double> weights;
  int max_key = -1;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = "dataset csv row " + std::to_string(r + 1);
    SampleTriple s;
    for (auto c : xcols) s.x.push_back(parse_double(row[c], ctx));
    s.y = parse_double(row[*ycol], ctx);
    for (auto c : zcols) s.z.push_back(parse_double(row[c], ctx));
    if (keycol) {
      s.z_key = static_cast<int>(parse_int(row[*keycol], ctx));
      max_key = std::max(max_key, *s.z_key);
    }
    if (wcol) weights.push_back(parse_double(row[*wcol], ctx));
    samples.push_back(std::move(s));
  }
  std::optional<int> card = z_cardinality;
  if (keycol && !card) card = max_key + 1;
  if (!keycol && card) throw ValidationError("dataset csv: z_cardinality given but no z_key column");
  std::optional<std::vector<double>> w;
  if (wcol) w = std::move(weights);
  return Dataset(std::move(samples), card, std::move(w));
}

Dataset read_dataset_csv(const std::filesystem::path& path, std::optional<int> z_cardinality) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return read_dataset_csv(in, z_cardinality);
}

}  // namespace cmm
