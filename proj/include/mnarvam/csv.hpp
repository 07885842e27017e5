#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mnarvam::csv {

/// Splits one line on commas outside double quotes; trims unquoted fields.
std::vector<std::string> split_line(std::string_view line);
/// Wraps the field in double quotes when it holds a comma, quote or newline.
std::string quote(std::string_view field);

/// True for the tokens treated as missing: "", "NA", ".", "NaN", "nan".
bool is_missing(std::string_view token);

std::optional<double> parse_double(std::string_view token);
std::optional<long long> parse_int(std::string_view token);

/// Fixed notation with `decimals` digits after the point.
std::string fixed(double value, int decimals = 6);
/// Shortest-ish round-trippable representation ("%.17g"), "NA" for NaN.
std::string exact(double value);
/// "%.10g", "NA" for NaN.
std::string general(double value);

/// Quotes fields as needed.
std::string join(const std::vector<std::string>& fields);

/// Reads a header + rows file into memory. Throws IoError if unreadable.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
  std::size_t require_column(std::string_view name) const;
};
Table read_table(std::istream& in);
Table read_table_file(const std::string& path);

}  // namespace mnarvam::csv
