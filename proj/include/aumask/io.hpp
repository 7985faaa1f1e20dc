#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace aumask::io {

/// Writes to "<path>.tmp" and renames over `path`, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// A comma-separated table with a header row. Blank lines and lines starting
/// with '#' are skipped. Fields are not quoted.
struct CsvTable {
  std::filesystem::path source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based line number of each row in the source file.
  std::vector<std::size_t> line_numbers;

  /// Column position, or -1 if absent.
  int column(std::string_view name) const;
  /// Column position; throws ValidationError naming the file when absent.
  int require_column(std::string_view name) const;
  /// "<file>:<line>" for error messages.
  std::string where(std::size_t row) const;
};

CsvTable parse_csv(std::string_view text, const std::filesystem::path& source = {});
CsvTable read_csv(const std::filesystem::path& path);

/// Rejects any header field not in `allowed` (and not matched by `extra`).
void check_columns(const CsvTable& table, const std::vector<std::string>& allowed,
                   bool (*extra)(std::string_view) = nullptr);

long long parse_int(std::string_view field, const CsvTable& table, std::size_t row,
                    std::string_view column);
double parse_double(std::string_view field, const CsvTable& table, std::size_t row,
                    std::string_view column);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace aumask::io
