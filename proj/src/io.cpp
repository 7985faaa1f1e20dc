#include "aumask/io.hpp"

#include "aumask/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace aumask::io {

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    const std::string_view field =
        trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    out.emplace_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

int CsvTable::require_column(std::string_view name) const {
  const int c = column(name);
  if (c < 0) throw ValidationError(source.string() + ": missing required column '" + std::string(name) + "'");
  return c;
}

std::string CsvTable::where(std::size_t row) const {
  return source.string() + ":" + std::to_string(line_numbers.at(row));
}

CsvTable parse_csv(std::string_view text, const std::filesystem::path& source) {
  CsvTable table;
  table.source = source;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;

    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_fields(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      for (std::size_t i = 0; i < table.header.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
          if (table.header[i] == table.header[j]) {
            throw ValidationError(source.string() + ":" + std::to_string(line_no) +
                                  ": duplicate column '" + table.header[i] + "'");
          }
        }
      }
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ValidationError(source.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(table.header.size()) + " fields, found " +
                            std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw ValidationError(source.string() + ": missing header row");
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("file not found: " + path.string());
  return parse_csv(read_file(path), path);
}

void check_columns(const CsvTable& table, const std::vector<std::string>& allowed,
                   bool (*extra)(std::string_view)) {
  for (const auto& name : table.header) {
    const bool known = std::find(allowed.begin(), allowed.end(), name) != allowed.end() ||
                       (extra != nullptr && extra(name));
    if (!known) throw ValidationError(table.source.string() + ": unknown column '" + name + "'");
  }
}

long long parse_int(std::string_view field, const CsvTable& table, std::size_t row,
                    std::string_view column) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
    throw ValidationError(table.where(row) + ": column '" + std::string(column) +
                          "' expects an integer, got '" + std::string(field) + "'");
  }
  return v;
}

double parse_double(std::string_view field, const CsvTable& table, std::size_t row,
                    std::string_view column) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
    throw ValidationError(table.where(row) + ": column '" + std::string(column) +
                          "' expects a number, got '" + std::string(field) + "'");
  }
  return v;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw std::logic_error("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace aumask::io
