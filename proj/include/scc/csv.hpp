// Minimal CSV reading/writing used by every on-disk format of the lab.
#pragma once

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "scc/common.hpp"

namespace scc::csv {

/// printf "%.{digits}g".
inline std::string format_real(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline double parse_real(const std::string& s, std::size_t line) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw SchemaError("not a number: '" + s + "'", line);
  return v;
}

inline long long parse_int(const std::string& s, std::size_t line) {
  errno = 0;
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw SchemaError("not an integer: '" + s + "'", line);
  return v;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // 1-based file line of rows[i]
  std::vector<std::size_t> lines;
};

/// Reads a headed CSV file. Every row must have as many fields as the header.
inline Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      t.header = split(line);
      continue;
    }
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != t.header.size())
      throw SchemaError(path.string() + ": expected " + std::to_string(t.header.size()) +
                            " columns, got " + std::to_string(fields.size()),
                        lineno);
    t.rows.push_back(std::move(fields));
    t.lines.push_back(lineno);
  }
  if (lineno == 0) throw SchemaError(path.string() + ": empty file", 1);
  return t;
}

/// Writes to `path` through a sibling temp file and rename, so readers never
/// observe a partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace scc::csv
