#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "multiflow/error.hpp"

namespace multiflow {

/// Column-named table written as CSV, preceded by `# key=value` comment lines.
struct Table {
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::pair<std::string, std::string>> notes;  // extra header comments

  void add_row(std::vector<std::string> row) {
    if (row.size() != columns.size()) {
      throw Error(ErrorCode::IoError, name + ": row has " + std::to_string(row.size()) + " fields, expected " +
                                          std::to_string(columns.size()));
    }
    rows.push_back(std::move(row));
  }

  std::size_t column(const std::string& c) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == c) return i;
    }
    throw Error(ErrorCode::IoError, name + ": no column '" + c + "'");
  }
};

/// Shortest round-trip representation of a double.
inline std::string fmt(double x) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline std::string fmt(long long x) { return std::to_string(x); }
inline std::string fmt(int x) { return std::to_string(x); }
inline std::string fmt(std::size_t x) { return std::to_string(x); }
inline std::string fmt(bool b) { return b ? "1" : "0"; }

inline void write_csv(std::ostream& out, const Table& t,
                      const std::vector<std::pair<std::string, std::string>>& config) {
  for (const auto& [k, v] : config) out << "# " << k << '=' << v << '\n';
  for (const auto& [k, v] : t.notes) out << "# " << k << '=' << v << '\n';
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << t.columns[i];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
}

inline std::string to_csv(const Table& t, const std::vector<std::pair<std::string, std::string>>& config = {}) {
  std::ostringstream os;
  write_csv(os, t, config);
  return os.str();
}

inline std::filesystem::path write_csv_file(const std::filesystem::path& dir, const Table& t,
                                            const std::vector<std::pair<std::string, std::string>>& config) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create directory '" + dir.string() + "': " + ec.message());
  const auto path = dir / (t.name + ".csv");
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  write_csv(out, t, config);
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
  return path;
}

}  // namespace multiflow
