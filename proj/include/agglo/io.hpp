#pragma once

// File and text utilities: atomic writes, deterministic float formatting,
// minimal CSV handling, content hashing for run manifests.

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "agglo/rng.hpp"  // fnv1a64

namespace agglo::io {

// Shortest decimal form that round-trips a double; C locale semantics assumed
// (the CLI pins LC_ALL=C). Used everywhere persisted numbers must be stable.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // try shorter representations that still round-trip
  for (int prec = 1; prec < 17; ++prec) {
    char cand[40];
    std::snprintf(cand, sizeof cand, "%.*g", prec, v);
    if (std::strtod(cand, nullptr) == v) return cand;
  }
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write via a temp file in the same directory, then rename. Readers never see
// partial content.
inline void atomic_write(const std::filesystem::path& path, std::string_view data) {
  namespace fs = std::filesystem;
  const fs::path dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  fs::create_directories(dir);
  const fs::path tmp = dir / (path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open temp file for write: " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("rename failed for " + path.string() + ": " + ec.message());
}

inline std::string hash_hex(std::string_view bytes) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

inline std::string file_hash_hex(const std::filesystem::path& path) {
  return hash_hex(read_file(path));
}

// CSV cells must not contain commas or newlines; all pipeline schemas obey this.
struct Csv {
  std::vector<std::string> comments;             // leading "# ..." lines
  std::vector<std::string> header;               // column names
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
  int require_column(std::string_view name) const {
    const int i = column(name);
    if (i < 0) throw std::runtime_error("CSV missing required column: " + std::string(name));
    return i;
  }

  std::string serialize() const {
    std::ostringstream out;
    for (const auto& c : comments) out << c << '\n';
    for (std::size_t i = 0; i < header.size(); ++i)
      out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << '\n';
    }
    return out.str();
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline Csv parse_csv(const std::string& text, const std::string& origin = "<memory>") {
  Csv csv;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (!have_header) csv.comments.push_back(line);
      continue;
    }
    auto cells = split_csv_line(line);
    if (!have_header) {
      csv.header = std::move(cells);
      have_header = true;
    } else {
      if (cells.size() != csv.header.size())
        throw std::runtime_error(origin + ": CSV row has " + std::to_string(cells.size()) +
                                 " cells, header has " + std::to_string(csv.header.size()));
      csv.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw std::runtime_error(origin + ": CSV has no header row");
  return csv;
}

inline Csv load_csv(const std::filesystem::path& path) {
  return parse_csv(read_file(path), path.string());
}

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE)
    throw std::runtime_error("cannot parse number '" + s + "' in " + what);
  return v;
}

}  // namespace agglo::io
