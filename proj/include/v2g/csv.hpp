#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2g {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest representation that round-trips a double; locale-free and stable,
// so rerunning a job yields byte-identical files.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path, const std::vector<std::string>& header)
      : out_(path), columns_(header.size()) {
    if (!out_) throw IoError("cannot open for writing: " + path);
    write_strings(header);
  }

  void write_strings(const std::vector<std::string>& row) {
    if (row.size() != columns_) throw IoError("csv row width mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out_ << ',';
      out_ << row[i];
    }
    out_ << '\n';
  }

  void write(const std::vector<double>& row) {
    std::vector<std::string> cells;
    cells.reserve(row.size());
    for (double v : row) cells.push_back(format_double(v));
    write_strings(cells);
  }

  void close() {
    out_.close();
    if (out_.fail()) throw IoError("csv write failed");
  }

 private:
  std::ofstream out_;
  std::size_t columns_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw IoError("csv column missing: " + name);
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

// Strict reader: mandatory header, rectangular body.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw IoError("csv missing header: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != table.header.size())
      throw IoError("csv ragged row in " + path);
    table.rows.push_back(std::move(cells));
  }
  return table;
}

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw IoError("not a number: '" + s + "'");
  }
  if (pos != s.size()) throw IoError("trailing junk in number: '" + s + "'");
  return v;
}

}  // namespace v2g
