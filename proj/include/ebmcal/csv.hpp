// Headered-CSV reading and writing for the toolkit's file schemas:
//   model scenario:  year,tas,rndt   (blank cell = missing)
//   observations:    year,tas,sd
//   forcing:         year,fco2,fvolc
// Readers fail fast with file/line context; writers emit deterministic
// shortest-round-trip formatting.
#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebmcal/linalg.hpp"

namespace ebmcal {

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  Eigen::MatrixXd values;  // NaN where blank
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> blank;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline double parse_cell(const std::string& s, const std::string& path, long line, int col) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    std::ostringstream os;
    os << path << ":" << line << ": column " << (col + 1) << ": cannot parse '" << s
       << "' as a number";
    throw ParseError(os.str());
  }
  return v;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");

  CsvTable table;
  table.path = path;
  std::string line;
  long line_no = 0;
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<bool>> blanks;

  while (std::getline(in, line)) {
    ++line_no;
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const auto fields = detail::split_fields(trimmed);
    if (table.header.empty()) {
      table.header = fields;
      continue;
    }
    if (fields.size() != table.header.size()) {
      std::ostringstream os;
      os << path << ":" << line_no << ": expected " << table.header.size() << " fields, got "
         << fields.size();
      throw ParseError(os.str());
    }
    std::vector<double> row(fields.size());
    std::vector<bool> blank(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (fields[c].empty()) {
        row[c] = std::numeric_limits<double>::quiet_NaN();
        blank[c] = true;
      } else {
        row[c] = detail::parse_cell(fields[c], path, line_no, static_cast<int>(c));
      }
    }
    rows.push_back(std::move(row));
    blanks.push_back(std::move(blank));
  }
  if (table.header.empty()) throw ParseError(path + ": missing header row");

  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(table.header.size()));
  table.blank.resize(table.values.rows(), table.values.cols());
  for (Eigen::Index r = 0; r < table.values.rows(); ++r)
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) {
      table.values(r, c) = rows[r][c];
      table.blank(r, c) = blanks[r][c];
    }
  return table;
}

inline Eigen::Index require_column(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return static_cast<Eigen::Index>(i);
  throw ParseError(t.path + ": missing required column '" + name + "'");
}

// Years must be strictly increasing and contiguous.
inline void check_years(const CsvTable& t, Eigen::Index year_col) {
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    if (t.blank(r, year_col))
      throw ParseError(t.path + ": blank year entry at data row " + std::to_string(r + 1));
    if (r > 0 && t.values(r, year_col) != t.values(r - 1, year_col) + 1.0)
      throw ParseError(t.path + ": years not contiguous at data row " + std::to_string(r + 1));
  }
  if (t.values.rows() == 0) throw ParseError(t.path + ": no data rows");
}

struct SeriesFile {
  Eigen::VectorXd years;
  Eigen::MatrixXd values;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> missing;
};

inline SeriesFile read_series(const std::string& path, const std::vector<std::string>& columns,
                              bool allow_missing) {
  const CsvTable t = read_csv(path);
  const Eigen::Index yc = require_column(t, "year");
  check_years(t, yc);

  SeriesFile out;
  out.years = t.values.col(yc);
  out.values.resize(t.values.rows(), static_cast<Eigen::Index>(columns.size()));
  out.missing.resize(out.values.rows(), out.values.cols());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const Eigen::Index src = require_column(t, columns[c]);
    out.values.col(static_cast<Eigen::Index>(c)) = t.values.col(src);
    out.missing.col(static_cast<Eigen::Index>(c)) = t.blank.col(src);
    if (!allow_missing)
      for (Eigen::Index r = 0; r < out.values.rows(); ++r)
        if (t.blank(r, src))
          throw ParseError(path + ": blank '" + columns[c] + "' at data row " +
                           std::to_string(r + 1));
  }
  return out;
}

inline std::string format_cell(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Shortest representation that round-trips keeps files tidy.
  for (int prec = 1; prec < 17; ++prec) {
    char probe[32];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(probe, "%lf", &back);
    if (back == v) return probe;
  }
  return buf;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError(path + ": cannot open for writing");
  for (std::size_t i = 0; i < header.size(); ++i)
    out << header[i] << (i + 1 < header.size() ? "," : "\n");
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c)
      out << format_cell(values(r, c)) << (c + 1 < values.cols() ? "," : "\n");
  if (!out) throw ParseError(path + ": write failed");
}

}  // namespace ebmcal
