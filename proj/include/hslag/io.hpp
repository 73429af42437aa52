#pragma once

// CSV tables and field files for the experiment harness.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hslag/errors.hpp"
#include "hslag/grid.hpp"

namespace hslag {

/// Numeric table with an optional string column in front (the "series"
/// column of long-format plot data).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;  // empty, or one per row; written first

  void add(std::vector<double> row, std::string label = {}) {
    const bool labelled = !labels.empty() || (rows.empty() && !label.empty());
    if (labelled != !label.empty()) throw Error("CsvTable: mixed labelled and unlabelled rows");
    if (labelled) labels.push_back(std::move(label));
    rows.push_back(std::move(row));
  }

  std::size_t column(const std::string& name) const {
    const std::size_t off = labels.empty() ? 0 : 1;
    for (std::size_t c = off; c < header.size(); ++c)
      if (header[c] == name) return c - off;
    throw Error("CsvTable: no column " + name);
  }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string to_csv(const CsvTable& t) {
  std::ostringstream os;
  for (std::size_t c = 0; c < t.header.size(); ++c) os << (c ? "," : "") << t.header[c];
  os << '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    bool first = true;
    if (!t.labels.empty()) {
      os << t.labels[r];
      first = false;
    }
    for (double v : t.rows[r]) {
      os << (first ? "" : ",") << format_double(v);
      first = false;
    }
    os << '\n';
  }
  return os.str();
}

/// Parse a table written by to_csv. labelled: first column is text.
inline CsvTable parse_csv(const std::string& text, bool labelled = false) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.empty()) throw Error("csv: missing header");
  {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) t.header.push_back(cell);
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell, label;
    std::vector<double> row;
    bool first = true;
    while (std::getline(ls, cell, ',')) {
      if (labelled && first) {
        label = cell;
      } else {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(cell, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != cell.size() || cell.empty()) throw Error("csv: not a number: '" + cell + "'");
        row.push_back(v);
      }
      first = false;
    }
    if (row.size() + (labelled ? 1 : 0) != t.header.size()) throw Error("csv: ragged row");
    if (labelled) t.labels.push_back(label);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Write through a temporary so a failed run never leaves a partial file.
inline void write_text(const std::filesystem::path& p, const std::string& text) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
    if (!out) throw Error("write failed for " + p.string());
  }
  std::filesystem::rename(tmp, p);
}

inline void write_csv(const std::filesystem::path& p, const CsvTable& t) { write_text(p, to_csv(t)); }
inline CsvTable read_csv(const std::filesystem::path& p, bool labelled = false) { return parse_csv(read_text(p), labelled); }

// ------------------------------------------------------------ fields

inline nlohmann::json grid_to_json(const GridDescriptor& g) {
  nlohmann::json j;
  j["sizes"] = g.sizes;
  j["periods"] = g.periods;
  if (g.quotient) {
    std::vector<bool> s(g.quotient->shifted_axes.begin(), g.quotient->shifted_axes.end());
    j["quotient"] = s;
  } else {
    j["quotient"] = nullptr;
  }
  return j;
}

inline GridDescriptor grid_from_json(const nlohmann::json& j) {
  std::optional<QuotientRule> q;
  if (j.contains("quotient") && !j.at("quotient").is_null()) {
    QuotientRule r;
    for (bool b : j.at("quotient").get<std::vector<bool>>()) r.shifted_axes.push_back(b);
    q = r;
  }
  return GridDescriptor(j.at("sizes").get<std::vector<int>>(), j.at("periods").get<std::vector<double>>(), q);
}

/// Grid header plus row-major node values.
inline nlohmann::json field_to_json(const ScalarField& f) {
  nlohmann::json j;
  j["grid"] = grid_to_json(f.grid);
  j["values"] = std::vector<double>(f.values.data(), f.values.data() + f.values.size());
  return j;
}

inline ScalarField field_from_json(const nlohmann::json& j) {
  const GridDescriptor g = grid_from_json(j.at("grid"));
  const auto v = j.at("values").get<std::vector<double>>();
  if (v.size() != g.node_count()) throw GridMismatch("field file: value count does not match the grid");
  ScalarField f(g);
  for (std::size_t i = 0; i < v.size(); ++i) f.values[static_cast<Eigen::Index>(i)] = v[i];
  return f;
}

}  // namespace hslag
