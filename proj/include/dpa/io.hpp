// Minimal CSV read/write used for all tabular artifacts.
#pragma once

#include "dpa/common.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace dpa::io {

// All numeric output goes through one formatter so reruns are bit-identical.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> comments;  // lines written as "# ..."
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("io: cannot open " + path.string() + " for writing");
  for (const auto& c : table.comments) out << "# " << c << "\n";
  for (std::size_t j = 0; j < table.header.size(); ++j)
    out << table.header[j] << (j + 1 < table.header.size() ? "," : "\n");
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j)
      out << fmt(row[j]) << (j + 1 < row.size() ? "," : "\n");
  }
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("io: cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      table.comments.push_back(line.size() > 2 ? line.substr(2) : "");
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!header_done) {
      table.header = cells;
      header_done = true;
    } else {
      std::vector<double> row;
      row.reserve(cells.size());
      for (const auto& c : cells) row.push_back(std::stod(c));
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& X,
                             const std::vector<std::string>& comments = {}) {
  CsvTable t;
  t.comments = comments;
  for (Eigen::Index j = 0; j < X.cols(); ++j) t.header.push_back("x" + std::to_string(j + 1));
  t.rows.reserve(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    std::vector<double> row(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) row[j] = X(i, j);
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  CsvTable t = read_csv(path);
  if (t.rows.empty()) return Matrix(0, static_cast<Eigen::Index>(t.header.size()));
  Matrix X(t.rows.size(), t.rows[0].size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.rows[i].size(); ++j) X(i, j) = t.rows[i][j];
  return X;
}

// Sidecar with the seed and generator settings next to an exported sample matrix.
inline void write_sidecar(const std::filesystem::path& csv_path, const std::string& content) {
  std::filesystem::path p = csv_path;
  p += ".meta.txt";
  std::ofstream out(p);
  out << content;
}

}  // namespace dpa::io
