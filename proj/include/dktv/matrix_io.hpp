#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dktv {

// Shortest exact decimal form; reading the text back reproduces the double bit for bit.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline void ensure_dir(const std::string& path) {
  std::filesystem::create_directories(path);
}

// Matrix CSV layout: "rows,cols" header line, the dimensions, then one row per line.
inline void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "rows,cols\n" << m.rows() << "," << m.cols() << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ",";
      out << format_double(m(i, j));
    }
    out << "\n";
  }
}

inline Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "rows,cols") {
    throw std::runtime_error("bad matrix csv header in " + path);
  }
  if (!std::getline(in, line)) throw std::runtime_error("missing dims in " + path);
  Eigen::Index rows = 0, cols = 0;
  {
    std::stringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    rows = std::stoll(tok);
    std::getline(ss, tok, ',');
    cols = std::stoll(tok);
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("truncated matrix csv: " + path);
    std::stringstream ss(line);
    std::string tok;
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!std::getline(ss, tok, ',')) throw std::runtime_error("short row in " + path);
      m(i, j) = std::strtod(tok.c_str(), nullptr);
    }
  }
  return m;
}

inline void write_vector_text(const std::string& path, const Eigen::VectorXd& v) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  for (Eigen::Index i = 0; i < v.size(); ++i) out << format_double(v(i)) << "\n";
}

inline Eigen::VectorXd read_vector_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) vals.push_back(std::strtod(line.c_str(), nullptr));
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  for (size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
  return v;
}

// FNV-1a over file bytes, used to verify that replicate runs consumed identical data.
inline std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for hash: " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline bool files_identical(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return sa == sb;
}

}  // namespace dktv
