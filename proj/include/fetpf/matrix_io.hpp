#pragma once

// Plain-text square matrix files: a line holding n, then n rows of n
// whitespace-separated reals. A file may hold several such blocks back to back.

#include "fetpf/types.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace fetpf {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_matrix(std::ostream& os, const Matrix& m) {
  os << m.rows() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << format_double(m(i, j));
    os << '\n';
  }
}

/// Reads every matrix block in the stream. Throws IoError on malformed input.
inline std::vector<Matrix> read_matrices(std::istream& is, const std::string& source = "<stream>") {
  std::vector<Matrix> out;
  long long n = 0;
  while (is >> n) {
    if (n <= 0) throw IoError(source + ": matrix dimension must be positive");
    Matrix m(n, n);
    for (long long i = 0; i < n; ++i)
      for (long long j = 0; j < n; ++j)
        if (!(is >> m(i, j)))
          throw IoError(source + ": truncated matrix block " + std::to_string(out.size() + 1));
    out.push_back(std::move(m));
  }
  if (!is.eof()) throw IoError(source + ": unexpected token where a matrix dimension was expected");
  return out;
}

inline std::vector<Matrix> load_matrices(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_matrices(in, path.string());
}

/// Exactly one matrix block expected.
inline Matrix load_matrix(const std::filesystem::path& path) {
  auto all = load_matrices(path);
  if (all.size() != 1)
    throw IoError(path.string() + ": expected one matrix, found " + std::to_string(all.size()));
  return std::move(all.front());
}

inline void save_matrices(const std::filesystem::path& path, const std::vector<Matrix>& ms) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& m : ms) write_matrix(out, m);
  if (!out) throw IoError("write failed for " + path.string());
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) { save_matrices(path, {m}); }

}  // namespace fetpf
