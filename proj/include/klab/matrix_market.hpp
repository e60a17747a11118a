#pragma once

// Matrix Market coordinate-format reader/writer.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "klab/error.hpp"
#include "klab/sparsela.hpp"

namespace klab {

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::string mm_where(const std::string& source, std::size_t lineno) {
  return source + ":" + std::to_string(lineno) + ": ";
}

inline std::size_t parse_mm_size(const std::string& tok, const std::string& where) {
  unsigned long long v = 0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec == std::errc::result_out_of_range || v > std::numeric_limits<std::size_t>::max() / 2)
    throw ParseError(where + "integer overflow in \"" + tok + "\"");
  if (ec != std::errc() || ptr != last) throw ParseError(where + "expected an integer, got \"" + tok + "\"");
  return static_cast<std::size_t>(v);
}

inline double parse_mm_value(const std::string& tok, const std::string& where) {
  const char* begin = tok.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw ParseError(where + "expected a real value, got \"" + tok + "\"");
  return v;
}

} // namespace detail

// Reads a real/integer/pattern coordinate matrix, general or symmetric.
// Symmetric storage is expanded (off-diagonal entries mirrored, diagonal kept
// once); pattern entries get value 1.0; duplicate coordinates are rejected.
inline SparseMatrix read_matrix_market(std::istream& is, const std::string& source = "<stream>") {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw ParseError(source + ": empty input");
  ++lineno;

  std::istringstream hs(line);
  std::string banner, object, format, field, symmetry;
  hs >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket")
    throw ParseError(detail::mm_where(source, lineno) + "missing %%MatrixMarket banner");
  object = detail::lower(object);
  format = detail::lower(format);
  field = detail::lower(field);
  symmetry = detail::lower(symmetry);
  if (object != "matrix") throw ParseError(detail::mm_where(source, lineno) + "object must be 'matrix'");
  if (format != "coordinate")
    throw ParseError(detail::mm_where(source, lineno) + "only coordinate format is supported");
  if (field == "complex" || field == "hermitian")
    throw ParseError(detail::mm_where(source, lineno) + "complex matrices are not supported");
  if (field != "real" && field != "integer" && field != "pattern" && field != "double")
    throw ParseError(detail::mm_where(source, lineno) + "unknown field '" + field + "'");
  if (symmetry != "general" && symmetry != "symmetric")
    throw ParseError(detail::mm_where(source, lineno) + "unsupported symmetry '" + symmetry + "'");
  const bool pattern = field == "pattern";
  const bool symmetric = symmetry == "symmetric";

  // size line, skipping comments and blanks
  std::size_t m = 0, n = 0, entries = 0;
  for (;;) {
    if (!std::getline(is, line)) throw ParseError(source + ": missing size line");
    ++lineno;
    if (line.empty() || line[0] == '%' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string a, b, c, extra;
    if (!(ss >> a >> b >> c) || (ss >> extra))
      throw ParseError(detail::mm_where(source, lineno) + "size line must hold 'rows cols entries'");
    const auto where = detail::mm_where(source, lineno);
    m = detail::parse_mm_size(a, where);
    n = detail::parse_mm_size(b, where);
    entries = detail::parse_mm_size(c, where);
    if (m == 0 || n == 0) throw ParseError(where + "dimensions must be positive");
    if (symmetric && m != n) throw ParseError(where + "symmetric matrix must be square");
    break;
  }

  struct Entry {
    std::size_t row, col;
    double value;
    std::size_t line;
  };
  std::vector<Entry> raw;
  raw.reserve(symmetric ? 2 * entries : entries);
  std::size_t seen = 0;
  while (seen < entries && std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '%' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = detail::mm_where(source, lineno);
    std::istringstream ss(line);
    std::string si, sj, sv;
    if (!(ss >> si >> sj)) throw ParseError(where + "expected 'row col" + (pattern ? "'" : " value'"));
    const std::size_t i = detail::parse_mm_size(si, where);
    const std::size_t j = detail::parse_mm_size(sj, where);
    if (i < 1 || i > m || j < 1 || j > n)
      throw ParseError(where + "coordinate (" + si + "," + sj + ") outside " + std::to_string(m) + "x" +
                       std::to_string(n));
    double v = 1.0;
    if (!pattern) {
      if (!(ss >> sv)) throw ParseError(where + "missing value");
      v = detail::parse_mm_value(sv, where);
    }
    raw.push_back({i - 1, j - 1, v, lineno});
    if (symmetric && i != j) raw.push_back({j - 1, i - 1, v, lineno});
    ++seen;
  }
  if (seen != entries)
    throw ParseError(source + ": expected " + std::to_string(entries) + " entries, found " +
                     std::to_string(seen));

  std::stable_sort(raw.begin(), raw.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  std::vector<Triplet> trips;
  trips.reserve(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    if (k > 0 && raw[k].row == raw[k - 1].row && raw[k].col == raw[k - 1].col)
      throw ParseError(detail::mm_where(source, std::max(raw[k].line, raw[k - 1].line)) +
                       "duplicate coordinate (" + std::to_string(raw[k].row + 1) + "," +
                       std::to_string(raw[k].col + 1) + "), first seen on line " +
                       std::to_string(std::min(raw[k].line, raw[k - 1].line)));
    trips.push_back({raw[k].row, raw[k].col, raw[k].value});
  }
  return csr_from_triplets(std::move(trips), m, n);
}

inline SparseMatrix read_matrix_market(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return read_matrix_market(in, path.string());
}

// Writes "coordinate real general" with 17 significant digits so values
// survive a read back bit for bit.
inline void write_matrix_market(std::ostream& os, const SparseMatrix& a) {
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << a.rows() << ' ' << a.cols() << ' ' << a.nnz() << '\n';
  char buf[64];
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto row = a.row(i);
    for (std::size_t k = 0; k < row.cols.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", row.values[k]);
      os << i + 1 << ' ' << row.cols[k] + 1 << ' ' << buf << '\n';
    }
  }
}

inline void write_matrix_market(const std::filesystem::path& path, const SparseMatrix& a) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_matrix_market(out, a);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

} // namespace klab
