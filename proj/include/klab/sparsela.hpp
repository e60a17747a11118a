#pragma once

// Sparse row-compressed storage and the handful of kernels the Kaczmarz
// family needs: products, norms, a power-iteration spectral estimate, the
// CGLS block least-squares solve, and dense singular-value diagnostics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "klab/error.hpp"

namespace klab {

using DenseVector = std::vector<double>;

// Diagnostics that densify a matrix refuse min(m, n) above this unless the
// caller passes a larger cap.
inline constexpr std::size_t kDefaultDenseCap = 2000;

// Singular values below this fraction of sigma_max count as zero.
inline constexpr double kSingularZeroRel = 1e-12;

struct Triplet {
  std::size_t row; // 0-based
  std::size_t col; // 0-based
  double value;
};

// ---------------------------------------------------------------------------
// dense vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_dims(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(norm_sq(a)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  detail::require_dims(x.size() == y.size(), "axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double distance_sq(std::span<const double> a, std::span<const double> b) {
  detail::require_dims(a.size() == b.size(), "distance_sq: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// SparseMatrix

// Immutable CSR matrix with cached squared row norms. Indices are 0-based.
class SparseMatrix {
public:
  struct Row {
    std::span<const std::size_t> cols;
    std::span<const double> values;
  };

  SparseMatrix() = default;

  // Takes ownership of already-canonical CSR arrays and validates them.
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_offsets,
               std::vector<std::size_t> col_indices, std::vector<double> values)
      : m_(rows), n_(cols), offsets_(std::move(row_offsets)), cols_(std::move(col_indices)),
        values_(std::move(values)) {
    validate();
    cache_row_norms();
  }

  std::size_t rows() const { return m_; }
  std::size_t cols() const { return n_; }
  std::size_t nnz() const { return values_.size(); }

  std::span<const std::size_t> row_offsets() const { return offsets_; }
  std::span<const std::size_t> col_indices() const { return cols_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> row_norms_sq() const { return row_norms_sq_; }

  Row row(std::size_t i) const {
    const auto b = offsets_[i], e = offsets_[i + 1];
    return {std::span(cols_).subspan(b, e - b), std::span(values_).subspan(b, e - b)};
  }

  double row_dot(std::size_t i, std::span<const double> x) const {
    double s = 0.0;
    for (auto k = offsets_[i]; k < offsets_[i + 1]; ++k) s += values_[k] * x[cols_[k]];
    return s;
  }

  // y += alpha * (row i)^T
  void add_row_scaled(std::size_t i, double alpha, std::span<double> y) const {
    for (auto k = offsets_[i]; k < offsets_[i + 1]; ++k) y[cols_[k]] += alpha * values_[k];
  }

  bool operator==(const SparseMatrix&) const = default;

private:
  void validate() const {
    if (offsets_.size() != m_ + 1) throw ArgumentError("csr: row_offsets must have m+1 entries");
    if (offsets_.front() != 0) throw ArgumentError("csr: row_offsets[0] must be 0");
    if (offsets_.back() != cols_.size() || cols_.size() != values_.size())
      throw ArgumentError("csr: row_offsets[m] must equal the number of stored entries");
    for (std::size_t i = 0; i < m_; ++i) {
      if (offsets_[i] > offsets_[i + 1]) throw ArgumentError("csr: row_offsets not monotone");
      for (auto k = offsets_[i]; k < offsets_[i + 1]; ++k) {
        if (cols_[k] >= n_)
          throw ArgumentError("csr: column index out of range in row " + std::to_string(i + 1));
        if (k > offsets_[i] && cols_[k] <= cols_[k - 1])
          throw ArgumentError("csr: column indices not strictly increasing in row " +
                              std::to_string(i + 1));
      }
    }
  }

  void cache_row_norms() {
    row_norms_sq_.assign(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      for (auto k = offsets_[i]; k < offsets_[i + 1]; ++k) row_norms_sq_[i] += values_[k] * values_[k];
  }

  std::size_t m_ = 0;
  std::size_t n_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> cols_;
  std::vector<double> values_;
  std::vector<double> row_norms_sq_;
};

// Build canonical CSR from 0-based coordinates. Out-of-range and duplicate
// coordinates are errors; explicit zeros are kept as stored entries.
inline SparseMatrix csr_from_triplets(std::vector<Triplet> triplets, std::size_t m, std::size_t n) {
  if (m == 0 || n == 0) throw ArgumentError("csr_from_triplets: dimensions must be positive");
  for (const auto& t : triplets) {
    if (t.row >= m || t.col >= n)
      throw ArgumentError("csr_from_triplets: coordinate (" + std::to_string(t.row + 1) + "," +
                          std::to_string(t.col + 1) + ") outside " + std::to_string(m) + "x" +
                          std::to_string(n));
  }
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  std::vector<std::size_t> offsets(m + 1, 0), cols;
  std::vector<double> vals;
  cols.reserve(triplets.size());
  vals.reserve(triplets.size());
  for (std::size_t k = 0; k < triplets.size(); ++k) {
    const auto& t = triplets[k];
    if (k > 0 && t.row == triplets[k - 1].row && t.col == triplets[k - 1].col)
      throw ArgumentError("csr_from_triplets: duplicate coordinate (" + std::to_string(t.row + 1) +
                          "," + std::to_string(t.col + 1) + ")");
    ++offsets[t.row + 1];
    cols.push_back(t.col);
    vals.push_back(t.value);
  }
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  return SparseMatrix(m, n, std::move(offsets), std::move(cols), std::move(vals));
}

inline SparseMatrix identity_matrix(std::size_t n) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  return csr_from_triplets(std::move(t), n, n);
}

// ---------------------------------------------------------------------------
// RowBlockView

// Non-owning view of the rows A(indices, :). The parent matrix and the index
// storage must outlive the view.
class RowBlockView {
public:
  struct Trusted {};

  RowBlockView(const SparseMatrix& parent, std::span<const std::size_t> indices)
      : parent_(&parent), indices_(indices) {
    std::vector<std::size_t> sorted(indices.begin(), indices.end());
    std::sort(sorted.begin(), sorted.end());
    if (!sorted.empty() && sorted.back() >= parent.rows())
      throw ArgumentError("RowBlockView: row index out of range");
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ArgumentError("RowBlockView: duplicate row index");
  }

  // Skips validation; for indices taken from an already validated Partition.
  RowBlockView(const SparseMatrix& parent, std::span<const std::size_t> indices, Trusted)
      : parent_(&parent), indices_(indices) {}

  const SparseMatrix& parent() const { return *parent_; }
  std::span<const std::size_t> indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  std::size_t cols() const { return parent_->cols(); }

private:
  const SparseMatrix* parent_;
  std::span<const std::size_t> indices_;
};

// ---------------------------------------------------------------------------
// products

inline DenseVector spmv(const SparseMatrix& a, std::span<const double> x) {
  detail::require_dims(x.size() == a.cols(), "spmv: x must have length n");
  DenseVector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = a.row_dot(i, x);
  return y;
}

// A_V x, length |V|.
inline DenseVector spmv_block(const RowBlockView& v, std::span<const double> x) {
  detail::require_dims(x.size() == v.cols(), "spmv_block: x must have length n");
  DenseVector y(v.size());
  const auto idx = v.indices();
  for (std::size_t j = 0; j < idx.size(); ++j) y[j] = v.parent().row_dot(idx[j], x);
  return y;
}

// A_V^T y, length n.
inline DenseVector spmv_transpose_block(const RowBlockView& v, std::span<const double> y) {
  detail::require_dims(y.size() == v.size(), "spmv_transpose_block: y must have length |V|");
  DenseVector out(v.cols(), 0.0);
  const auto idx = v.indices();
  for (std::size_t j = 0; j < idx.size(); ++j) v.parent().add_row_scaled(idx[j], y[j], out);
  return out;
}

// Full transpose product A^T y.
inline DenseVector spmv_transpose(const SparseMatrix& a, std::span<const double> y) {
  detail::require_dims(y.size() == a.rows(), "spmv_transpose: y must have length m");
  DenseVector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) a.add_row_scaled(i, y[i], out);
  return out;
}

// ---------------------------------------------------------------------------
// norms

// Row-major sum of the cached squared row norms.
inline double frobenius_norm_sq(const SparseMatrix& a) {
  double s = 0.0;
  for (double r : a.row_norms_sq()) s += r;
  return s;
}

inline double frobenius_norm_sq(const RowBlockView& v) {
  double s = 0.0;
  const auto norms = v.parent().row_norms_sq();
  for (auto i : v.indices()) s += norms[i];
  return s;
}

struct SpectralEstimate {
  double value = 0.0; // estimate of sigma_max^2
  std::size_t iterations = 0;
  bool converged = false;
};

// Power iteration on x -> A^T A x from the normalized all-ones vector. Stops
// when the Rayleigh quotient changes by less than tol relative.
inline SpectralEstimate spectral_norm_sq(const SparseMatrix& a, double tol = 1e-8,
                                         std::size_t max_iter = 10000) {
  if (a.nnz() == 0 || frobenius_norm_sq(a) == 0.0)
    throw ArgumentError("spectral_norm_sq: zero matrix");
  DenseVector x(a.cols(), 1.0 / std::sqrt(static_cast<double>(a.cols())));
  SpectralEstimate est;
  double prev = 0.0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    const DenseVector ax = spmv(a, x);
    DenseVector w = spmv_transpose(a, ax);
    const double rq = norm_sq(ax); // x has unit norm
    est.value = rq;
    est.iterations = it;
    if (it > 1 && std::abs(rq - prev) <= tol * rq) {
      est.converged = true;
      return est;
    }
    prev = rq;
    const double wn = norm2(w);
    if (wn == 0.0) {
      // Start vector lies in the null space of A; restart from a unit coordinate
      // direction that A actually touches.
      std::fill(w.begin(), w.end(), 0.0);
      w[a.col_indices()[0]] = 1.0;
      x = std::move(w);
      continue;
    }
    for (std::size_t j = 0; j < w.size(); ++j) x[j] = w[j] / wn;
  }
  return est;
}

// ---------------------------------------------------------------------------
// CGLS block solve

struct LsqConfig {
  double rel_tolerance = 1e-12;
  // Unset means 4 * |V|.
  std::optional<std::size_t> max_inner_iterations;

  void validate() const {
    if (!(rel_tolerance > 0.0 && rel_tolerance < 1.0))
      throw ArgumentError("LsqConfig: rel_tolerance must lie in (0, 1)");
    if (max_inner_iterations && *max_inner_iterations < 1)
      throw ArgumentError("LsqConfig: max_inner_iterations must be >= 1");
  }

  std::size_t iteration_limit(std::size_t block_rows) const {
    return max_inner_iterations.value_or(std::max<std::size_t>(4 * block_rows, 1));
  }
};

struct LsqResult {
  DenseVector z;
  std::size_t iterations = 0;
  bool converged = false;
  // ||A_V^T (r - A_V z)|| / ||A_V^T r||, recomputed from scratch at exit.
  double relative_normal_residual = 0.0;
};

// Minimum-norm minimizer of ||A_V z - r||_2, i.e. A_V^+ r, by CGLS from z = 0.
// Starting at zero keeps every iterate in range(A_V^T), which is what makes the
// limit the minimum-norm solution.
inline LsqResult least_squares_apply(const RowBlockView& v, std::span<const double> r,
                                     const LsqConfig& cfg = {}) {
  detail::require_dims(r.size() == v.size(), "least_squares_apply: r must have length |V|");
  const std::size_t limit = cfg.iteration_limit(v.size());

  LsqResult out;
  out.z.assign(v.cols(), 0.0);

  DenseVector res(r.begin(), r.end());
  DenseVector s = spmv_transpose_block(v, res);
  const double s0 = norm2(s);
  if (s0 == 0.0) {
    out.converged = true;
    return out;
  }
  const double target = cfg.rel_tolerance * s0;

  DenseVector p = s;
  double gamma = norm_sq(s);
  while (out.iterations < limit) {
    const DenseVector q = spmv_block(v, p);
    const double delta = norm_sq(q);
    if (delta == 0.0) break;
    const double step = gamma / delta;
    axpy(step, p, out.z);
    axpy(-step, q, res);
    ++out.iterations;

    s = spmv_transpose_block(v, res);
    const double gamma_next = norm_sq(s);
    if (std::sqrt(gamma_next) <= target) {
      // The recursive residual drifts from the true one; confirm before
      // accepting, otherwise restart from the true residual.
      const DenseVector az = spmv_block(v, out.z);
      for (std::size_t j = 0; j < res.size(); ++j) res[j] = r[j] - az[j];
      s = spmv_transpose_block(v, res);
      gamma = norm_sq(s);
      if (std::sqrt(gamma) <= target) {
        out.converged = true;
        break;
      }
      p = s;
      continue;
    }
    const double beta = gamma_next / gamma;
    gamma = gamma_next;
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = s[j] + beta * p[j];
  }

  const DenseVector az = spmv_block(v, out.z);
  DenseVector true_res(r.begin(), r.end());
  for (std::size_t j = 0; j < true_res.size(); ++j) true_res[j] -= az[j];
  out.relative_normal_residual = norm2(spmv_transpose_block(v, true_res)) / s0;
  out.converged = out.relative_normal_residual <= cfg.rel_tolerance;
  return out;
}

// ---------------------------------------------------------------------------
// dense diagnostics

inline void check_dense_cap(std::size_t m, std::size_t n, std::size_t cap, const char* who) {
  if (std::min(m, n) > cap)
    throw SizeCapError(std::string(who) + ": min(m, n) = " + std::to_string(std::min(m, n)) +
                       " exceeds the dense diagnostic cap " + std::to_string(cap));
}

inline Eigen::MatrixXd densify(const SparseMatrix& a) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a.rows()),
                                            static_cast<Eigen::Index>(a.cols()));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto row = a.row(i);
    for (std::size_t k = 0; k < row.cols.size(); ++k)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(row.cols[k])) = row.values[k];
  }
  return d;
}

inline Eigen::MatrixXd densify(const RowBlockView& v) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(v.size()),
                                            static_cast<Eigen::Index>(v.cols()));
  const auto idx = v.indices();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto row = v.parent().row(idx[j]);
    for (std::size_t k = 0; k < row.cols.size(); ++k)
      d(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(row.cols[k])) = row.values[k];
  }
  return d;
}

// All min(m, n) singular values, descending. Values below
// kSingularZeroRel * sigma_max are flushed to exactly zero.
inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& d) {
  if (d.size() == 0) return {};
  Eigen::BDCSVD<Eigen::MatrixXd> svd(d);
  Eigen::VectorXd s = svd.singularValues();
  const double cutoff = s.size() > 0 ? kSingularZeroRel * s(0) : 0.0;
  for (auto& v : s)
    if (v <= cutoff) v = 0.0;
  return s;
}

inline double smallest_nonzero_singular_value_sq(const SparseMatrix& a,
                                                 std::size_t dense_cap = kDefaultDenseCap) {
  check_dense_cap(a.rows(), a.cols(), dense_cap, "smallest_nonzero_singular_value_sq");
  const Eigen::VectorXd s = singular_values(densify(a));
  for (Eigen::Index i = s.size() - 1; i >= 0; --i)
    if (s(i) > 0.0) return s(i) * s(i);
  throw ArgumentError("smallest_nonzero_singular_value_sq: zero matrix");
}

} // namespace klab
