#pragma once

// Randomized row partition V = {V_1, ..., V_t} of [m], row-paving bounds, and
// the convergence factors they feed.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "klab/error.hpp"
#include "klab/random.hpp"
#include "klab/sparsela.hpp"

namespace klab {

// Ordered list of t disjoint row-index blocks covering [0, m). Block i holds
// permutation[k] for k in [floor(i*m/t), floor((i+1)*m/t)).
class Partition {
public:
  Partition() = default;

  // Builds the blocks from an explicit permutation of [0, m).
  Partition(std::vector<std::size_t> permutation, std::size_t t, std::uint64_t seed = 0)
      : perm_(std::move(permutation)), t_(t), seed_(seed) {
    const std::size_t m = perm_.size();
    if (t < 1 || t > m)
      throw ArgumentError("Partition: block count t=" + std::to_string(t) + " must lie in [1, " +
                          std::to_string(m) + "]");
    std::vector<bool> seen(m, false);
    for (auto p : perm_) {
      if (p >= m || seen[p]) throw ArgumentError("Partition: not a permutation of [m]");
      seen[p] = true;
    }
    bounds_.resize(t + 1);
    for (std::size_t i = 0; i <= t; ++i) bounds_[i] = block_boundary(i, m, t);
  }

  std::size_t rows() const { return perm_.size(); }
  std::size_t block_count() const { return t_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const std::size_t> permutation() const { return perm_; }

  std::span<const std::size_t> block(std::size_t i) const {
    return std::span(perm_).subspan(bounds_[i], bounds_[i + 1] - bounds_[i]);
  }

  RowBlockView view(const SparseMatrix& a, std::size_t i) const {
    return RowBlockView(a, block(i), RowBlockView::Trusted{});
  }

  // floor(i * m / t) without overflow for realistic sizes.
  static std::size_t block_boundary(std::size_t i, std::size_t m, std::size_t t) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(i) * m) / t);
  }

  bool operator==(const Partition& o) const {
    return perm_ == o.perm_ && t_ == o.t_ && seed_ == o.seed_;
  }

private:
  std::vector<std::size_t> perm_;
  std::vector<std::size_t> bounds_;
  std::size_t t_ = 0;
  std::uint64_t seed_ = 0;
};

// pi = Fisher-Yates shuffle of [0, m) under Rng(seed).
inline Partition randomized_partition(std::size_t m, std::size_t t, std::uint64_t seed) {
  if (t < 1 || t > m)
    throw ArgumentError("randomized_partition: t=" + std::to_string(t) + " must lie in [1, m=" +
                        std::to_string(m) + "]");
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(perm), rng);
  return Partition(std::move(perm), t, seed);
}

// Text form: "m t seed", then one line per block of 1-based row indices.
inline void write_partition(std::ostream& os, const Partition& p) {
  os << p.rows() << ' ' << p.block_count() << ' ' << p.seed() << '\n';
  for (std::size_t i = 0; i < p.block_count(); ++i) {
    const auto blk = p.block(i);
    for (std::size_t j = 0; j < blk.size(); ++j) os << (j ? " " : "") << blk[j] + 1;
    os << '\n';
  }
}

inline Partition read_partition(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("partition: missing header line");
  std::istringstream hdr(line);
  std::size_t m = 0, t = 0;
  std::uint64_t seed = 0;
  if (!(hdr >> m >> t >> seed)) throw ParseError("partition: line 1: expected \"m t seed\"");

  std::vector<std::size_t> perm;
  perm.reserve(m);
  for (std::size_t i = 0; i < t; ++i) {
    if (!next_line())
      throw ParseError("partition: expected " + std::to_string(t) + " block lines, got " +
                       std::to_string(i));
    std::istringstream ls(line);
    const std::size_t expected = Partition::block_boundary(i + 1, m, t) -
                                 Partition::block_boundary(i, m, t);
    std::size_t count = 0;
    long long idx;
    while (ls >> idx) {
      if (idx < 1 || static_cast<std::size_t>(idx) > m)
        throw ParseError("partition: line " + std::to_string(lineno) + ": row index " +
                         std::to_string(idx) + " outside [1, " + std::to_string(m) + "]");
      perm.push_back(static_cast<std::size_t>(idx - 1));
      ++count;
    }
    if (!ls.eof())
      throw ParseError("partition: line " + std::to_string(lineno) + ": non-integer token");
    if (count != expected)
      throw ParseError("partition: line " + std::to_string(lineno) + ": block holds " +
                       std::to_string(count) + " rows, floor formula requires " +
                       std::to_string(expected));
  }
  try {
    return Partition(std::move(perm), t, seed);
  } catch (const ArgumentError& e) {
    throw ParseError(std::string("partition: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

// t = ceil(||A||_2^2), clamped to [1, m]. Estimates within 1e-10 relative of an
// integer snap to it so that round-off in the power iteration cannot bump t.
struct BlockCount {
  std::size_t t = 1;
  std::size_t unclamped = 1; // ceil(||A||_2^2) before clamping to m
  double spectral_norm_sq = 0.0;
  bool clamped = false;
  bool estimate_converged = true;
};

inline BlockCount default_block_count_detail(const SparseMatrix& a) {
  const SpectralEstimate est = spectral_norm_sq(a);
  BlockCount out;
  out.spectral_norm_sq = est.value;
  out.estimate_converged = est.converged;
  const double nearest = std::round(est.value);
  const double v = std::abs(est.value - nearest) <= 1e-10 * std::max(1.0, est.value) ? nearest
                                                                                      : est.value;
  double t = std::ceil(v);
  if (t < 1.0) t = 1.0;
  out.unclamped = static_cast<std::size_t>(t);
  if (t > static_cast<double>(a.rows())) {
    t = static_cast<double>(a.rows());
    out.clamped = true;
  }
  out.t = static_cast<std::size_t>(t);
  return out;
}

inline std::size_t default_block_count(const SparseMatrix& a) {
  const BlockCount bc = default_block_count_detail(a);
  if (bc.clamped)
    std::cerr << "warning: ceil(||A||_2^2) = " << bc.unclamped
              << " exceeds m = " << a.rows() << "; using t = m\n";
  return bc.t;
}

// ---------------------------------------------------------------------------

struct BlockSpectrum {
  double sigma_min_sq = 0.0; // smallest of the min(|V|, n) singular values, zero if rank-deficient
  double sigma_max_sq = 0.0;
  double frobenius_sq = 0.0;
};

struct PavingBounds {
  double alpha = 0.0;
  double beta = 0.0;
  double sigma_min_sq = 0.0; // smallest nonzero singular value of A, squared
  double zeta = 0.0;         // min_i ||A_{V_i}||_F^2
  std::vector<BlockSpectrum> blocks;
};

inline BlockSpectrum block_spectrum(const RowBlockView& v) {
  BlockSpectrum out;
  out.frobenius_sq = frobenius_norm_sq(v);
  const Eigen::VectorXd s = singular_values(densify(v));
  if (s.size() > 0) {
    out.sigma_max_sq = s(0) * s(0);
    out.sigma_min_sq = s(s.size() - 1) * s(s.size() - 1);
  }
  return out;
}

// Dense per-block SVDs. alpha/beta are the extreme block values, so the paving
// inequalities hold for every block by construction; they are re-checked
// anyway because downstream bound verification trusts them.
inline PavingBounds paving_bounds(const SparseMatrix& a, const Partition& p,
                                  std::size_t dense_cap = kDefaultDenseCap) {
  if (a.rows() != p.rows())
    throw DimensionError("paving_bounds: partition covers " + std::to_string(p.rows()) +
                         " rows, matrix has " + std::to_string(a.rows()));
  check_dense_cap(a.rows(), a.cols(), dense_cap, "paving_bounds");

  PavingBounds pb;
  pb.alpha = std::numeric_limits<double>::infinity();
  pb.zeta = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.block_count(); ++i) {
    const BlockSpectrum bs = block_spectrum(p.view(a, i));
    pb.alpha = std::min(pb.alpha, bs.sigma_min_sq);
    pb.beta = std::max(pb.beta, bs.sigma_max_sq);
    pb.zeta = std::min(pb.zeta, bs.frobenius_sq);
    pb.blocks.push_back(bs);
  }
  for (const auto& bs : pb.blocks)
    if (!(pb.alpha <= bs.sigma_min_sq && bs.sigma_max_sq <= pb.beta))
      throw Error("paving_bounds: internal inconsistency in block bounds");
  pb.sigma_min_sq = smallest_nonzero_singular_value_sq(a, dense_cap);
  return pb;
}

// ---------------------------------------------------------------------------

struct ConvergenceFactors {
  double sigma_min_sq = 0.0;
  double beta = 0.0;
  std::size_t t = 1;
  std::size_t m = 0;

  double rho_mrbk = 1.0;       // 1 - s/(beta (t-1)); denominator beta t when t = 1
  double rho_mrbk_first = 1.0; // 1 - s/(beta t), the k = 0 step
  double rho_rbk = 1.0;        // 1 - s/(beta m)
  double rho_grbk = 1.0;

  // 1 - (2w - w^2) s / (beta (t-1)); denominator beta t when t = 1.
  double rho_mrabk(double omega) const {
    return 1.0 - relaxation_gain(omega) * sigma_min_sq / (beta * steady_denominator());
  }
  double rho_mrabk_first(double omega) const {
    return 1.0 - relaxation_gain(omega) * sigma_min_sq / (beta * static_cast<double>(t));
  }

  static double relaxation_gain(double omega) { return 2.0 * omega - omega * omega; }

  double steady_denominator() const {
    return t > 1 ? static_cast<double>(t - 1) : static_cast<double>(t);
  }
};

inline ConvergenceFactors convergence_factors(const PavingBounds& bounds, const SparseMatrix& a,
                                              const Partition& p) {
  if (!(bounds.beta > 0.0)) throw ArgumentError("convergence_factors: beta must be positive");
  if (a.rows() != p.rows()) throw DimensionError("convergence_factors: partition/matrix mismatch");

  ConvergenceFactors f;
  f.sigma_min_sq = bounds.sigma_min_sq;
  f.beta = bounds.beta;
  f.t = p.block_count();
  f.m = a.rows();

  const double s = bounds.sigma_min_sq;
  const double beta = bounds.beta;
  const double fro = frobenius_norm_sq(a);
  const double zeta = bounds.zeta;

  f.rho_mrbk = 1.0 - s / (beta * f.steady_denominator());
  f.rho_mrbk_first = 1.0 - s / (beta * static_cast<double>(f.t));
  f.rho_rbk = 1.0 - s / (beta * static_cast<double>(f.m));
  f.rho_grbk = 1.0 - (zeta / 2.0) * (fro / (fro + zeta) + 1.0) * s / (beta * fro);
  return f;
}

} // namespace klab
