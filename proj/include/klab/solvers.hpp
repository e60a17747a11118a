#pragma once

// Kaczmarz-family row-action solvers: selection rules, update rules, and the
// driver loop with relative-solution-error stopping and trace capture.
//
// Every step function comes in two layers. The public `*_step` functions take
// an iterate by value and return the next one, recomputing the residual
// themselves. The `detail::*_update` kernels mutate an iterate in place given
// a residual the caller already holds; the driver uses those so the residual
// is formed exactly once per iteration.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "klab/error.hpp"
#include "klab/partition.hpp"
#include "klab/random.hpp"
#include "klab/sparsela.hpp"

namespace klab {

// ---------------------------------------------------------------------------
// system, method, stopping rule

struct LinearSystem {
  SparseMatrix A;
  DenseVector b;
  std::optional<DenseVector> x_star; // least-norm solution A^+ b, when known
  bool consistent = true;

  void validate() const {
    detail::require_dims(b.size() == A.rows(), "LinearSystem: b must have length m");
    if (x_star) {
      detail::require_dims(x_star->size() == A.cols(), "LinearSystem: x_star must have length n");
      if (consistent) {
        const DenseVector ax = spmv(A, *x_star);
        const double gap = std::sqrt(distance_sq(ax, b));
        if (gap > 1e-8 * norm2(b))
          throw ConsistencyError("consistency check failed: ||A x_star - b|| = " +
                                 std::to_string(gap) + " > 1e-8 ||b||");
      }
    }
  }
};

enum class MethodTag { Kaczmarz, RK, MRK, GRK, RBK, GBK, GRBK, MRBK, MRABK };

inline constexpr MethodTag kAllMethods[] = {MethodTag::Kaczmarz, MethodTag::RK,   MethodTag::MRK,
                                            MethodTag::GRK,      MethodTag::RBK,  MethodTag::GBK,
                                            MethodTag::GRBK,     MethodTag::MRBK, MethodTag::MRABK};

inline std::string_view method_name(MethodTag tag) {
  switch (tag) {
  case MethodTag::Kaczmarz: return "kaczmarz";
  case MethodTag::RK: return "rk";
  case MethodTag::MRK: return "mrk";
  case MethodTag::GRK: return "grk";
  case MethodTag::RBK: return "rbk";
  case MethodTag::GBK: return "gbk";
  case MethodTag::GRBK: return "grbk";
  case MethodTag::MRBK: return "mrbk";
  case MethodTag::MRABK: return "mrabk";
  }
  return "?";
}

inline std::optional<MethodTag> parse_method(std::string_view name) {
  for (auto tag : kAllMethods)
    if (method_name(tag) == name) return tag;
  return std::nullopt;
}

// Methods that iterate over the fixed partition.
inline bool uses_partition(MethodTag tag) {
  return tag == MethodTag::RBK || tag == MethodTag::GRBK || tag == MethodTag::MRBK ||
         tag == MethodTag::MRABK;
}

// Methods whose update applies a block pseudo-inverse through CGLS.
inline bool uses_inner_solve(MethodTag tag) {
  return tag == MethodTag::RBK || tag == MethodTag::GBK || tag == MethodTag::GRBK ||
         tag == MethodTag::MRBK;
}

struct Method {
  MethodTag tag = MethodTag::MRBK;
  std::optional<double> omega;          // MRABK only, in (0, 2)
  std::optional<Partition> partition;   // partition-based methods only
  LsqConfig lsq;

  static Method row_action(MethodTag tag) { return Method{tag, std::nullopt, std::nullopt, {}}; }
  static Method block(MethodTag tag, Partition p, LsqConfig lsq = {}) {
    return Method{tag, std::nullopt, std::move(p), lsq};
  }
  static Method mrabk(Partition p, double omega = 1.0) {
    return Method{MethodTag::MRABK, omega, std::move(p), {}};
  }

  void validate() const {
    if (uses_partition(tag) && !partition)
      throw ArgumentError(std::string(method_name(tag)) + " requires a row partition");
    if ((tag == MethodTag::MRABK) != omega.has_value())
      throw ArgumentError("omega must be given exactly for mrabk");
    if (omega && !(*omega > 0.0 && *omega < 2.0))
      throw ArgumentError("omega must lie in (0, 2), got " + std::to_string(*omega));
    if (uses_inner_solve(tag)) lsq.validate();
  }
};

struct StopRule {
  double rse_tol = 1e-6;
  std::size_t max_iterations = 200000;
  // Relative residual ||b - Ax|| / ||b|| threshold, used only without x_star.
  double residual_tol = 1e-8;

  void validate() const {
    if (!(rse_tol > 0.0)) throw ArgumentError("StopRule: rse_tol must be positive");
    if (max_iterations < 1) throw ArgumentError("StopRule: max_iterations must be >= 1");
    if (!(residual_tol > 0.0)) throw ArgumentError("StopRule: residual_tol must be positive");
  }
};

enum class Termination { Converged, MaxIterations, InnerFailure };

inline std::string_view termination_name(Termination t) {
  switch (t) {
  case Termination::Converged: return "converged";
  case Termination::MaxIterations: return "max_iterations";
  case Termination::InnerFailure: return "inner_failure";
  }
  return "?";
}

struct TracePoint {
  std::size_t iteration = 0;
  double rse = 0.0;
  std::size_t selected = 0; // 0-based row or block index
  double seconds = 0.0;     // cumulative since solve start
};

struct SolveReport {
  MethodTag method = MethodTag::MRBK;
  std::size_t iterations = 0;
  double wall_seconds = 0.0;
  double initial_rse = std::numeric_limits<double>::quiet_NaN();
  double final_rse = std::numeric_limits<double>::quiet_NaN();
  double x_star_norm_sq = std::numeric_limits<double>::quiet_NaN();
  std::vector<TracePoint> trace;
  Termination termination = Termination::MaxIterations;
  DenseVector solution;
};

// ---------------------------------------------------------------------------
// residuals and selection

inline DenseVector residual(const LinearSystem& sys, std::span<const double> x) {
  detail::require_dims(x.size() == sys.A.cols(), "residual: x must have length n");
  detail::require_dims(sys.b.size() == sys.A.rows(), "residual: b must have length m");
  DenseVector r(sys.A.rows());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = sys.b[i] - sys.A.row_dot(i, x);
  return r;
}

namespace detail {

inline void residual_into(const LinearSystem& sys, std::span<const double> x, std::span<double> r) {
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = sys.b[i] - sys.A.row_dot(i, x);
}

// Entry i = sum of r_j^2 over block i, accumulated in block order.
inline void block_norms_into(std::span<const double> r, const Partition& p, std::span<double> out) {
  for (std::size_t i = 0; i < p.block_count(); ++i) {
    double s = 0.0;
    for (auto j : p.block(i)) s += r[j] * r[j];
    out[i] = s;
  }
}

// Round-off guard for the greedy threshold comparisons: a row that ties the
// maximum in exact arithmetic must not be dropped by a last-bit difference.
inline constexpr double kThresholdSlack = 1.0 - 8.0 * std::numeric_limits<double>::epsilon();

} // namespace detail

inline DenseVector block_residual_norms_sq(const LinearSystem& sys, std::span<const double> x,
                                          const Partition& p) {
  detail::require_dims(p.rows() == sys.A.rows(), "block_residual_norms_sq: partition/matrix mismatch");
  const DenseVector r = residual(sys, x);
  DenseVector out(p.block_count());
  detail::block_norms_into(r, p, out);
  return out;
}

// Lowest index attaining the maximum.
inline std::size_t select_max_block(std::span<const double> norms_sq) {
  if (norms_sq.empty()) throw ArgumentError("select_max_block: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < norms_sq.size(); ++i)
    if (norms_sq[i] > norms_sq[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// update kernels

struct StepInfo {
  std::size_t selected = 0;
  double step_size = 1.0; // alpha_k for MRABK
  bool inner_converged = true;
  std::size_t inner_iterations = 0;
  std::vector<std::size_t> row_set; // GBK's selected rows
};

namespace detail {

inline StepInfo selected_only(std::size_t i) {
  StepInfo info;
  info.selected = i;
  return info;
}

inline void project_onto_row(const SparseMatrix& a, std::size_t i, double ri, std::span<double> x) {
  const double nrm = a.row_norms_sq()[i];
  if (nrm == 0.0) throw ArgumentError("row " + std::to_string(i + 1) + " has zero norm");
  a.add_row_scaled(i, ri / nrm, x);
}

// x += A_V^+ r_V
inline StepInfo project_onto_block(const RowBlockView& v, std::span<const double> r,
                                   const LsqConfig& lsq, std::span<double> x) {
  DenseVector rv(v.size());
  const auto idx = v.indices();
  for (std::size_t j = 0; j < idx.size(); ++j) rv[j] = r[idx[j]];
  const LsqResult z = least_squares_apply(v, rv, lsq);
  StepInfo info;
  info.inner_converged = z.converged;
  info.inner_iterations = z.iterations;
  if (z.converged) axpy(1.0, z.z, x);
  return info;
}

inline StepInfo kaczmarz_update(const LinearSystem& sys, std::size_t k, std::span<const double> r,
                                std::span<double> x) {
  const std::size_t i = k % sys.A.rows();
  project_onto_row(sys.A, i, r[i], x);
  return selected_only(i);
}

inline StepInfo mrk_update(const LinearSystem& sys, std::span<const double> r, std::span<double> x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.size(); ++i)
    if (std::abs(r[i]) > std::abs(r[best])) best = i;
  project_onto_row(sys.A, best, r[best], x);
  return selected_only(best);
}

inline StepInfo rk_update(const LinearSystem& sys, std::span<const double> r, Rng& rng,
                          std::span<double> x) {
  const std::size_t i = rng.weighted_index(sys.A.row_norms_sq());
  project_onto_row(sys.A, i, r[i], x);
  return selected_only(i);
}

// Rows passing the greedy threshold of the GRK method.
inline std::vector<std::size_t> grk_candidates(const SparseMatrix& a, std::span<const double> r) {
  const auto norms = a.row_norms_sq();
  const double rr = norm_sq(r);
  double max_ratio = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (norms[i] > 0.0) max_ratio = std::max(max_ratio, r[i] * r[i] / norms[i]);
  const double eps = 0.5 * (max_ratio / rr + 1.0 / frobenius_norm_sq(a));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (norms[i] > 0.0 && r[i] * r[i] >= kThresholdSlack * eps * rr * norms[i]) out.push_back(i);
  return out;
}

inline StepInfo grk_update(const LinearSystem& sys, std::span<const double> r, Rng& rng,
                           std::span<double> x) {
  const auto cand = grk_candidates(sys.A, r);
  std::vector<double> w(cand.size());
  for (std::size_t j = 0; j < cand.size(); ++j) w[j] = r[cand[j]] * r[cand[j]];
  const std::size_t i = cand[rng.weighted_index(w)];
  project_onto_row(sys.A, i, r[i], x);
  return selected_only(i);
}

// eta of the GBK method; requires r != 0.
inline double gbk_eta(const SparseMatrix& a, std::span<const double> r) {
  const auto norms = a.row_norms_sq();
  double max_ratio = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (norms[i] > 0.0) max_ratio = std::max(max_ratio, r[i] * r[i] / norms[i]);
  return 0.5 + 0.5 * (norm_sq(r) / frobenius_norm_sq(a)) / max_ratio;
}

inline std::vector<std::size_t> gbk_row_set(const SparseMatrix& a, std::span<const double> r) {
  const auto norms = a.row_norms_sq();
  double max_ratio = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (norms[i] > 0.0) max_ratio = std::max(max_ratio, r[i] * r[i] / norms[i]);
  const double threshold = gbk_eta(a, r) * max_ratio;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (norms[i] > 0.0 && r[i] * r[i] / norms[i] >= kThresholdSlack * threshold) out.push_back(i);
  return out;
}

inline StepInfo gbk_update(const LinearSystem& sys, std::span<const double> r, const LsqConfig& lsq,
                           std::span<double> x) {
  std::vector<std::size_t> rows = gbk_row_set(sys.A, r);
  StepInfo info = project_onto_block(RowBlockView(sys.A, rows, RowBlockView::Trusted{}), r, lsq, x);
  // Report the row attaining the maximum ratio as the representative index.
  const auto norms = sys.A.row_norms_sq();
  info.selected = *std::max_element(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    const double ra = r[a] * r[a] / norms[a], rb = r[b] * r[b] / norms[b];
    return ra < rb || (ra == rb && a > b);
  });
  info.row_set = std::move(rows);
  return info;
}

inline StepInfo rbk_update(const LinearSystem& sys, std::span<const double> r, const Partition& p,
                           Rng& rng, const LsqConfig& lsq, std::span<double> x) {
  const std::size_t i = rng.uniform_index(p.block_count());
  StepInfo info = project_onto_block(p.view(sys.A, i), r, lsq, x);
  info.selected = i;
  return info;
}

// Blocks passing the greedy threshold of the GRBK method, given block
// residual norms and block Frobenius norms.
inline std::vector<std::size_t> grbk_candidates(std::span<const double> block_res,
                                                std::span<const double> block_fro,
                                                double fro_total) {
  double rr = 0.0, max_ratio = 0.0;
  for (std::size_t i = 0; i < block_res.size(); ++i) {
    rr += block_res[i];
    if (block_fro[i] > 0.0) max_ratio = std::max(max_ratio, block_res[i] / block_fro[i]);
  }
  const double eps = 0.5 * (max_ratio / rr + 1.0 / fro_total);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < block_res.size(); ++i)
    if (block_fro[i] > 0.0 && block_res[i] >= kThresholdSlack * eps * rr * block_fro[i])
      out.push_back(i);
  return out;
}

inline StepInfo grbk_update(const LinearSystem& sys, std::span<const double> r, const Partition& p,
                            std::span<const double> block_res, std::span<const double> block_fro,
                            Rng& rng, const LsqConfig& lsq, std::span<double> x) {
  const auto cand = grbk_candidates(block_res, block_fro, frobenius_norm_sq(sys.A));
  std::vector<double> w(cand.size());
  for (std::size_t j = 0; j < cand.size(); ++j) w[j] = block_res[cand[j]];
  const std::size_t i = cand[rng.weighted_index(w)];
  StepInfo info = project_onto_block(p.view(sys.A, i), r, lsq, x);
  info.selected = i;
  return info;
}

inline StepInfo mrbk_update(const LinearSystem& sys, std::span<const double> r, const Partition& p,
                            std::span<const double> block_res, const LsqConfig& lsq,
                            std::span<double> x) {
  const std::size_t i = select_max_block(block_res);
  StepInfo info = project_onto_block(p.view(sys.A, i), r, lsq, x);
  info.selected = i;
  return info;
}

// x += alpha_k * g / ||A_V||_F^2 with g = A_V^T r_V and
// alpha_k = omega ||r_V||^2 ||A_V||_F^2 / ||g||^2.
inline StepInfo mrabk_update(const LinearSystem& sys, std::span<const double> r, const Partition& p,
                             std::span<const double> block_res, double omega, std::span<double> x) {
  const std::size_t i = select_max_block(block_res);
  const RowBlockView v = p.view(sys.A, i);
  StepInfo info = selected_only(i);
  info.step_size = 0.0;
  const double rv_sq = block_res[i];
  if (rv_sq == 0.0) return info;

  DenseVector rv(v.size());
  const auto idx = v.indices();
  for (std::size_t j = 0; j < idx.size(); ++j) rv[j] = r[idx[j]];
  const DenseVector g = spmv_transpose_block(v, rv);
  const double g_sq = norm_sq(g);
  if (g_sq == 0.0)
    throw ConsistencyError("mrabk: A_V^T r_V = 0 with nonzero block residual; system is inconsistent");
  const double fro = frobenius_norm_sq(v);
  info.step_size = omega * rv_sq * fro / g_sq;
  axpy(info.step_size / fro, g, x);
  return info;
}

} // namespace detail

// ---------------------------------------------------------------------------
// public single steps

struct StepResult {
  DenseVector x;
  StepInfo info;
};

inline StepResult classic_kaczmarz_step(const LinearSystem& sys, DenseVector x, std::size_t k) {
  const DenseVector r = residual(sys, x);
  StepInfo info = detail::kaczmarz_update(sys, k, r, x);
  return {std::move(x), std::move(info)};
}

inline StepResult mrk_step(const LinearSystem& sys, DenseVector x) {
  const DenseVector r = residual(sys, x);
  StepInfo info = detail::mrk_update(sys, r, x);
  return {std::move(x), std::move(info)};
}

inline StepResult rk_step(const LinearSystem& sys, DenseVector x, Rng& rng) {
  const DenseVector r = residual(sys, x);
  StepInfo info = detail::rk_update(sys, r, rng, x);
  return {std::move(x), std::move(info)};
}

inline StepResult grk_step(const LinearSystem& sys, DenseVector x, Rng& rng) {
  const DenseVector r = residual(sys, x);
  if (norm_sq(r) == 0.0) return {std::move(x), {}};
  StepInfo info = detail::grk_update(sys, r, rng, x);
  return {std::move(x), std::move(info)};
}

inline StepResult gbk_step(const LinearSystem& sys, DenseVector x, const LsqConfig& lsq = {}) {
  const DenseVector r = residual(sys, x);
  if (norm_sq(r) == 0.0) return {std::move(x), {}};
  StepInfo info = detail::gbk_update(sys, r, lsq, x);
  return {std::move(x), std::move(info)};
}

inline StepResult rbk_step(const LinearSystem& sys, DenseVector x, const Partition& p, Rng& rng,
                           const LsqConfig& lsq = {}) {
  detail::require_dims(p.rows() == sys.A.rows(), "rbk_step: partition/matrix mismatch");
  const DenseVector r = residual(sys, x);
  StepInfo info = detail::rbk_update(sys, r, p, rng, lsq, x);
  return {std::move(x), std::move(info)};
}

inline StepResult grbk_step(const LinearSystem& sys, DenseVector x, const Partition& p, Rng& rng,
                            const LsqConfig& lsq = {}) {
  detail::require_dims(p.rows() == sys.A.rows(), "grbk_step: partition/matrix mismatch");
  const DenseVector r = residual(sys, x);
  if (norm_sq(r) == 0.0) return {std::move(x), {}};
  DenseVector res(p.block_count()), fro(p.block_count());
  detail::block_norms_into(r, p, res);
  for (std::size_t i = 0; i < p.block_count(); ++i) fro[i] = frobenius_norm_sq(p.view(sys.A, i));
  StepInfo info = detail::grbk_update(sys, r, p, res, fro, rng, lsq, x);
  return {std::move(x), std::move(info)};
}

inline StepResult mrbk_step(const LinearSystem& sys, DenseVector x, const Partition& p,
                            const LsqConfig& lsq = {}) {
  detail::require_dims(p.rows() == sys.A.rows(), "mrbk_step: partition/matrix mismatch");
  const DenseVector r = residual(sys, x);
  DenseVector res(p.block_count());
  detail::block_norms_into(r, p, res);
  StepInfo info = detail::mrbk_update(sys, r, p, res, lsq, x);
  return {std::move(x), std::move(info)};
}

inline StepResult mrabk_step(const LinearSystem& sys, DenseVector x, const Partition& p,
                             double omega) {
  detail::require_dims(p.rows() == sys.A.rows(), "mrabk_step: partition/matrix mismatch");
  if (!(omega > 0.0 && omega < 2.0)) throw ArgumentError("mrabk_step: omega must lie in (0, 2)");
  const DenseVector r = residual(sys, x);
  DenseVector res(p.block_count());
  detail::block_norms_into(r, p, res);
  StepInfo info = detail::mrabk_update(sys, r, p, res, omega, x);
  return {std::move(x), std::move(info)};
}

// ---------------------------------------------------------------------------
// driver

// Called after every accepted step with the iteration count and new iterate.
using IterateObserver = std::function<void(std::size_t, std::span<const double>)>;

// Iterates from x_0 = 0 until RSE < stop.rse_tol (or, without x_star, the
// relative residual drops below stop.residual_tol), the iteration cap is hit,
// or an inner block solve fails. Randomized methods draw from Rng(seed).
inline SolveReport solve(const LinearSystem& sys, const Method& method, const StopRule& stop = {},
                         std::uint64_t seed = 0, const IterateObserver& observer = {}) {
  sys.validate();
  method.validate();
  stop.validate();
  const SparseMatrix& a = sys.A;
  if (method.partition) detail::require_dims(method.partition->rows() == a.rows(),
                                             "solve: partition/matrix mismatch");

  const std::size_t m = a.rows(), n = a.cols();
  SolveReport rep;
  rep.method = method.tag;

  DenseVector x(n, 0.0), r(m);
  Rng rng(seed);

  const bool have_star = sys.x_star.has_value();
  double star_sq = 0.0;
  if (have_star) {
    star_sq = norm_sq(*sys.x_star);
    rep.x_star_norm_sq = star_sq;
  }
  auto rse = [&]() {
    const double d = distance_sq(x, *sys.x_star);
    return star_sq > 0.0 ? d / star_sq : d;
  };
  const double b_norm = norm2(sys.b);

  const Partition* part = method.partition ? &*method.partition : nullptr;
  DenseVector block_res(part ? part->block_count() : 0);
  DenseVector block_fro;
  if (method.tag == MethodTag::GRBK) {
    block_fro.resize(part->block_count());
    for (std::size_t i = 0; i < part->block_count(); ++i)
      block_fro[i] = frobenius_norm_sq(part->view(a, i));
  }

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto elapsed = [&]() { return std::chrono::duration<double>(clock::now() - t0).count(); };

  double current = have_star ? rse() : std::numeric_limits<double>::quiet_NaN();
  rep.initial_rse = current;
  std::size_t k = 0;
  for (;;) {
    if (have_star && current < stop.rse_tol) {
      rep.termination = Termination::Converged;
      break;
    }
    detail::residual_into(sys, x, r);
    const double r_norm = norm2(r);
    if (!have_star && r_norm < stop.residual_tol * (b_norm > 0.0 ? b_norm : 1.0)) {
      rep.termination = Termination::Converged;
      break;
    }
    if (k >= stop.max_iterations) {
      rep.termination = Termination::MaxIterations;
      break;
    }
    if (r_norm == 0.0) {
      // x solves the system exactly; further steps are no-ops.
      rep.termination = Termination::Converged;
      break;
    }
    if (part) detail::block_norms_into(r, *part, block_res);

    StepInfo info;
    switch (method.tag) {
    case MethodTag::Kaczmarz: info = detail::kaczmarz_update(sys, k, r, x); break;
    case MethodTag::RK: info = detail::rk_update(sys, r, rng, x); break;
    case MethodTag::MRK: info = detail::mrk_update(sys, r, x); break;
    case MethodTag::GRK: info = detail::grk_update(sys, r, rng, x); break;
    case MethodTag::GBK: info = detail::gbk_update(sys, r, method.lsq, x); break;
    case MethodTag::RBK: info = detail::rbk_update(sys, r, *part, rng, method.lsq, x); break;
    case MethodTag::GRBK:
      info = detail::grbk_update(sys, r, *part, block_res, block_fro, rng, method.lsq, x);
      break;
    case MethodTag::MRBK: info = detail::mrbk_update(sys, r, *part, block_res, method.lsq, x); break;
    case MethodTag::MRABK:
      info = detail::mrabk_update(sys, r, *part, block_res, *method.omega, x);
      break;
    }
    if (!info.inner_converged) {
      rep.termination = Termination::InnerFailure;
      break;
    }
    ++k;
    if (have_star) current = rse();
    rep.trace.push_back({k, current, info.selected, elapsed()});
    if (observer) observer(k, x);
  }
  rep.wall_seconds = elapsed();
  rep.iterations = k;
  rep.final_rse = current;
  rep.solution = std::move(x);
  return rep;
}

} // namespace klab
