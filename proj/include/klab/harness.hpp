#pragma once

// Experiment reproduction: test-matrix generation and preprocessing,
// consistent-system construction, repetition-averaged benchmarking,
// per-step theorem-bound checks, and report/trace output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "klab/error.hpp"
#include "klab/matrix_market.hpp"
#include "klab/partition.hpp"
#include "klab/random.hpp"
#include "klab/solvers.hpp"
#include "klab/sparsela.hpp"

namespace klab {

// ---------------------------------------------------------------------------
// test matrices

// round(density * m * n) distinct positions drawn without replacement (Floyd's
// algorithm), standard normal values drawn in row-major position order.
inline SparseMatrix generate_sparse_gaussian(std::size_t m, std::size_t n, double density,
                                             std::uint64_t seed) {
  if (!(density > 0.0 && density <= 1.0))
    throw ArgumentError("generate_sparse_gaussian: density must lie in (0, 1]");
  if (m == 0 || n == 0) throw ArgumentError("generate_sparse_gaussian: dimensions must be positive");
  const std::uint64_t total = static_cast<std::uint64_t>(m) * n;
  const auto k = static_cast<std::uint64_t>(
      std::min<double>(static_cast<double>(total), std::llround(density * static_cast<double>(total))));

  Rng rng(seed);
  std::vector<std::uint64_t> positions;
  if (k == total) {
    positions.resize(total);
    std::iota(positions.begin(), positions.end(), std::uint64_t{0});
  } else {
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(k) * 2);
    for (std::uint64_t j = total - k; j < total; ++j) {
      const std::uint64_t pick = rng.uniform_index(j + 1);
      if (!chosen.insert(pick).second) chosen.insert(j);
    }
    positions.assign(chosen.begin(), chosen.end());
    std::sort(positions.begin(), positions.end());
  }

  std::vector<std::size_t> offsets(m + 1, 0), cols;
  std::vector<double> vals;
  cols.reserve(positions.size());
  vals.reserve(positions.size());
  for (auto p : positions) {
    ++offsets[p / n + 1];
    cols.push_back(static_cast<std::size_t>(p % n));
    vals.push_back(rng.normal());
  }
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  return SparseMatrix(m, n, std::move(offsets), std::move(cols), std::move(vals));
}

// The Trefethen test matrix of order n: the i-th prime on the diagonal and
// ones wherever |i - j| is a power of two.
inline SparseMatrix trefethen_matrix(std::size_t n) {
  if (n == 0) throw ArgumentError("trefethen_matrix: order must be positive");
  std::vector<double> primes;
  primes.reserve(n);
  for (std::uint64_t c = 2; primes.size() < n; ++c) {
    bool prime = true;
    for (double p : primes) {
      const auto q = static_cast<std::uint64_t>(p);
      if (q * q > c) break;
      if (c % q == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(static_cast<double>(c));
  }
  std::vector<Triplet> trips;
  for (std::size_t i = 0; i < n; ++i) {
    trips.push_back({i, i, primes[i]});
    for (std::size_t d = 1; d < n; d *= 2) {
      if (i >= d) trips.push_back({i, i - d, 1.0});
      if (i + d < n) trips.push_back({i, i + d, 1.0});
    }
  }
  return csr_from_triplets(std::move(trips), n, n);
}

// Drops zero rows and scales the rest to unit Euclidean norm. Rows already
// within 1e-14 of unit squared norm are left untouched, which makes the
// operation bitwise idempotent.
inline SparseMatrix normalize_rows(const SparseMatrix& a) {
  std::vector<std::size_t> offsets{0}, cols;
  std::vector<double> vals;
  cols.reserve(a.nnz());
  vals.reserve(a.nnz());
  std::size_t kept = 0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto row = a.row(i);
    long double acc = 0.0L;
    for (double v : row.values) acc += static_cast<long double>(v) * v;
    if (acc == 0.0L) continue;
    const bool unit = std::abs(a.row_norms_sq()[i] - 1.0) <= 1e-14;
    const long double scale = unit ? 1.0L : 1.0L / std::sqrt(acc);
    for (std::size_t k = 0; k < row.cols.size(); ++k) {
      cols.push_back(row.cols[k]);
      vals.push_back(unit ? row.values[k] : static_cast<double>(row.values[k] * scale));
    }
    offsets.push_back(cols.size());
    ++kept;
  }
  if (kept == 0) throw ArgumentError("normalize_rows: every row is zero");
  return SparseMatrix(kept, a.cols(), std::move(offsets), std::move(cols), std::move(vals));
}

inline double density(const SparseMatrix& a) {
  return static_cast<double>(a.nnz()) / (static_cast<double>(a.rows()) * static_cast<double>(a.cols()));
}

// ---------------------------------------------------------------------------
// least-norm solutions

struct MinNormOptions {
  std::size_t dense_cap = kDefaultDenseCap;
  // Above the cap, fall back to CGLS on the whole system.
  bool allow_iterative_fallback = true;
};

// Computes x = A^+ b for many right-hand sides of one matrix. At diagnostic
// sizes this holds a thin SVD (singular values below 1e-12 sigma_max treated
// as zero); above the cap it runs CGLS over all rows to 1e-12.
class MinNormSolver {
public:
  MinNormSolver(const SparseMatrix& a, MinNormOptions opts = {}) : a_(&a) {
    if (std::min(a.rows(), a.cols()) <= opts.dense_cap) {
      svd_ = std::make_unique<Eigen::BDCSVD<Eigen::MatrixXd>>(densify(a),
                                                             Eigen::ComputeThinU | Eigen::ComputeThinV);
      svd_->setThreshold(kSingularZeroRel);
    } else if (!opts.allow_iterative_fallback) {
      check_dense_cap(a.rows(), a.cols(), opts.dense_cap, "MinNormSolver");
    }
    all_rows_.resize(a.rows());
    std::iota(all_rows_.begin(), all_rows_.end(), std::size_t{0});
  }

  bool dense() const { return svd_ != nullptr; }

  DenseVector solve(std::span<const double> b) const {
    detail::require_dims(b.size() == a_->rows(), "MinNormSolver: b must have length m");
    if (svd_) {
      const Eigen::Map<const Eigen::VectorXd> bm(b.data(), static_cast<Eigen::Index>(b.size()));
      const Eigen::VectorXd x = svd_->solve(bm);
      return DenseVector(x.data(), x.data() + x.size());
    }
    const RowBlockView all(*a_, all_rows_, RowBlockView::Trusted{});
    LsqConfig cfg;
    cfg.rel_tolerance = 1e-12;
    cfg.max_inner_iterations = 20 * std::max(a_->rows(), a_->cols());
    LsqResult r = least_squares_apply(all, b, cfg);
    return std::move(r.z);
  }

  // sigma_max / sigma_min over all min(m, n) singular values; infinite when
  // rank-deficient. NaN without the dense factorization.
  double condition_number() const {
    if (!svd_) return std::numeric_limits<double>::quiet_NaN();
    const auto& s = svd_->singularValues();
    const double smin = s(s.size() - 1);
    if (smin <= kSingularZeroRel * s(0)) return std::numeric_limits<double>::infinity();
    return s(0) / smin;
  }

private:
  const SparseMatrix* a_;
  std::unique_ptr<Eigen::BDCSVD<Eigen::MatrixXd>> svd_;
  std::vector<std::size_t> all_rows_;
};

// b = A x* with x* ~ N(0, I) from Rng(seed); x_star = A^+ b.
inline LinearSystem make_consistent_system(const SparseMatrix& a, const MinNormSolver& solver,
                                           std::uint64_t seed) {
  Rng rng(seed);
  const DenseVector x_gen = rng.normal_vector(a.cols());
  LinearSystem sys{a, spmv(a, x_gen), std::nullopt, true};
  sys.x_star = solver.solve(sys.b);
  return sys;
}

inline LinearSystem make_consistent_system(const SparseMatrix& a, std::uint64_t seed,
                                           MinNormOptions opts = {}) {
  const MinNormSolver solver(a, opts);
  return make_consistent_system(a, solver, seed);
}

// ---------------------------------------------------------------------------
// experiments

struct GaussianSource {
  std::size_t m = 0, n = 0;
  double density = 0.01;
  std::uint64_t seed = 0;
};

struct MatrixMarketSource {
  std::filesystem::path path;
};

using MatrixSource = std::variant<GaussianSource, MatrixMarketSource>;

struct MethodSpec {
  MethodTag tag = MethodTag::MRBK;
  double omega = 1.0; // MRABK only

  std::string label() const {
    std::string s(method_name(tag));
    if (tag == MethodTag::MRABK && omega != 1.0) {
      std::ostringstream os;
      os << "(w=" << omega << ")";
      s += os.str();
    }
    return s;
  }
};

struct ExperimentSpec {
  MatrixSource source;
  std::vector<MethodSpec> methods;
  std::size_t repetitions = 20;
  StopRule stop;
  std::uint64_t partition_seed = 0;
  std::uint64_t base_seed = 0;
  std::optional<std::size_t> block_count; // unset: ceil(||A||_2^2)
  bool normalize = true;
  LsqConfig lsq;
  MinNormOptions min_norm;

  void validate() const {
    if (repetitions < 1) throw ArgumentError("repetitions must be >= 1");
    if (methods.empty()) throw ArgumentError("at least one method is required");
    if (const auto* g = std::get_if<GaussianSource>(&source)) {
      if (!(g->density > 0.0 && g->density <= 1.0)) throw ArgumentError("density must lie in (0, 1]");
      if (g->m == 0 || g->n == 0) throw ArgumentError("matrix dimensions must be positive");
    }
    for (const auto& ms : methods)
      if (ms.tag == MethodTag::MRABK && !(ms.omega > 0.0 && ms.omega < 2.0))
        throw ArgumentError("omega must lie in (0, 2)");
    stop.validate();
    lsq.validate();
  }
};

struct MatrixInfo {
  std::string name;
  std::size_t m = 0, n = 0, nnz = 0;
  double density = 0.0;
  double spectral_norm_sq = 0.0;
  double condition = std::numeric_limits<double>::quiet_NaN();
  std::size_t t = 1;
};

struct MethodResult {
  MethodSpec spec;
  double mean_iterations = 0.0;
  double mean_seconds = 0.0;
  double mean_final_rse = 0.0;
  std::vector<std::size_t> iterations;
  std::vector<double> seconds;
  std::vector<Termination> terminations;
  std::size_t failures = 0; // repetitions ending in inner_failure
};

struct ExperimentResult {
  MatrixInfo matrix;
  std::vector<MethodResult> methods;
  std::optional<double> su1; // CPU(MRK) / CPU(MRBK)
  std::optional<double> su2; // CPU(GRBK) / CPU(MRBK)
  std::optional<double> su3; // CPU(MRBK) / CPU(MRABK)

  const MethodResult* find(MethodTag tag) const {
    for (const auto& r : methods)
      if (r.spec.tag == tag) return &r;
    return nullptr;
  }
};

// The preprocessed matrix, partition, and systems shared by every method of
// one experiment.
struct ExperimentSetup {
  SparseMatrix A;
  MatrixInfo info;
  Partition partition;
  std::vector<LinearSystem> systems; // one per repetition
};

inline SparseMatrix load_source(const MatrixSource& src, std::string* name = nullptr) {
  if (const auto* g = std::get_if<GaussianSource>(&src)) {
    if (name) {
      std::ostringstream os;
      os << "gaussian " << g->m << "x" << g->n << " d=" << g->density << " seed=" << g->seed;
      *name = os.str();
    }
    return generate_sparse_gaussian(g->m, g->n, g->density, g->seed);
  }
  const auto& mm = std::get<MatrixMarketSource>(src);
  if (name) *name = mm.path.filename().string();
  return read_matrix_market(mm.path);
}

inline std::uint64_t repetition_seed(std::uint64_t base, std::size_t rep) {
  return base ^ static_cast<std::uint64_t>(rep);
}

inline ExperimentSetup prepare_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentSetup s;
  SparseMatrix raw = load_source(spec.source, &s.info.name);
  s.A = spec.normalize ? normalize_rows(raw) : std::move(raw);

  const BlockCount bc = default_block_count_detail(s.A);
  s.info.m = s.A.rows();
  s.info.n = s.A.cols();
  s.info.nnz = s.A.nnz();
  s.info.density = density(s.A);
  s.info.spectral_norm_sq = bc.spectral_norm_sq;
  s.info.t = spec.block_count ? *spec.block_count : bc.t;
  if (s.info.t > s.A.rows())
    throw ArgumentError("block count " + std::to_string(s.info.t) + " exceeds m = " +
                        std::to_string(s.A.rows()));
  s.partition = randomized_partition(s.A.rows(), s.info.t, spec.partition_seed);

  const MinNormSolver solver(s.A, spec.min_norm);
  s.info.condition = solver.condition_number();
  for (std::size_t r = 0; r < spec.repetitions; ++r)
    s.systems.push_back(make_consistent_system(s.A, solver, repetition_seed(spec.base_seed, r)));
  return s;
}

inline Method make_method(const MethodSpec& ms, const Partition& p, const LsqConfig& lsq) {
  Method m{ms.tag, std::nullopt, std::nullopt, lsq};
  if (uses_partition(ms.tag)) m.partition = p;
  if (ms.tag == MethodTag::MRABK) m.omega = ms.omega;
  return m;
}

// Runs all repetitions of one method before moving to the next; only the
// solve loop is timed.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, const ExperimentSetup& setup) {
  ExperimentResult res;
  res.matrix = setup.info;
  for (const auto& ms : spec.methods) {
    const Method method = make_method(ms, setup.partition, spec.lsq);
    MethodResult mr;
    mr.spec = ms;
    double it_sum = 0.0, sec_sum = 0.0, rse_sum = 0.0;
    for (std::size_t r = 0; r < setup.systems.size(); ++r) {
      const SolveReport rep = solve(setup.systems[r], method, spec.stop, repetition_seed(spec.base_seed, r));
      mr.iterations.push_back(rep.iterations);
      mr.seconds.push_back(rep.wall_seconds);
      mr.terminations.push_back(rep.termination);
      if (rep.termination == Termination::InnerFailure) ++mr.failures;
      it_sum += static_cast<double>(rep.iterations);
      sec_sum += rep.wall_seconds;
      rse_sum += rep.final_rse;
    }
    const auto count = static_cast<double>(setup.systems.size());
    mr.mean_iterations = it_sum / count;
    mr.mean_seconds = sec_sum / count;
    mr.mean_final_rse = rse_sum / count;
    res.methods.push_back(std::move(mr));
  }
  const auto* mrk = res.find(MethodTag::MRK);
  const auto* grbk = res.find(MethodTag::GRBK);
  const auto* mrbk = res.find(MethodTag::MRBK);
  const auto* mrabk = res.find(MethodTag::MRABK);
  if (mrk && mrbk) res.su1 = mrk->mean_seconds / mrbk->mean_seconds;
  if (grbk && mrbk) res.su2 = grbk->mean_seconds / mrbk->mean_seconds;
  if (mrbk && mrabk) res.su3 = mrbk->mean_seconds / mrabk->mean_seconds;
  return res;
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  return run_experiment(spec, prepare_experiment(spec));
}

// ---------------------------------------------------------------------------
// theorem bounds

struct BoundCheck {
  double first_factor = 1.0;  // applies to the k = 0 step
  double factor = 1.0;        // applies to every later step
  double max_ratio = 0.0;     // largest observed ||e_{k+1}||^2 / ||e_k||^2
  double max_excess = -std::numeric_limits<double>::infinity(); // max of ratio - applicable factor
  std::size_t steps_checked = 0;
  std::optional<std::size_t> first_violation; // step index k of the first failing ratio
  bool pass = true;
};

// Compares every per-step squared-error ratio of an MRBK or MRABK run against
// the contraction factor for that step. Steps whose starting error is below
// 1e-20 are skipped to avoid 0/0 at convergence.
inline BoundCheck verify_theorem_bounds(const SolveReport& report, const PavingBounds& bounds,
                                        const Method& method, double slack = 1e-10) {
  if (std::isnan(report.x_star_norm_sq) || std::isnan(report.initial_rse))
    throw ArgumentError("verify_theorem_bounds: the solve had no x_star");
  if (method.tag != MethodTag::MRBK && method.tag != MethodTag::MRABK)
    throw ArgumentError("verify_theorem_bounds: bounds exist for mrbk and mrabk only");
  if (!method.partition) throw ArgumentError("verify_theorem_bounds: method has no partition");
  if (!(bounds.beta > 0.0)) throw ArgumentError("verify_theorem_bounds: beta must be positive");

  ConvergenceFactors f;
  f.sigma_min_sq = bounds.sigma_min_sq;
  f.beta = bounds.beta;
  f.t = method.partition->block_count();
  const double gain = method.tag == MethodTag::MRABK ? ConvergenceFactors::relaxation_gain(*method.omega)
                                                     : 1.0;
  BoundCheck out;
  out.first_factor = 1.0 - gain * f.sigma_min_sq / (f.beta * static_cast<double>(f.t));
  out.factor = 1.0 - gain * f.sigma_min_sq / (f.beta * f.steady_denominator());

  const double scale = report.x_star_norm_sq > 0.0 ? report.x_star_norm_sq : 1.0;
  double prev = report.initial_rse * scale;
  for (std::size_t k = 0; k < report.trace.size(); ++k) {
    const double next = report.trace[k].rse * scale;
    if (prev > 1e-20) {
      const double ratio = next / prev;
      const double bound = k == 0 ? out.first_factor : out.factor;
      ++out.steps_checked;
      out.max_ratio = std::max(out.max_ratio, ratio);
      out.max_excess = std::max(out.max_excess, ratio - bound);
      if (ratio > bound + slack && !out.first_violation) {
        out.first_violation = k;
        out.pass = false;
      }
    }
    prev = next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// output

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline void finish_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

} // namespace detail

// Columns: iteration, rse, selected_index (1-based), cumulative_seconds.
inline void write_trace_csv(std::ostream& os, const SolveReport& report) {
  os << "iteration,rse,selected_index,cumulative_seconds\n";
  for (const auto& p : report.trace)
    os << p.iteration << ',' << detail::fmt_g17(p.rse) << ',' << p.selected + 1 << ','
       << detail::fmt_g17(p.seconds) << '\n';
}

inline void write_trace_csv(const std::filesystem::path& path, const SolveReport& report) {
  auto out = detail::open_out(path);
  write_trace_csv(out, report);
  detail::finish_out(out, path);
}

inline std::vector<TracePoint> read_trace_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "iteration,rse,selected_index,cumulative_seconds")
    throw ParseError("trace csv: missing or unexpected header");
  std::vector<TracePoint> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[4];
    for (auto& s : f)
      if (!std::getline(ls, s, ','))
        throw ParseError("trace csv: line " + std::to_string(lineno) + ": expected 4 fields");
    try {
      const std::size_t sel = std::stoull(f[2]);
      if (sel < 1) throw ParseError("trace csv: selected_index is 1-based");
      out.push_back({std::stoull(f[0]), std::stod(f[1]), sel - 1, std::stod(f[3])});
    } catch (const std::logic_error&) {
      throw ParseError("trace csv: line " + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

// Plain-text table laid out like the published tables: one IT/CPU row pair
// per method, then the speed-up rows.
inline void write_report_text(std::ostream& os, const ExperimentResult& r) {
  const auto& mi = r.matrix;
  os << "matrix      " << mi.name << '\n';
  os << "m x n       " << mi.m << " x " << mi.n << '\n';
  os << "nnz         " << mi.nnz << '\n';
  os << std::fixed << std::setprecision(2);
  os << "density     " << mi.density * 100.0 << "%\n";
  os << "||A||_2^2   " << mi.spectral_norm_sq << '\n';
  os << std::scientific << std::setprecision(2);
  os << "cond(A)     " << mi.condition << '\n';
  os << std::defaultfloat;
  os << "blocks t    " << mi.t << "\n\n";
  for (const auto& m : r.methods) {
    std::string label = m.spec.label();
    for (auto& c : label) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    os << std::left << std::setw(16) << label << std::setw(5) << "IT" << std::right << std::fixed
       << std::setprecision(1) << std::setw(12) << m.mean_iterations << '\n';
    os << std::left << std::setw(16) << "" << std::setw(5) << "CPU" << std::right << std::setprecision(4)
       << std::setw(12) << m.mean_seconds;
    if (m.failures) os << "   (" << m.failures << " inner failures)";
    os << '\n';
  }
  os << std::setprecision(2);
  auto su = [&](const char* name, const std::optional<double>& v) {
    if (v) os << std::left << std::setw(21) << name << std::right << std::setw(12) << *v << '\n';
  };
  su("SU1", r.su1);
  su("SU2", r.su2);
  su("SU3", r.su3);
  os << std::defaultfloat;
}

// Long-format CSV: group,field,value. Groups are "matrix", one per method
// label, and "speedup".
inline void write_report_csv(std::ostream& os, const ExperimentResult& r) {
  using detail::fmt_g17;
  const auto& mi = r.matrix;
  os << "group,field,value\n";
  os << "matrix,m," << mi.m << '\n';
  os << "matrix,n," << mi.n << '\n';
  os << "matrix,nnz," << mi.nnz << '\n';
  os << "matrix,density," << fmt_g17(mi.density) << '\n';
  os << "matrix,spectral_norm_sq," << fmt_g17(mi.spectral_norm_sq) << '\n';
  os << "matrix,cond," << fmt_g17(mi.condition) << '\n';
  os << "matrix,t," << mi.t << '\n';
  for (const auto& m : r.methods) {
    const std::string g = m.spec.label();
    os << g << ",it," << fmt_g17(m.mean_iterations) << '\n';
    os << g << ",cpu," << fmt_g17(m.mean_seconds) << '\n';
    os << g << ",final_rse," << fmt_g17(m.mean_final_rse) << '\n';
    os << g << ",repetitions," << m.iterations.size() << '\n';
    os << g << ",inner_failures," << m.failures << '\n';
  }
  if (r.su1) os << "speedup,SU1," << fmt_g17(*r.su1) << '\n';
  if (r.su2) os << "speedup,SU2," << fmt_g17(*r.su2) << '\n';
  if (r.su3) os << "speedup,SU3," << fmt_g17(*r.su3) << '\n';
}

// Writes the text table to `path` and its CSV twin next to it with the
// extension replaced by ".csv".
inline void write_report(const std::filesystem::path& path, const ExperimentResult& r) {
  if (path.extension() == ".csv")
    throw ArgumentError("write_report: the text report path must not end in .csv");
  auto text = detail::open_out(path);
  write_report_text(text, r);
  detail::finish_out(text, path);
  auto csv_path = path;
  csv_path.replace_extension(".csv");
  auto csv = detail::open_out(csv_path);
  write_report_csv(csv, r);
  detail::finish_out(csv, csv_path);
}

} // namespace klab
