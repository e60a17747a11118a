#pragma once

// Command-line surface: `klab gen|solve|bench|paving|verify`.
//
// parse_args turns argv into a RunPlan without touching the filesystem or
// the environment; execute runs a plan and maps failures onto exit codes.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "klab/error.hpp"
#include "klab/harness.hpp"
#include "klab/matrix_market.hpp"
#include "klab/partition.hpp"
#include "klab/solvers.hpp"
#include "klab/sparsela.hpp"

namespace klab::cli {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kIo = 3,
  kInnerFailure = 4,
  kVerificationFailure = 5,
};

class UsageError : public Error {
public:
  using Error::Error;
};

enum class Command { Gen, Solve, Bench, Paving, Verify };

struct RunPlan {
  Command command = Command::Solve;
  std::optional<MatrixSource> source;
  std::vector<MethodSpec> methods;
  std::size_t repetitions = 20;
  StopRule stop;
  std::optional<std::size_t> blocks; // unset: ceil(||A||_2^2)
  std::uint64_t seed = 0;
  std::uint64_t partition_seed = 0;
  bool normalize = true;
  std::optional<std::filesystem::path> rhs;
  bool assert_consistent = false;
  std::optional<std::filesystem::path> trace;
  std::optional<std::filesystem::path> partition_out;
  std::optional<std::filesystem::path> out;
  // Set when --help was requested; execute prints it and exits 0.
  std::optional<std::string> help;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> parse_shape(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw UsageError("--gaussian expects MxN, got '" + s + "'");
  try {
    std::size_t used = 0;
    const auto m = std::stoull(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("m");
    const auto rest = s.substr(x + 1);
    const auto n = std::stoull(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("n");
    if (m == 0 || n == 0) throw std::invalid_argument("zero");
    return {static_cast<std::size_t>(m), static_cast<std::size_t>(n)};
  } catch (const std::logic_error&) {
    throw UsageError("--gaussian expects MxN with positive integers, got '" + s + "'");
  }
}

inline MethodTag parse_method_or_throw(const std::string& name) {
  const auto tag = parse_method(name);
  if (!tag)
    throw UsageError("unknown method '" + name +
                     "' (expected kaczmarz, rk, mrk, grk, rbk, gbk, grbk, mrbk, mrabk)");
  return *tag;
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

} // namespace detail

// Flags shared by every subcommand that reads a matrix.
struct SourceFlags {
  std::string gaussian;
  std::string mm;
  double density = 0.01;
  std::uint64_t matrix_seed = 0;
};

inline RunPlan parse_args(const std::vector<std::string>& args) {
  CLI::App app{"klab: maximum residual block Kaczmarz solvers and benchmark harness", "klab"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  RunPlan plan;
  SourceFlags src;
  std::string method = "mrbk";
  std::string methods = "mrk,mrbk,mrabk";
  double omega = 1.0;
  std::size_t blocks = 0;
  std::string out, trace, rhs, partition_out;

  auto omega_check = CLI::Validator(
      [](std::string& s) -> std::string {
        try {
          const double w = std::stod(s);
          if (w > 0.0 && w < 2.0) return {};
        } catch (const std::logic_error&) {
        }
        return "omega must lie in the open interval (0, 2)";
      },
      "in (0,2)");

  auto add_source = [&](CLI::App* sub) {
    auto* g = sub->add_option("--gaussian", src.gaussian, "Generate an MxN sparse Gaussian matrix, e.g. 6000x1000");
    auto* f = sub->add_option("--mm", src.mm, "Read a Matrix Market coordinate file");
    g->excludes(f);
    f->excludes(g);
    sub->add_option("--density", src.density, "Density for --gaussian, in (0,1]")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sub->add_option("--matrix-seed", src.matrix_seed, "Seed for --gaussian generation")->capture_default_str();
  };
  auto add_stop = [&](CLI::App* sub) {
    sub->add_option("--rse-tol", plan.stop.rse_tol, "Stop once RSE falls below this")->capture_default_str();
    sub->add_option("--max-iter", plan.stop.max_iterations, "Iteration cap")->capture_default_str();
    sub->add_option("--residual-tol", plan.stop.residual_tol,
                    "Relative-residual stop used when the least-norm solution is unknown")
        ->capture_default_str();
  };
  auto add_blocking = [&](CLI::App* sub) {
    sub->add_option("--blocks", blocks, "Block count t (default: ceil(||A||_2^2))");
    sub->add_option("--partition-seed", plan.partition_seed, "Seed of the row permutation")->capture_default_str();
    sub->add_flag("!--no-normalize", plan.normalize, "Keep rows as read (default: drop zero rows, unit-normalize)");
  };

  auto* gen = app.add_subcommand("gen", "Write a sparse Gaussian test matrix in Matrix Market format");
  add_source(gen);
  bool gen_normalize = false;
  gen->add_flag("--normalize", gen_normalize, "Drop zero rows and unit-normalize before writing");
  gen->add_option("--out", out, "Output .mtx path")->required();

  auto* solve_cmd = app.add_subcommand("solve", "Solve one consistent system and report IT/CPU/RSE");
  add_source(solve_cmd);
  add_stop(solve_cmd);
  add_blocking(solve_cmd);
  solve_cmd->add_option("--method", method, "kaczmarz|rk|mrk|grk|rbk|gbk|grbk|mrbk|mrabk")->capture_default_str();
  solve_cmd->add_option("--omega", omega, "MRABK relaxation in (0,2)")->check(omega_check)->capture_default_str();
  solve_cmd->add_option("--seed", plan.seed, "Seed for x* and randomized selection")->capture_default_str();
  solve_cmd->add_option("--rhs", rhs, "Right-hand side file (whitespace-separated values) instead of b = A x*");
  solve_cmd->add_flag("--assert-consistent", plan.assert_consistent, "Fail unless A x = b has an exact solution");
  solve_cmd->add_option("--trace", trace, "Write the per-iteration trace CSV here");
  solve_cmd->add_option("--out", out, "Directory for trace output");

  auto* bench = app.add_subcommand("bench", "Repetition-averaged IT/CPU comparison with speed-ups");
  add_source(bench);
  add_stop(bench);
  add_blocking(bench);
  bench->add_option("--methods", methods, "Comma-separated method list")->capture_default_str();
  bench->add_option("--omega", omega, "MRABK relaxation in (0,2)")->check(omega_check)->capture_default_str();
  bench->add_option("--repetitions", plan.repetitions, "Repetitions averaged per method")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--seed", plan.seed, "Base seed; repetition r draws x* from seed ^ r")->capture_default_str();
  bench->add_option("--out", out, "Directory for report.txt and report.csv");

  auto* paving = app.add_subcommand("paving", "Row-paving bounds and convergence factors of the partition");
  add_source(paving);
  add_blocking(paving);
  paving->add_option("--omega", omega, "MRABK relaxation in (0,2)")->check(omega_check)->capture_default_str();
  paving->add_option("--partition-out", partition_out, "Write the partition in text form here");

  auto* verify = app.add_subcommand("verify", "Check every per-step contraction ratio against its bound");
  add_source(verify);
  add_stop(verify);
  add_blocking(verify);
  verify->add_option("--method", method, "mrbk|mrabk")->capture_default_str();
  verify->add_option("--omega", omega, "MRABK relaxation in (0,2)")->check(omega_check)->capture_default_str();
  verify->add_option("--seed", plan.seed, "Seed for x*")->capture_default_str();
  verify->add_option("--trace", trace, "Write the per-iteration trace CSV here");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    plan.help = subs.empty() ? app.help() : subs.front()->help();
    return plan;
  } catch (const CLI::CallForAllHelp&) {
    plan.help = app.help("", CLI::AppFormatMode::All);
    return plan;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  CLI::App* used = app.get_subcommands().front();
  const std::string name = used->get_name();
  plan.command = name == "gen"      ? Command::Gen
                 : name == "solve"  ? Command::Solve
                 : name == "bench"  ? Command::Bench
                 : name == "paving" ? Command::Paving
                                    : Command::Verify;

  if (!src.gaussian.empty()) {
    const auto [m, n] = detail::parse_shape(src.gaussian);
    if (!(src.density > 0.0)) throw UsageError("--density must lie in (0, 1]");
    plan.source = GaussianSource{m, n, src.density, src.matrix_seed};
  } else if (!src.mm.empty()) {
    plan.source = MatrixMarketSource{src.mm};
  } else {
    throw UsageError(name + ": a matrix source is required (--gaussian MxN or --mm FILE)");
  }
  if (plan.command == Command::Gen) {
    if (!std::holds_alternative<GaussianSource>(*plan.source))
      throw UsageError("gen: only --gaussian sources can be generated");
    plan.normalize = gen_normalize;
  }

  if (plan.command == Command::Bench) {
    for (const auto& s : detail::split_commas(methods))
      plan.methods.push_back({detail::parse_method_or_throw(s), omega});
    if (plan.methods.empty()) throw UsageError("--methods is empty");
  } else if (plan.command == Command::Solve || plan.command == Command::Verify) {
    plan.methods.push_back({detail::parse_method_or_throw(method), omega});
    if (plan.command == Command::Verify && plan.methods[0].tag != MethodTag::MRBK &&
        plan.methods[0].tag != MethodTag::MRABK)
      throw UsageError("verify: contraction bounds exist for mrbk and mrabk only");
  } else if (plan.command == Command::Paving) {
    plan.methods.push_back({MethodTag::MRABK, omega});
  }

  if (const auto* opt = used->get_option_no_throw("--blocks"); opt && opt->count() > 0) {
    if (blocks < 1) throw UsageError("--blocks must be >= 1");
    plan.blocks = blocks;
  }
  if (!out.empty()) plan.out = out;
  if (!trace.empty()) plan.trace = trace;
  if (!rhs.empty()) plan.rhs = rhs;
  if (!partition_out.empty()) plan.partition_out = partition_out;

  try {
    plan.stop.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  return plan;
}

inline RunPlan parse_args(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return parse_args(args);
}

// KLAB_DENSE_CAP overrides the dense-diagnostic size cap.
inline std::size_t dense_cap_from_env() {
  const char* v = std::getenv("KLAB_DENSE_CAP");
  if (!v || !*v) return kDefaultDenseCap;
  try {
    std::size_t used = 0;
    const auto cap = std::stoull(v, &used);
    if (used == std::string(v).size()) return static_cast<std::size_t>(cap);
  } catch (const std::logic_error&) {
  }
  throw UsageError(std::string("KLAB_DENSE_CAP must be a non-negative integer, got '") + v + "'");
}

namespace detail {

inline DenseVector read_vector_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  DenseVector v;
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const double x = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
      throw ParseError(path.string() + ": not a number: '" + tok + "'");
    v.push_back(x);
  }
  return v;
}

struct Prepared {
  SparseMatrix A;
  Partition partition;
  BlockCount block_count;
};

inline Prepared prepare(const RunPlan& plan) {
  Prepared p;
  SparseMatrix raw = load_source(*plan.source);
  p.A = plan.normalize ? normalize_rows(raw) : std::move(raw);
  p.block_count = default_block_count_detail(p.A);
  const std::size_t t = plan.blocks ? *plan.blocks : p.block_count.t;
  if (t > p.A.rows())
    throw UsageError("--blocks " + std::to_string(t) + " exceeds m = " + std::to_string(p.A.rows()));
  if (!plan.blocks && p.block_count.clamped)
    std::cerr << "warning: ceil(||A||_2^2) exceeds m; using t = m\n";
  p.partition = randomized_partition(p.A.rows(), t, plan.partition_seed);
  return p;
}

inline LinearSystem build_system(const RunPlan& plan, const SparseMatrix& a, std::size_t cap) {
  const MinNormSolver solver(a, {cap, true});
  if (!plan.rhs) return make_consistent_system(a, solver, plan.seed);
  LinearSystem sys{a, read_vector_file(*plan.rhs), std::nullopt, plan.assert_consistent};
  if (sys.b.size() != a.rows())
    throw UsageError("--rhs holds " + std::to_string(sys.b.size()) + " values, matrix has " +
                     std::to_string(a.rows()) + " rows");
  sys.x_star = solver.solve(sys.b);
  return sys;
}

inline void print_report(std::ostream& os, const SolveReport& r, std::size_t t) {
  os << "method        " << method_name(r.method) << '\n';
  os << "blocks t      " << t << '\n';
  os << "iterations    " << r.iterations << '\n';
  os << "cpu seconds   " << std::setprecision(6) << r.wall_seconds << '\n';
  os << "final RSE     " << std::scientific << std::setprecision(3) << r.final_rse << std::defaultfloat << '\n';
  os << "termination   " << termination_name(r.termination) << '\n';
}

inline int run_gen(const RunPlan& plan, std::ostream& os) {
  SparseMatrix a = load_source(*plan.source);
  if (plan.normalize) a = normalize_rows(a);
  const auto path = plan.out.value_or("");
  write_matrix_market(path, a);
  os << "wrote " << a.rows() << "x" << a.cols() << " (" << a.nnz() << " nonzeros) to " << path.string() << '\n';
  return kOk;
}

inline int run_solve(const RunPlan& plan, std::ostream& os, std::size_t cap) {
  const Prepared p = prepare(plan);
  LinearSystem sys = build_system(plan, p.A, cap);
  sys.validate();
  Method method = make_method(plan.methods.front(), p.partition, {});
  const SolveReport r = solve(sys, method, plan.stop, plan.seed);
  print_report(os, r, p.partition.block_count());
  if (plan.trace) write_trace_csv(*plan.trace, r);
  if (plan.out) {
    std::filesystem::create_directories(*plan.out);
    write_trace_csv(*plan.out / ("trace_" + plan.methods.front().label() + ".csv"), r);
  }
  return r.termination == Termination::InnerFailure ? kInnerFailure : kOk;
}

inline int run_bench(const RunPlan& plan, std::ostream& os, std::size_t cap) {
  ExperimentSpec spec;
  spec.source = *plan.source;
  spec.methods = plan.methods;
  spec.repetitions = plan.repetitions;
  spec.stop = plan.stop;
  spec.partition_seed = plan.partition_seed;
  spec.base_seed = plan.seed;
  spec.block_count = plan.blocks;
  spec.normalize = plan.normalize;
  spec.min_norm = {cap, true};
  const ExperimentResult r = run_experiment(spec);
  write_report_text(os, r);
  if (plan.out) {
    std::filesystem::create_directories(*plan.out);
    write_report(*plan.out / "report.txt", r);
  }
  for (const auto& m : r.methods)
    if (m.failures) return kInnerFailure;
  return kOk;
}

inline int run_paving(const RunPlan& plan, std::ostream& os, std::size_t cap) {
  const Prepared p = prepare(plan);
  const PavingBounds pb = paving_bounds(p.A, p.partition, cap);
  const ConvergenceFactors f = convergence_factors(pb, p.A, p.partition);
  const double omega = plan.methods.front().omega;
  os << std::setprecision(10);
  os << "m x n            " << p.A.rows() << " x " << p.A.cols() << '\n';
  os << "||A||_2^2        " << p.block_count.spectral_norm_sq << '\n';
  os << "blocks t         " << p.partition.block_count() << '\n';
  os << "alpha            " << pb.alpha << '\n';
  os << "beta             " << pb.beta << '\n';
  os << "sigma_min^2(A)   " << pb.sigma_min_sq << '\n';
  os << "zeta             " << pb.zeta << '\n';
  os << "rho_MRBK         " << f.rho_mrbk << '\n';
  os << "rho_RBK          " << f.rho_rbk << '\n';
  os << "rho_GRBK         " << f.rho_grbk << '\n';
  os << "rho_MRABK(" << omega << ")   " << f.rho_mrabk(omega) << '\n';
  if (plan.partition_out) {
    std::ofstream out(*plan.partition_out);
    if (!out) throw IoError("cannot open " + plan.partition_out->string() + " for writing");
    write_partition(out, p.partition);
    out.flush();
    if (!out) throw IoError("write failed for " + plan.partition_out->string());
  }
  return kOk;
}

inline int run_verify(const RunPlan& plan, std::ostream& os, std::size_t cap) {
  const Prepared p = prepare(plan);
  const PavingBounds pb = paving_bounds(p.A, p.partition, cap);
  LinearSystem sys = build_system(plan, p.A, cap);
  const Method method = make_method(plan.methods.front(), p.partition, {});
  const SolveReport r = solve(sys, method, plan.stop, plan.seed);
  if (plan.trace) write_trace_csv(*plan.trace, r);
  print_report(os, r, p.partition.block_count());
  if (r.termination == Termination::InnerFailure) return kInnerFailure;
  const BoundCheck bc = verify_theorem_bounds(r, pb, method);
  os << std::setprecision(10);
  os << "first-step factor " << bc.first_factor << '\n';
  os << "factor            " << bc.factor << '\n';
  os << "max ratio         " << bc.max_ratio << '\n';
  os << "steps checked     " << bc.steps_checked << '\n';
  if (!bc.pass) {
    os << "FAIL: contraction bound violated at step " << *bc.first_violation << '\n';
    return kVerificationFailure;
  }
  os << "PASS: every step within its contraction bound\n";
  return kOk;
}

} // namespace detail

// Runs a plan; errors are reported on `err` and mapped to exit codes.
inline int execute(const RunPlan& plan, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  if (plan.help) {
    os << *plan.help;
    return kOk;
  }
  try {
    const std::size_t cap = dense_cap_from_env();
    switch (plan.command) {
    case Command::Gen: return detail::run_gen(plan, os);
    case Command::Solve: return detail::run_solve(plan, os, cap);
    case Command::Bench: return detail::run_bench(plan, os, cap);
    case Command::Paving: return detail::run_paving(plan, os, cap);
    case Command::Verify: return detail::run_verify(plan, os, cap);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const SizeCapError& e) {
    err << "error: " << e.what() << " (raise KLAB_DENSE_CAP to override)\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const ConsistencyError& e) {
    err << "verification failure: " << e.what() << '\n';
    return kVerificationFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUnexpected;
}

// Full process entry: parse, execute, exit code.
inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  RunPlan plan;
  try {
    plan = parse_args(argc, argv);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\nrun 'klab --help' for usage\n";
    return kUsage;
  }
  return execute(plan, os, err);
}

} // namespace klab::cli
