#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "klab/harness.hpp"
#include "oracles.hpp"

namespace klab {
namespace {

TEST(Generate, DensityIsExact) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = generate_sparse_gaussian(200, 100, 0.05, seed);
    EXPECT_EQ(a.nnz(), 1000u);
    EXPECT_NEAR(density(a), 0.05, 0.05 * 0.05);
  }
}

TEST(Generate, ValuesLookStandardNormal) {
  const auto a = generate_sparse_gaussian(400, 400, 0.1, 1);
  double s = 0.0, s2 = 0.0;
  for (double v : a.values()) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(a.nnz());
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Generate, DeterministicAndSeedSensitive) {
  EXPECT_EQ(generate_sparse_gaussian(50, 30, 0.1, 3), generate_sparse_gaussian(50, 30, 0.1, 3));
  EXPECT_NE(generate_sparse_gaussian(50, 30, 0.1, 3), generate_sparse_gaussian(50, 30, 0.1, 4));
}

TEST(Generate, FullDensityAndErrors) {
  EXPECT_EQ(generate_sparse_gaussian(4, 5, 1.0, 0).nnz(), 20u);
  EXPECT_THROW(generate_sparse_gaussian(4, 5, 0.0, 0), ArgumentError);
  EXPECT_THROW(generate_sparse_gaussian(4, 5, 1.5, 0), ArgumentError);
  EXPECT_THROW(generate_sparse_gaussian(0, 5, 0.5, 0), ArgumentError);
}

TEST(Normalize, ScalesAndDropsZeroRows) {
  const auto a = csr_from_triplets({{0, 0, 3.0}, {0, 1, 4.0}, {2, 1, -2.0}}, 3, 2);
  const auto n = normalize_rows(a);
  ASSERT_EQ(n.rows(), 2u);
  EXPECT_NEAR(n.values()[0], 0.6, 1e-16);
  EXPECT_NEAR(n.values()[1], 0.8, 1e-16);
  EXPECT_EQ(n.values()[2], -1.0);
  EXPECT_THROW(normalize_rows(csr_from_triplets({}, 2, 2)), ArgumentError);
}

TEST(Normalize, IdempotentBitwise) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto once = normalize_rows(generate_sparse_gaussian(80, 30, 0.1, seed));
    EXPECT_EQ(normalize_rows(once), once);
    for (double v : once.row_norms_sq()) EXPECT_NEAR(v, 1.0, 1e-14);
  }
}

TEST(Trefethen, StructureOfOrder700) {
  const auto a = trefethen_matrix(700);
  EXPECT_EQ(a.rows(), 700u);
  EXPECT_EQ(a.nnz(), 12654u);
  EXPECT_NEAR(density(a) * 100.0, 2.58, 0.005);
  const auto r0 = a.row(0);
  EXPECT_EQ(r0.values[0], 2.0);
  const auto r699 = a.row(699);
  EXPECT_EQ(r699.values.back(), 5279.0); // the 700th prime
}

TEST(Trefethen, SmallOrderByHand) {
  const Eigen::MatrixXd d = densify(trefethen_matrix(5));
  Eigen::MatrixXd expect(5, 5);
  expect << 2, 1, 1, 0, 1,
            1, 3, 1, 1, 0,
            1, 1, 5, 1, 1,
            0, 1, 1, 7, 1,
            1, 0, 1, 1, 11;
  EXPECT_EQ(d, expect);
}

TEST(MinNorm, SolutionIsOrthogonalToNullSpace) {
  // 10x20: a null space of dimension at least 10
  const auto a = oracle::random_normalized(10, 20, 0.5, 2);
  const auto sys = make_consistent_system(a, 5);
  ASSERT_TRUE(sys.x_star);
  EXPECT_NO_THROW(sys.validate());
  const Eigen::VectorXd ref = oracle::min_norm_solve(densify(a), oracle::to_eigen(sys.b));
  EXPECT_LE((oracle::to_eigen(*sys.x_star) - ref).norm(), 1e-10 * ref.norm());
}

TEST(MinNorm, IdentityReturnsRhs) {
  const auto a = identity_matrix(4);
  const MinNormSolver s(a);
  const auto x = s.solve(DenseVector{1.0, -2.0, 3.0, 0.5});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x[i], (DenseVector{1.0, -2.0, 3.0, 0.5})[i], 1e-14);
  EXPECT_NEAR(s.condition_number(), 1.0, 1e-12);
}

TEST(MinNorm, IterativeFallbackAgreesWithSvd) {
  const auto a = oracle::random_normalized(60, 25, 0.2, 12);
  const auto dense = make_consistent_system(a, 3);
  const auto iter = make_consistent_system(a, 3, MinNormOptions{10, true});
  const double ref = norm2(*dense.x_star);
  EXPECT_LE(std::sqrt(distance_sq(*dense.x_star, *iter.x_star)), 1e-8 * ref);
  EXPECT_THROW(make_consistent_system(a, 3, MinNormOptions{10, false}), SizeCapError);
}

ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.source = GaussianSource{200, 50, 0.1, 4};
  spec.methods = {{MethodTag::MRK}, {MethodTag::GRBK}, {MethodTag::MRBK}, {MethodTag::MRABK, 1.0}};
  spec.repetitions = 3;
  return spec;
}

TEST(Experiment, AveragesMatchPerRepetitionValues) {
  const auto res = run_experiment(small_spec());
  ASSERT_EQ(res.methods.size(), 4u);
  for (const auto& m : res.methods) {
    ASSERT_EQ(m.iterations.size(), 3u);
    double it = 0, sec = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      it += static_cast<double>(m.iterations[r]);
      sec += m.seconds[r];
      EXPECT_EQ(m.terminations[r], Termination::Converged);
    }
    EXPECT_DOUBLE_EQ(m.mean_iterations, it / 3.0);
    EXPECT_DOUBLE_EQ(m.mean_seconds, sec / 3.0);
    EXPECT_LT(m.mean_final_rse, 1e-6);
  }
  ASSERT_TRUE(res.su1 && res.su2 && res.su3);
  EXPECT_DOUBLE_EQ(*res.su1, res.find(MethodTag::MRK)->mean_seconds / res.find(MethodTag::MRBK)->mean_seconds);
  EXPECT_LE(res.matrix.m, 200u); // zero rows are dropped by normalization
  EXPECT_GT(res.matrix.m, 190u);
  EXPECT_EQ(res.matrix.t, static_cast<std::size_t>(std::ceil(res.matrix.spectral_norm_sq)));
}

TEST(Experiment, IterationCountsAreDeterministic) {
  const auto a = run_experiment(small_spec());
  const auto b = run_experiment(small_spec());
  for (std::size_t i = 0; i < a.methods.size(); ++i) EXPECT_EQ(a.methods[i].iterations, b.methods[i].iterations);
}

TEST(Experiment, RepetitionSeedsDiffer) {
  EXPECT_EQ(repetition_seed(10, 0), 10u);
  EXPECT_EQ(repetition_seed(10, 3), 9u);
  const auto setup = prepare_experiment(small_spec());
  EXPECT_NE(setup.systems[0].b, setup.systems[1].b);
}

TEST(Experiment, Validation) {
  auto spec = small_spec();
  spec.repetitions = 0;
  EXPECT_THROW(spec.validate(), ArgumentError);
  spec = small_spec();
  spec.methods.push_back({MethodTag::MRABK, 2.0});
  EXPECT_THROW(spec.validate(), ArgumentError);
  spec = small_spec();
  spec.block_count = 1000;
  EXPECT_THROW(prepare_experiment(spec), ArgumentError);
}

TEST(TheoremBounds, HoldOnRandomSystem) {
  const auto a = oracle::random_normalized(200, 50, 0.1, 9);
  const auto p = randomized_partition(a.rows(), default_block_count(a), 9);
  const auto pb = paving_bounds(a, p);
  const auto sys = make_consistent_system(a, 1);
  for (const auto& m : {Method::block(MethodTag::MRBK, p), Method::mrabk(p, 0.5), Method::mrabk(p, 1.0)}) {
    const auto rep = solve(sys, m);
    const auto bc = verify_theorem_bounds(rep, pb, m);
    EXPECT_TRUE(bc.pass) << method_name(m.tag);
    EXPECT_GT(bc.steps_checked, 0u);
    EXPECT_LT(bc.factor, 1.0);
    EXPECT_GE(bc.first_factor, bc.factor); // the first step divides by t, later ones by t - 1
  }
}

TEST(TheoremBounds, FlagsAFakeViolation) {
  const auto a = oracle::random_normalized(100, 20, 0.1, 2);
  const auto p = randomized_partition(a.rows(), default_block_count(a), 2);
  const auto pb = paving_bounds(a, p);
  const auto m = Method::block(MethodTag::MRBK, p);
  auto rep = solve(make_consistent_system(a, 1), m);
  ASSERT_GE(rep.trace.size(), 2u);
  rep.trace[1].rse = rep.trace[0].rse; // a step with ratio 1
  const auto bc = verify_theorem_bounds(rep, pb, m);
  EXPECT_FALSE(bc.pass);
  EXPECT_EQ(bc.first_violation, 1u);
  EXPECT_THROW(verify_theorem_bounds(rep, pb, Method::row_action(MethodTag::MRK)), ArgumentError);
}

TEST(TraceCsv, EmptyTraceHasHeaderOnly) {
  std::ostringstream os;
  write_trace_csv(os, SolveReport{});
  EXPECT_EQ(os.str(), "iteration,rse,selected_index,cumulative_seconds\n");
}

TEST(TraceCsv, RowsAreOneBasedAndRoundTrip) {
  SolveReport r;
  r.trace = {{1, 0.5, 0, 0.001}, {2, 0.125, 3, 0.002}, {3, 1.0 / 3.0, 1, 0.0035}};
  std::stringstream ss;
  write_trace_csv(ss, r);
  const std::string text = ss.str();
  EXPECT_NE(text.find("\n1,0.5,1,"), std::string::npos);
  EXPECT_NE(text.find("\n2,0.125,4,"), std::string::npos);
  const auto back = read_trace_csv(ss);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].iteration, r.trace[i].iteration);
    EXPECT_EQ(back[i].rse, r.trace[i].rse);
    EXPECT_EQ(back[i].selected, r.trace[i].selected);
    EXPECT_EQ(back[i].seconds, r.trace[i].seconds);
  }
}

TEST(TraceCsv, RejectsBadInput) {
  std::istringstream bad("iteration,rse,selected_index,cumulative_seconds\n1,abc,1,0\n");
  EXPECT_THROW(read_trace_csv(bad), ParseError);
  std::istringstream header("nope\n");
  EXPECT_THROW(read_trace_csv(header), ParseError);
}

TEST(Report, TextAndCsvTwins) {
  const auto res = run_experiment(small_spec());
  std::ostringstream text;
  write_report_text(text, res);
  EXPECT_NE(text.str().find("MRBK"), std::string::npos);
  EXPECT_NE(text.str().find("SU3"), std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "klab_report_test";
  std::filesystem::create_directories(dir);
  write_report(dir / "report.txt", res);
  EXPECT_TRUE(std::filesystem::exists(dir / "report.txt"));
  std::ifstream csv(dir / "report.csv");
  std::string first;
  std::getline(csv, first);
  EXPECT_EQ(first, "group,field,value");
  EXPECT_THROW(write_report(dir / "x.csv", res), ArgumentError);
  std::filesystem::remove_all(dir);
}

} // namespace
} // namespace klab
