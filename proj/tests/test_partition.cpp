#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <sstream>

#include "klab/partition.hpp"
#include "oracles.hpp"

namespace klab {
namespace {

std::vector<std::size_t> iota_vec(std::size_t m) {
  std::vector<std::size_t> v(m);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<std::size_t> as_vec(std::span<const std::size_t> s) { return {s.begin(), s.end()}; }

TEST(Partition, FloorFormulaWithIdentityPermutation) {
  const Partition p(iota_vec(10), 3);
  EXPECT_EQ(as_vec(p.block(0)), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(as_vec(p.block(1)), (std::vector<std::size_t>{3, 4, 5}));
  EXPECT_EQ(as_vec(p.block(2)), (std::vector<std::size_t>{6, 7, 8, 9}));
}

TEST(Partition, SingleBlockCoversEverything) {
  const auto p = randomized_partition(5, 1, 42);
  const auto blk = as_vec(p.block(0));
  EXPECT_EQ(std::set<std::size_t>(blk.begin(), blk.end()), (std::set<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Partition, TEqualsMGivesSingletons) {
  const auto p = randomized_partition(4, 4, 9);
  for (std::size_t i = 0; i < 4; ++i) {
    ASSERT_EQ(p.block(i).size(), 1u);
    EXPECT_EQ(p.block(i)[0], p.permutation()[i]);
  }
}

TEST(Partition, RejectsBadBlockCounts) {
  EXPECT_THROW(randomized_partition(5, 0, 1), ArgumentError);
  EXPECT_THROW(randomized_partition(5, 6, 1), ArgumentError);
  EXPECT_THROW(Partition({0, 0, 1}, 1), ArgumentError);
}

TEST(Partition, RandomTriplesSatisfyInvariants) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(300);
    const std::size_t t = 1 + rng.uniform_index(m);
    const std::uint64_t seed = rng.next_u64();
    const auto p = randomized_partition(m, t, seed);
    ASSERT_EQ(p.block_count(), t);
    std::vector<int> hits(m, 0);
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t lo = i * m / t, hi = (i + 1) * m / t;
      ASSERT_EQ(p.block(i).size(), hi - lo);
      for (std::size_t k = 0; k < p.block(i).size(); ++k) {
        ASSERT_EQ(p.block(i)[k], p.permutation()[lo + k]);
        ++hits[p.block(i)[k]];
      }
    }
    for (int h : hits) ASSERT_EQ(h, 1);
    ASSERT_EQ(randomized_partition(m, t, seed), p);
  }
}

TEST(Partition, TextFormatRoundTrips) {
  const auto p = randomized_partition(11, 4, 77);
  std::stringstream ss;
  write_partition(ss, p);
  const std::string text = ss.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "11 4 77");
  EXPECT_EQ(read_partition(ss), p);
}

TEST(Partition, TextFormatRejectsMalformedInput) {
  std::istringstream bad_header("oops\n");
  EXPECT_THROW(read_partition(bad_header), ParseError);
  std::istringstream wrong_size("4 2 0\n1\n2 3 4\n");
  EXPECT_THROW(read_partition(wrong_size), ParseError);
  std::istringstream out_of_range("2 1 0\n1 3\n");
  EXPECT_THROW(read_partition(out_of_range), ParseError);
  std::istringstream repeated("2 1 0\n1 1\n");
  EXPECT_THROW(read_partition(repeated), ParseError);
}

TEST(DefaultBlockCount, KnownSpectra) {
  EXPECT_EQ(default_block_count(identity_matrix(3)), 1u);
  const auto diag = csr_from_triplets({{0, 0, 1.0}, {1, 1, 2.0}, {2, 2, 3.0}}, 3, 3);
  const auto bc = default_block_count_detail(diag);
  EXPECT_EQ(bc.unclamped, 9u);
  EXPECT_EQ(bc.t, 3u); // clamped to m
  EXPECT_TRUE(bc.clamped);
  EXPECT_EQ(default_block_count(diag), 3u);
  EXPECT_THROW(default_block_count(csr_from_triplets({}, 2, 2)), ArgumentError);
}

TEST(DefaultBlockCount, ClampsToRowCount) {
  const auto a = csr_from_triplets({{0, 0, 10.0}}, 1, 1);
  const auto bc = default_block_count_detail(a);
  EXPECT_TRUE(bc.clamped);
  EXPECT_EQ(bc.t, 1u);
}

TEST(PavingBounds, OrthonormalBlocks) {
  const auto a = identity_matrix(6);
  const Partition p(iota_vec(6), 3);
  const auto pb = paving_bounds(a, p);
  EXPECT_NEAR(pb.alpha, 1.0, 1e-14);
  EXPECT_NEAR(pb.beta, 1.0, 1e-14);
  EXPECT_EQ(pb.zeta, 2.0);
  EXPECT_NEAR(pb.sigma_min_sq, 1.0, 1e-14);
}

TEST(PavingBounds, ZeroRowMakesAlphaZero) {
  const auto a = csr_from_triplets({{0, 0, 1.0}, {2, 2, 1.0}, {3, 3, 1.0}}, 4, 4);
  const Partition p(iota_vec(4), 2);
  const auto pb = paving_bounds(a, p);
  EXPECT_EQ(pb.alpha, 0.0);
  EXPECT_NEAR(pb.beta, 1.0, 1e-14);
  EXPECT_EQ(pb.zeta, 1.0);
}

TEST(PavingBounds, MatchesIndependentEigenvalueOracle) {
  const auto a = oracle::random_normalized(60, 20, 0.2, 3);
  const auto p = randomized_partition(a.rows(), default_block_count(a), 3);
  const auto pb = paving_bounds(a, p);
  double alpha = 1e300, beta = 0.0;
  for (std::size_t i = 0; i < p.block_count(); ++i) {
    const Eigen::MatrixXd d = densify(p.view(a, i));
    const Eigen::VectorXd ev = oracle::gram_eigenvalues(d);
    // A_V A_V^T has |V| eigenvalues; the smallest squared singular value of
    // A_V among min(|V|, n) is the smallest eigenvalue when |V| <= n.
    ASSERT_LE(d.rows(), d.cols());
    alpha = std::min(alpha, ev(0));
    beta = std::max(beta, ev(ev.size() - 1));
    EXPECT_LE(pb.alpha, pb.blocks[i].sigma_min_sq);
    EXPECT_LE(pb.blocks[i].sigma_max_sq, pb.beta);
  }
  EXPECT_NEAR(pb.alpha / alpha, 1.0, 1e-10);
  EXPECT_NEAR(pb.beta / beta, 1.0, 1e-10);
  EXPECT_NEAR(pb.sigma_min_sq / oracle::sigma_min_nonzero_sq_eig(densify(a)), 1.0, 1e-8);
}

TEST(PavingBounds, RejectsMismatchAndCap) {
  const auto a = identity_matrix(6);
  EXPECT_THROW(paving_bounds(a, Partition(iota_vec(5), 1)), DimensionError);
  EXPECT_THROW(paving_bounds(a, Partition(iota_vec(6), 2), 5), SizeCapError);
}

TEST(ConvergenceFactors, IdentitySubstitution) {
  for (std::size_t m : {2u, 5u, 12u}) {
    const auto a = identity_matrix(m);
    const Partition p(iota_vec(m), m);
    const auto f = convergence_factors(paving_bounds(a, p), a, p);
    EXPECT_NEAR(f.rho_mrbk, 1.0 - 1.0 / static_cast<double>(m - 1), 1e-14);
    EXPECT_NEAR(f.rho_mrbk_first, 1.0 - 1.0 / static_cast<double>(m), 1e-14);
    EXPECT_NEAR(f.rho_rbk, 1.0 - 1.0 / static_cast<double>(m), 1e-14);
  }
}

TEST(ConvergenceFactors, MrabkRelaxation) {
  const auto a = oracle::random_normalized(40, 10, 0.3, 8);
  const auto p = randomized_partition(a.rows(), default_block_count(a), 1);
  const auto f = convergence_factors(paving_bounds(a, p), a, p);
  EXPECT_DOUBLE_EQ(f.rho_mrabk(1.0), f.rho_mrbk);
  EXPECT_EQ(f.rho_mrabk(0.0), 1.0);
  EXPECT_EQ(f.rho_mrabk(2.0), 1.0);
  EXPECT_LT(f.rho_mrabk(1.0), f.rho_mrabk(0.5));
  EXPECT_DOUBLE_EQ(f.rho_mrabk(0.5), f.rho_mrabk(1.5));
  for (double r : {f.rho_mrbk, f.rho_rbk, f.rho_grbk, f.rho_mrabk(0.7)}) {
    EXPECT_GE(r, 0.0);
    EXPECT_LT(r, 1.0);
  }
}

TEST(ConvergenceFactors, SingleBlockUsesFirstStepDenominator) {
  const auto a = identity_matrix(3);
  const Partition p(iota_vec(3), 1);
  const auto f = convergence_factors(paving_bounds(a, p), a, p);
  EXPECT_EQ(f.rho_mrbk, f.rho_mrbk_first);
  EXPECT_NEAR(f.rho_mrbk, 0.0, 1e-14);
}

TEST(ConvergenceFactors, MrbkBeatsRbkWheneverTMinusOneBelowM) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = oracle::random_normalized(50, 15, 0.25, seed);
    const auto p = randomized_partition(a.rows(), default_block_count(a), seed);
    const auto f = convergence_factors(paving_bounds(a, p), a, p);
    ASSERT_LT(p.block_count() - 1, a.rows());
    EXPECT_LT(f.rho_mrbk, f.rho_rbk);
  }
}

} // namespace
} // namespace klab
