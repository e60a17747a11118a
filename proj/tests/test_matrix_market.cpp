#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "klab/harness.hpp"
#include "klab/matrix_market.hpp"

namespace klab {
namespace {

SparseMatrix parse(const std::string& text) {
  std::istringstream is(text);
  return read_matrix_market(is, "mem");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

TEST(MatrixMarket, ReadsGeneralReal) {
  const auto a = parse("%%MatrixMarket matrix coordinate real general\n"
                       "% comment\n"
                       "3 3 3\n"
                       "1 1 1.0\n2 2 1\n3 3 1e0\n");
  EXPECT_EQ(a, identity_matrix(3));
}

TEST(MatrixMarket, ExpandsSymmetricStorage) {
  const auto a = parse("%%MatrixMarket matrix coordinate real symmetric\n"
                       "3 3 3\n1 1 4\n2 1 -1\n3 2 2.5\n");
  EXPECT_EQ(a.nnz(), 5u);
  const Eigen::MatrixXd d = densify(a);
  EXPECT_EQ(d(0, 1), -1.0);
  EXPECT_EQ(d(1, 0), -1.0);
  EXPECT_EQ(d(1, 2), 2.5);
  EXPECT_EQ(d(2, 1), 2.5);
  EXPECT_EQ(d(0, 0), 4.0);
}

TEST(MatrixMarket, PatternEntriesBecomeOnes) {
  const auto a = parse("%%MatrixMarket matrix coordinate pattern general\n2 3 2\n1 3\n2 1\n");
  EXPECT_EQ(a.rows(), 2u);
  EXPECT_EQ(a.cols(), 3u);
  EXPECT_EQ(a.values()[0], 1.0);
  EXPECT_EQ(a.col_indices()[0], 2u);
}

TEST(MatrixMarket, IntegerFieldAccepted) {
  const auto a = parse("%%MatrixMarket matrix coordinate integer general\n1 1 1\n1 1 7\n");
  EXPECT_EQ(a.values()[0], 7.0);
}

TEST(MatrixMarket, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n1 1 2\n").find("mem:4:"),
            std::string::npos);
  EXPECT_NE(error_of("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n").find("mem:3:"),
            std::string::npos);
  EXPECT_NE(error_of("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 x\n").find("mem:3:"),
            std::string::npos);
  EXPECT_NE(error_of("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n").find("complex"),
            std::string::npos);
  EXPECT_NE(error_of("%%MatrixMarket matrix array real general\n1 1\n1\n").find("coordinate"),
            std::string::npos);
  EXPECT_NE(error_of("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n").find("expected 3"),
            std::string::npos);
  EXPECT_NE(error_of("%%MatrixMarket matrix coordinate real general\n99999999999999999999999 2 1\n")
                .find("overflow"),
            std::string::npos);
  EXPECT_NE(error_of("hello\n").find("banner"), std::string::npos);
  EXPECT_NE(error_of("").find("empty"), std::string::npos);
}

TEST(MatrixMarket, WriteReadRoundTripIsBitwise) {
  const auto a = normalize_rows(generate_sparse_gaussian(40, 30, 0.1, 6));
  std::stringstream ss;
  write_matrix_market(ss, a);
  EXPECT_EQ(read_matrix_market(ss), a);
}

TEST(MatrixMarket, FileRoundTripAndMissingFile) {
  const auto path = std::filesystem::temp_directory_path() / "klab_mm_roundtrip.mtx";
  const auto a = trefethen_matrix(32);
  write_matrix_market(path, a);
  EXPECT_EQ(read_matrix_market(path), a);
  std::filesystem::remove(path);
  EXPECT_THROW(read_matrix_market(path), IoError);
}

} // namespace
} // namespace klab
