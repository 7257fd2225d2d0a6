#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "support.hpp"

namespace mdp {
namespace {

using testing::brute_force_min_cost;
using testing::random_costs;

TEST(Hungarian, DiagonalOptimum) {
  const CostMatrix c{{0, 1}, {1, 0}};
  const Assignment a = hungarian(c);
  EXPECT_EQ(a.row_to_col, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(total_cost(c, a), 0.0);
}

TEST(Hungarian, ThreeByThreeExample) {
  const CostMatrix c{{4, 1, 3}, {2, 0, 5}, {3, 2, 2}};
  const Assignment a = hungarian(c);
  EXPECT_EQ(a.row_to_col, (std::vector<int>{1, 0, 2}));
  EXPECT_DOUBLE_EQ(total_cost(c, a), 5.0);
}

TEST(Hungarian, RectangularWideAssignsEveryRow) {
  const CostMatrix c{{5, 1, 9}, {4, 8, 2}};
  const Assignment a = hungarian(c);
  EXPECT_EQ(a.size(), 2u);
  EXPECT_DOUBLE_EQ(total_cost(c, a), brute_force_min_cost(c));
  EXPECT_DOUBLE_EQ(total_cost(c, a), 3.0);
}

TEST(Hungarian, RectangularTallLeavesRowsUnassigned) {
  const CostMatrix c{{3}, {1}, {2}};
  const Assignment a = hungarian(c);
  EXPECT_EQ(a.row_to_col, (std::vector<int>{-1, 0, -1}));
}

TEST(Hungarian, RejectsNonFiniteAndEmpty) {
  CostMatrix c{{0, 1}, {1, 0}};
  c(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(hungarian(c), ContractViolation);
  c(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(hungarian(c), ContractViolation);
  EXPECT_THROW(hungarian(CostMatrix(0, 3)), ContractViolation);
}

TEST(Hungarian, MatchesBruteForce) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  for (int i = 0; i < 300; ++i) {
    const CostMatrix c = random_costs(dim(rng), dim(rng), rng);
    const Assignment a = hungarian(c);
    ASSERT_EQ(a.size(), std::min(c.rows(), c.cols()));
    ASSERT_NEAR(total_cost(c, a), brute_force_min_cost(c), 1e-9);
  }
}

TEST(Hungarian, NeverWorseThanGreedy) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const CostMatrix c = random_costs(5, 5, rng);
    const Assignment g = greedy_associate(c, std::numeric_limits<double>::max());
    EXPECT_LE(total_cost(c, hungarian(c)), total_cost(c, g) + 1e-12);
  }
}

TEST(Hungarian, ConstantShiftKeepsAssignment) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    CostMatrix c = random_costs(4, 6, rng);
    const Assignment before = hungarian(c);
    for (std::size_t r = 0; r < c.rows(); ++r) {
      for (std::size_t k = 0; k < c.cols(); ++k) c(r, k) += 7.5;
    }
    EXPECT_EQ(hungarian(c).row_to_col, before.row_to_col);
  }
}

TEST(Greedy, SingleCellBelowThreshold) {
  EXPECT_EQ(greedy_associate(CostMatrix{{0.1}}, 0.5).row_to_col, (std::vector<int>{0}));
}

TEST(Greedy, FirstRowWinsContestedColumn) {
  const CostMatrix c{{0.1, 0.4}, {0.05, 0.3}};
  EXPECT_EQ(greedy_associate(c, 0.5).row_to_col, (std::vector<int>{0, 1}));
}

TEST(Greedy, AllAboveThresholdIsEmpty) {
  const CostMatrix c{{0.7, 0.9}, {0.8, 0.6}};
  const Assignment a = greedy_associate(c, 0.5);
  EXPECT_EQ(a.size(), 0u);
}

TEST(Greedy, TiesGoToLowestColumn) {
  const CostMatrix c{{0.2, 0.2, 0.2}};
  EXPECT_EQ(greedy_associate(c, 0.5).row_to_col, (std::vector<int>{0}));
}

}  // namespace
}  // namespace mdp
