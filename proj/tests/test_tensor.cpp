#include <gtest/gtest.h>

#include "sdfn/errors.hpp"
#include "sdfn/rng.hpp"
#include "sdfn/tensor.hpp"

namespace sdfn {

TEST(Tensor, ShapeAndSize) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 1.5);
}

TEST(Tensor, RejectsZeroDimensionAndBadData) {
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, DefaultIsScalarZero) {
  Tensor t;
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.item(), 0.0);
}

TEST(Tensor, RowMajorLayout) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m[4], 5.0);
  auto r = m.row(1);
  EXPECT_EQ(r[0], 4.0);
  EXPECT_EQ(m.reshaped(Shape{3, 2}).at(2, 1), 6.0);
  EXPECT_THROW(m.reshaped(Shape{4, 2}), ShapeError);
}

TEST(Tensor, FinitenessCheck) {
  Tensor t(Shape{2}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next(), b.next());
  Rng c(8);
  EXPECT_NE(Rng(7).next(), c.next());
}

TEST(Rng, UniformAndBelowRanges) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsPermutation) {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  Rng rng(5);
  shuffle(v, rng);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(v, sorted);
}

}  // namespace sdfn
