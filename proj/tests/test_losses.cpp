#include <gtest/gtest.h>

#include <cmath>

#include "oracle/oracle.hpp"
#include "sdfn/errors.hpp"
#include "sdfn/gradcheck.hpp"
#include "sdfn/losses.hpp"
#include "sdfn/ops.hpp"
#include "test_util.hpp"

namespace sdfn {
namespace {

using testing::random_tensor;

TEST(Bbc, SingleItemIsZero) {
  Rng rng(0);
  Tape t;
  EXPECT_EQ(bbc_loss(t.constant(random_tensor({1, 5}, rng)), t.constant(random_tensor({1, 5}, rng)), 10.0).value()[0],
            0.0);
}

TEST(Bbc, TwoByTwoClosedForm) {
  Tape t;
  Var f = t.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_NEAR(bbc_loss(f, f, 1.0).value()[0], 0.31326, 1e-5);
  EXPECT_NEAR(bbc_loss(f, f, 1.0).value()[0], std::log1p(std::exp(-1.0)), 1e-15);
}

TEST(Bbc, LargeScaleApproachesZero) {
  Tape t;
  Var f = t.constant(Tensor::matrix({{1, 0.1}, {0.1, 1}}));
  EXPECT_LT(bbc_loss(f, f, 200.0).value()[0], 1e-30);
}

TEST(Bbc, ZeroRowIsNumericsError) {
  Tape t;
  EXPECT_THROW(bbc_loss(t.constant(Tensor::matrix({{0, 0}, {1, 1}})), t.constant(Tensor::matrix({{1, 0}, {0, 1}})), 10.0),
               NumericsError);
}

TEST(Bbc, RowScaleInvariantAndMatchesOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor fq = random_tensor({4, 6}, rng), ft = random_tensor({4, 6}, rng);
    Tensor scaled = fq;
    for (std::size_t r = 0; r < 4; ++r) {
      const double k = 0.01 + 10.0 * rng.uniform();
      for (std::size_t c = 0; c < 6; ++c) scaled.at(r, c) *= k;
    }
    Tape t;
    const double a = bbc_loss(t.constant(fq), t.constant(ft), 10.0).value()[0];
    const double b = bbc_loss(t.constant(scaled), t.constant(ft), 10.0).value()[0];
    EXPECT_NEAR(a, b, 1e-9);
    EXPECT_NEAR(a, oracle::bbc(oracle::as_mat(fq), oracle::as_mat(ft), 10.0), 1e-12);
    EXPECT_GE(a, 0.0);
  }
}

TEST(Consistency, IdenticalIsZero) {
  Rng rng(2);
  Tape t;
  Var f = t.constant(random_tensor({3, 4}, rng));
  EXPECT_EQ(consistency_loss(f, f, f).value()[0], 0.0);
}

TEST(Consistency, OneByOneArithmetic) {
  Tape t;
  EXPECT_EQ(consistency_loss(t.constant(Tensor::matrix({{1}})), t.constant(Tensor::matrix({{2}})),
                             t.constant(Tensor::matrix({{1}})))
                .value()[0],
            6.0);
}

TEST(Consistency, SignInvariantAndMatchesOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor fq = random_tensor({3, 5}, rng), ft = random_tensor({3, 5}, rng), fin = random_tensor({3, 5}, rng);
    Tensor neg = fq;
    for (double& v : neg.data()) v = -v;
    Tape t;
    const double a = consistency_loss(t.constant(fq), t.constant(ft), t.constant(fin)).value()[0];
    EXPECT_EQ(a, consistency_loss(t.constant(neg), t.constant(ft), t.constant(fin)).value()[0]);
    EXPECT_NEAR(a, oracle::consistency(oracle::as_mat(fq), oracle::as_mat(ft), oracle::as_mat(fin)), 1e-11);
  }
}

TEST(Consistency, BatchMismatch) {
  Tape t;
  EXPECT_THROW(consistency_loss(t.constant(Tensor(Shape{2, 3}, 1.0)), t.constant(Tensor(Shape{3, 3}, 1.0)),
                                t.constant(Tensor(Shape{2, 3}, 1.0))),
               ShapeError);
}

TEST(Spd, IdenticalIsZero) {
  Rng rng(4);
  for (double tau : {0.5, 1.0, 2.0, 7.0}) {
    Tape t;
    const Tensor x = random_tensor({12}, rng, 3.0);
    const std::vector<Var> s{t.constant(x)}, te{t.constant(x)};
    EXPECT_EQ(spd_loss(s, te, 4, tau).value()[0], 0.0);
  }
}

TEST(Spd, TwoPointGolden) {
  Tape t;
  const std::vector<Var> s{t.constant(Tensor::vector({2, 0}))}, te{t.constant(Tensor::vector({0, 2}))};
  EXPECT_NEAR(spd_loss(s, te, 2, 2.0).value()[0], 1.84847, 1e-4);
}

TEST(Spd, UniformTeacherIsLogWidthMinusEntropy) {
  Tape t;
  const std::vector<Var> s{t.constant(Tensor::vector({10, 0, 0, 0}))}, te{t.constant(Tensor(Shape{4}, 0.0))};
  const auto p = oracle::softmax({10, 0, 0, 0});
  double h = 0.0;
  for (double q : p) h -= q * std::log(q);
  EXPECT_NEAR(spd_loss(s, te, 4, 1.0).value()[0], std::log(4.0) - h, 1e-14);
}

TEST(Spd, MaskedQueriesContributeNothing) {
  Rng rng(5);
  const Tensor a = random_tensor({8}, rng), b = random_tensor({8}, rng), c = random_tensor({8}, rng);
  Tape t;
  const std::vector<Var> s{t.constant(a), t.constant(b)};
  const std::vector<Var> te{t.constant(c), Var{}};
  const double got = spd_loss(s, te, 4, 2.0).value()[0];
  const double want = oracle::spd({oracle::as_vec(a), oracle::as_vec(b)}, {oracle::as_vec(c), {}}, 4, 2.0);
  EXPECT_NEAR(got, want, 1e-14);
  const std::vector<Var> none{Var{}, Var{}};
  EXPECT_EQ(spd_loss(s, none, 4, 2.0).value()[0], 0.0);
}

TEST(Spd, NonNegativeAndMatchesOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t width = 1 + rng.below(4), sites = 1 + rng.below(5), batch = 1 + rng.below(3);
    const double tau = 0.2 + 4.0 * rng.uniform();
    Tape t;
    std::vector<Var> s, te;
    std::vector<oracle::Vec> os, ot;
    for (std::size_t q = 0; q < batch; ++q) {
      s.push_back(t.constant(random_tensor({width * sites}, rng, 3.0)));
      te.push_back(t.constant(random_tensor({width * sites}, rng, 3.0)));
      os.push_back(oracle::as_vec(s.back().value()));
      ot.push_back(oracle::as_vec(te.back().value()));
    }
    const double v = spd_loss(s, te, width, tau).value()[0];
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(v, oracle::spd(os, ot, width, tau), 1e-12);
  }
}

TEST(Spd, TeacherGetsNoGradient) {
  Rng rng(7);
  Tape t;
  Var student = t.leaf(random_tensor({8}, rng)), teacher = t.leaf(random_tensor({8}, rng));
  const std::vector<Var> s{student}, te{teacher};
  Var loss = spd_loss(s, te, 4, 2.0);
  t.backward(loss);
  EXPECT_GT(max_abs_diff(t.grad_of(student), Tensor(Shape{8}, 0.0)), 0.0);
  EXPECT_EQ(t.grad_of(teacher), Tensor(Shape{8}, 0.0));
}

TEST(Losses, StudentGradients) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    ParamStore p;
    p.add("fq", random_tensor({3, 4}, rng));
    p.add("ft", random_tensor({3, 4}, rng));
    p.add("fin", random_tensor({3, 4}, rng));
    p.add("s0", random_tensor({8}, rng));
    p.add("s1", random_tensor({8}, rng));
    const Tensor t0 = random_tensor({8}, rng), t1 = random_tensor({8}, rng);
    const auto r = check_gradients(
        [&](Tape& t) {
          const std::vector<Var> s{t.param("s0"), t.param("s1")}, te{t.constant(t0), t.constant(t1)};
          return add(add(bbc_loss(t.param("fq"), t.param("ft"), 10.0),
                         consistency_loss(t.param("fq"), t.param("ft"), t.param("fin"))),
                     scale(spd_loss(s, te, 4, 2.0), 0.6));
        },
        p);
    EXPECT_TRUE(r.passed) << seed << " " << r.max_rel_error;
  }
}

TEST(TotalLoss, Examples) {
  const auto a = total_loss(1, 2, 3, 0.6);
  EXPECT_NEAR(a.l_total, 4.8, 1e-12);
  EXPECT_EQ(total_loss(1, 2, 3, 0.0).l_total, 3.0);
  EXPECT_NEAR(total_loss(0.5, 0.25, 0.25, 1.0).l_total, 1.0, 1e-12);
  EXPECT_EQ(a.lambda, 0.6);
}

}  // namespace
}  // namespace sdfn
