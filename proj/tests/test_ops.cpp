#include <gtest/gtest.h>

#include <cmath>

#include "sdfn/errors.hpp"
#include "sdfn/gradcheck.hpp"
#include "sdfn/ops.hpp"
#include "test_util.hpp"

namespace sdfn {
namespace {

using testing::random_tensor;

TEST(Ops, MatmulIdentity) {
  Tape t;
  Var out = matmul(t.constant(Tensor::identity(2)), t.constant(Tensor::matrix({{5, 6}, {7, 8}})));
  EXPECT_EQ(out.value(), Tensor::matrix({{5, 6}, {7, 8}}));
}

TEST(Ops, MeanPoolAxis0) {
  Tape t;
  Var out = mean_axis(t.constant(Tensor::matrix({{1, 2}, {3, 4}})), 0);
  EXPECT_EQ(out.value(), Tensor::vector({2, 3}));
}

TEST(Ops, MaxPoolAxis0) {
  Tape t;
  Var out = max_axis(t.constant(Tensor::matrix({{1, 5}, {3, 4}})), 0);
  EXPECT_EQ(out.value(), Tensor::vector({3, 5}));
}

TEST(Ops, ConcatBroadcastsVector) {
  Tape t;
  Var out = concat_cols({t.constant(Tensor(Shape{4, 3}, 1.0)), t.constant(Tensor::vector({7, 8}))});
  EXPECT_EQ(out.shape(), (Shape{4, 5}));
  EXPECT_EQ(out.value().at(3, 4), 8.0);
}

TEST(Ops, BroadcastAddOverLeadingAxis) {
  Tape t;
  Var out = add(t.constant(Tensor(Shape{3, 2}, 1.0)), t.constant(Tensor::vector({1, 2})));
  EXPECT_EQ(out.value().at(2, 1), 3.0);
}

TEST(Ops, ShapeErrorNamesOpAndShapes) {
  Tape t;
  try {
    matmul(t.constant(Tensor(Shape{2, 3})), t.constant(Tensor(Shape{2, 3})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(t.constant(Tensor(Shape{3, 2})), t.constant(Tensor(Shape{3}))), ShapeError);
}

TEST(Softmax, Symmetric) {
  Tape t;
  Var p = softmax(t.constant(Tensor::vector({0, 0})), 0);
  EXPECT_EQ(p.value(), Tensor::vector({0.5, 0.5}));
}

TEST(Softmax, KnownValues) {
  Tape t;
  const Tensor p = softmax(t.constant(Tensor::vector({1, 2, 3})), 0).value();
  EXPECT_NEAR(p[0], 0.09003, 1e-5);
  EXPECT_NEAR(p[1], 0.24473, 1e-5);
  EXPECT_NEAR(p[2], 0.66524, 1e-5);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
  Tape t;
  const Tensor p = softmax(t.constant(Tensor::vector({1000, 0})), 0).value();
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 0.0);
}

TEST(Softmax, SimplexProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Tape t;
    const Tensor x = random_tensor({3, 6}, rng, 1e3 * rng.uniform());
    const Tensor p = softmax(t.constant(x), 1).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double v : p.row(r)) {
        ASSERT_GE(v, 0.0);
        s += v;
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, ConstantSliceMapsToZero) {
  Tape t;
  const Tensor y = layer_norm(t.constant(Tensor::vector({5, 5, 5})), t.constant(Tensor(Shape{3}, 1.0)),
                              t.constant(Tensor(Shape{3}, 0.0)), 1e-5)
                       .value();
  EXPECT_EQ(y, Tensor(Shape{3}, 0.0));
}

TEST(LayerNorm, KnownValues) {
  Tape t;
  const Tensor y = layer_norm(t.constant(Tensor::vector({1, 2, 3})), t.constant(Tensor(Shape{3}, 1.0)),
                              t.constant(Tensor(Shape{3}, 0.0)), 0.0)
                       .value();
  EXPECT_NEAR(y[0], -1.22474, 1e-5);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], 1.22474, 1e-5);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  Rng rng(2);
  Tape t;
  const Tensor bias = random_tensor({4}, rng);
  const Tensor y =
      layer_norm(t.constant(random_tensor({3, 4}, rng)), t.constant(Tensor(Shape{4}, 0.0)), t.constant(bias), 1e-5)
          .value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y.at(r, c), bias[c]);
}

TEST(LayerNorm, UnitStatisticsAndShiftInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    const Tensor x = random_tensor({2, 6}, rng, 3.0);
    Tensor shifted = x;
    const double c = 10.0 * rng.normal();
    for (double& v : shifted.data()) v += c;
    Var g = t.constant(Tensor(Shape{6}, 1.0)), b = t.constant(Tensor(Shape{6}, 0.0));
    const Tensor y = layer_norm(t.constant(x), g, b, 1e-5).value();
    const Tensor ys = layer_norm(t.constant(shifted), g, b, 1e-5).value();
    EXPECT_LT(max_abs_diff(y, ys), 1e-9);
    for (std::size_t r = 0; r < 2; ++r) {
      double mu = 0, var = 0;
      for (double v : y.row(r)) mu += v / 6;
      for (double v : y.row(r)) var += (v - mu) * (v - mu) / 6;
      EXPECT_NEAR(mu, 0.0, 1e-12);
      EXPECT_NEAR(var, 1.0, 1e-3);
    }
  }
}

TEST(Backward, ProductRule) {
  ParamStore p;
  p.add("w", Tensor::scalar(3.0));
  Tape t(&p);
  Var loss = mul(t.param("w"), t.constant(Tensor::scalar(2.0)));
  const GradientMap g = t.backward(loss);
  EXPECT_EQ(g.at("w").item(), 2.0);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Rng rng(4);
  ParamStore p;
  p.add("z", random_tensor({5}, rng));
  Tape t(&p);
  const GradientMap g = t.backward(sum(softmax(t.param("z"), 0)));
  for (double v : g.at("z").data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Backward, UnreachedParameterGetsZeros) {
  ParamStore p;
  p.add("a", Tensor::vector({1, 2}));
  p.add("b", Tensor(Shape{3}, 4.0));
  Tape t(&p);
  const GradientMap g = t.backward(sum(t.param("a")));
  EXPECT_EQ(g.at("b"), Tensor(Shape{3}, 0.0));
  EXPECT_EQ(g.at("a"), Tensor(Shape{2}, 1.0));
}

TEST(Backward, RejectsNonScalarLoss) {
  ParamStore p;
  p.add("a", Tensor::vector({1, 2}));
  Tape t(&p);
  EXPECT_THROW(t.backward(t.param("a")), ShapeError);
}

TEST(Backward, NonFiniteValueRaises) {
  Tape t;
  EXPECT_THROW(log(t.constant(Tensor::vector({-1.0}))), NumericsError);
}

TEST(GradCheck, QuadraticIsExact) {
  ParamStore p;
  p.add("w", Tensor::scalar(3.0));
  Tape t(&p);
  const GradientMap g = t.backward(square(t.param("w")));
  EXPECT_EQ(g.at("w").item(), 6.0);
  const GradCheckReport r = check_gradients([](Tape& tp) { return square(tp.param("w")); }, p);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-7 / 6.0);
}

TEST(GradCheck, ConstantObjective) {
  ParamStore p;
  p.add("w", Tensor::vector({1, 2, 3}));
  const GradCheckReport r = check_gradients([](Tape& tp) { return tp.constant(Tensor::scalar(4.0)); }, p);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.blocks.at(0).max_abs_grad, 0.0);
}

TEST(GradCheck, NonFiniteObjectiveRaises) {
  ParamStore p;
  p.add("w", Tensor::scalar(1.0));
  Objective f = [](const ParamStore&) { return Probe{std::nan(""), 0}; };
  GradientMap g{{"w", Tensor::scalar(0.0)}};
  EXPECT_THROW(finite_diff_check(f, p, g), NumericsError);
}

TEST(GradCheck, DetectsWrongGradient) {
  ParamStore p;
  p.add("w", Tensor::scalar(3.0));
  Objective f = [](const ParamStore& ps) { return Probe{ps.at("w").item() * ps.at("w").item(), 0}; };
  GradientMap wrong{{"w", Tensor::scalar(5.0)}};
  EXPECT_FALSE(finite_diff_check(f, p, wrong).passed);
}

TEST(GradCheck, LayerNormComposite) {
  Rng rng(1);
  ParamStore p;
  p.add("x", random_tensor({3, 5}, rng));
  p.add("g", random_tensor({5}, rng));
  p.add("b", random_tensor({5}, rng));
  const Tensor w = random_tensor({3, 5}, rng);
  const auto r = check_gradients(
      [&](Tape& t) { return sum(mul(tanh(layer_norm(t.param("x"), t.param("g"), t.param("b"), 1e-5)), t.constant(w))); },
      p);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GradCheck, KinkCrossingIsRefined) {
  // relu at 5e-5 sits inside the ±1e-4 stencil; the step is refined.
  ParamStore p;
  p.add("x", Tensor::vector({5e-5, -0.3, 0.7}));
  const auto r = check_gradients([](Tape& t) { return sum(square(relu(t.param("x")))); }, p);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_EQ(r.refined, 1u);
}

// Every primitive, five seeds.
struct OpCase {
  const char* name;
  std::function<Var(Tape&, const Tensor&)> build;
};

class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  const int seed = GetParam();
  Rng rng(static_cast<std::uint64_t>(seed) + 100);
  ParamStore p;
  p.add("a", random_tensor({3, 4}, rng));
  p.add("b", random_tensor({4, 2}, rng));
  p.add("c", random_tensor({3, 4}, rng));
  p.add("v", random_tensor({4}, rng));
  p.add("u", random_tensor({3}, rng));
  p.add("pos", Tensor(Shape{3, 4}, 0.0));
  for (double& x : p.at("pos").data()) x = 0.5 + rng.uniform();
  const Tensor w34 = random_tensor({3, 4}, rng);
  const std::vector<OpCase> cases{
      {"matmul", [](Tape& t, const Tensor&) { return sum(tanh(matmul(t.param("a"), t.param("b")))); }},
      {"matmul_nt", [](Tape& t, const Tensor&) { return sum(square(matmul_nt(t.param("a"), t.param("c")))); }},
      {"transpose", [](Tape& t, const Tensor& w) { return sum(mul(transpose(transpose(t.param("a"))), t.constant(w))); }},
      {"linear", [](Tape& t, const Tensor&) { return sum(square(linear(t.param("a"), t.param("c"), t.param("u")))); }},
      {"add_sub_mul", [](Tape& t, const Tensor& w) {
         return sum(mul(sub(mul(t.param("a"), t.param("c")), add(t.param("a"), t.param("v"))), t.constant(w)));
       }},
      {"scale_mul_scalar", [](Tape& t, const Tensor& w) {
         return sum(mul(mul_scalar(scale(t.param("a"), 0.3), element(t.param("v"), 2)), t.constant(w)));
       }},
      {"relu_sigmoid_tanh", [](Tape& t, const Tensor& w) {
         return sum(mul(add(relu(t.param("a")), mul(sigmoid(t.param("c")), tanh(t.param("a")))), t.constant(w)));
       }},
      {"exp_log", [](Tape& t, const Tensor& w) { return sum(mul(log(t.param("pos")), exp(scale(t.param("a"), 0.2)))); }},
      {"reductions", [](Tape& t, const Tensor&) {
         return add(add(sum(square(sum_axis(t.param("a"), 1))), sum(square(mean_axis(t.param("a"), 0)))),
                    add(mean(t.param("c")), sum(square(max_axis(t.param("c"), 0)))));
       }},
      {"concat_slice_row", [](Tape& t, const Tensor&) {
         Var cat = concat_cols({t.param("a"), t.param("v"), t.param("c")});
         return add(sum(square(slice_cols(cat, 2, 7))), sum(square(row(cat, 1))));
       }},
      {"stack_reshape_gather", [](Tape& t, const Tensor&) {
         const std::vector<std::size_t> idx{2, 0, 2};
         Var st = stack_rows({row(t.param("a"), 1), t.param("v")});
         return add(sum(square(reshape(st, {4, 2}))), sum(tanh(gather_rows(t.param("c"), idx))));
       }},
      {"softmax_logsoftmax", [](Tape& t, const Tensor& w) {
         return add(sum(mul(softmax(t.param("a"), 1), t.constant(w))), sum(mul(log_softmax(t.param("c"), 0), t.constant(w))));
       }},
      {"l2_frobenius", [](Tape& t, const Tensor& w) {
         return add(sum(mul(l2_normalize_rows(t.param("a")), t.constant(w))), frobenius_norm(t.param("c")));
       }},
      {"weighted_sum", [](Tape& t, const Tensor& w) {
         const std::vector<Var> xs{t.param("a"), t.param("c"), t.param("pos"), t.param("a")};
         return sum(mul(weighted_sum(xs, softmax(t.param("v"), 0)), t.constant(w)));
       }},
  };
  for (const auto& c : cases) {
    const auto r = check_gradients([&](Tape& t) { return c.build(t, w34); }, p);
    EXPECT_TRUE(r.passed) << c.name << " seed " << seed << " rel " << r.max_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGrad, ::testing::Range(0, 5));

}  // namespace
}  // namespace sdfn
