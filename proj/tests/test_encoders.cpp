#include <gtest/gtest.h>

#include "oracle/oracle.hpp"
#include "sdfn/encoders.hpp"
#include "sdfn/errors.hpp"
#include "sdfn/ops.hpp"
#include "test_util.hpp"

namespace sdfn {
namespace {

using testing::random_tensor;

EncoderConfig small_config(std::size_t h, std::size_t c, std::size_t d, std::size_t vocab = 10) {
  EncoderConfig e;
  e.grid = GridSpec{h, h, c};
  e.dim = d;
  e.raw_dim = 2 * d;
  e.vocab = vocab;
  return e;
}

RawImage random_image(const GridSpec& g, Rng& rng) {
  return RawImage{g, random_tensor({g.height, g.width, g.channels}, rng)};
}

TEST(ImageEncoder, ShapeContract) {
  ImageEncoder enc(small_config(2, 4, 3));
  ParamStore p;
  Rng rng(0);
  enc.init(p, rng);
  Tape t(&p, false);
  EXPECT_EQ(enc.encode(t, random_image(enc.config().grid, rng)).shape(), (Shape{4, 3}));
}

TEST(ImageEncoder, ZeroProjectionGivesZeros) {
  ImageEncoder enc(small_config(2, 4, 3));
  ParamStore p;
  Rng rng(0);
  enc.init(p, rng);
  for (double& v : p.at("img.proj.w").data()) v = 0.0;
  Tape t(&p, false);
  EXPECT_EQ(enc.encode(t, random_image(enc.config().grid, rng)).value(), Tensor(Shape{4, 3}, 0.0));
}

TEST(ImageEncoder, ChannelMismatchIsConfigError) {
  ImageEncoder enc(small_config(2, 4, 3));
  ParamStore p;
  Rng rng(0);
  enc.init(p, rng);
  Tape t(&p, false);
  EXPECT_THROW(enc.encode(t, random_image(GridSpec{2, 2, 5}, rng)), ConfigError);
}

TEST(ImageEncoder, MatchesOracleSeed11) {
  ImageEncoder enc(small_config(2, 4, 3));
  ParamStore p;
  Rng rng(11);
  enc.init(p, rng);
  for (double& v : p.at("img.fc1.b").data()) v = 0.1 * rng.normal();
  const RawImage img = random_image(enc.config().grid, rng);
  Tape t(&p, false);
  const auto expect = oracle::encode_image(p, img.pixels);
  EXPECT_LT(testing::max_abs(enc.encode(t, img).value().data(), expect.v), 1e-13);
  EXPECT_LT(testing::max_abs(enc.encode_target(t, img).value().data(), oracle::mean_rows(expect)), 1e-13);
}

TEST(ImageEncoder, TargetIsRowMeanOfSharedEncoder) {
  ImageEncoder enc(small_config(4, 8, 8));
  ParamStore p;
  Rng rng(12);
  enc.init(p, rng);
  for (int i = 0; i < 100; ++i) {
    const RawImage img = random_image(enc.config().grid, rng);
    Tape t(&p, false);
    const Tensor rows = enc.encode(t, img).value();
    const Tensor target = enc.encode_target(t, img).value();
    for (std::size_t c = 0; c < 8; ++c) {
      double m = 0.0;
      for (std::size_t r = 0; r < 16; ++r) m += rows.at(r, c);
      ASSERT_NEAR(target[c], m / 16.0, 1e-12);
    }
  }
}

TEST(ImageEncoder, ConstantRowsTargetEqualsAnyRow) {
  Tape t;
  Var rows = t.constant(Tensor(Shape{4, 3}, 0.7));
  EXPECT_EQ(mean_axis(rows, 0).value(), Tensor(Shape{3}, 0.7));
}

TEST(TextEncoder, ShapesAndMaxPool) {
  TextEncoder enc(small_config(2, 4, 3));
  ParamStore p;
  Rng rng(13);
  enc.init(p, rng);
  Tape t(&p, false);
  auto [words, sentence] = enc.encode(t, {1, 4, 2, 7});
  ASSERT_EQ(words.shape(), (Shape{4, 3}));
  ASSERT_EQ(sentence.shape(), (Shape{3}));
  for (std::size_t c = 0; c < 3; ++c) {
    double m = -1e300;
    for (std::size_t r = 0; r < 4; ++r) {
      EXPECT_GE(sentence.value()[c], words.value().at(r, c));
      m = std::max(m, words.value().at(r, c));
    }
    EXPECT_EQ(sentence.value()[c], m);
  }
}

TEST(TextEncoder, MatchesOracleSeed13) {
  TextEncoder enc(small_config(2, 4, 3));
  ParamStore p;
  Rng rng(13);
  enc.init(p, rng);
  for (double& v : p.at("txt.lstm.b").data()) v = 0.2 * rng.normal();
  const std::vector<int> tokens{3, 0, 9, 5};
  Tape t(&p, false);
  auto [words, sentence] = enc.encode(t, tokens);
  const auto expect = oracle::encode_words(p, tokens);
  EXPECT_LT(testing::max_abs(words.value().data(), expect.v), 1e-14);
  EXPECT_LT(testing::max_abs(sentence.value().data(), oracle::max_rows(expect)), 1e-14);
}

TEST(TextEncoder, SingleTokenSentenceEqualsWord) {
  TextEncoder enc(small_config(2, 4, 5));
  ParamStore p;
  Rng rng(14);
  enc.init(p, rng);
  Tape t(&p, false);
  auto [words, sentence] = enc.encode(t, {6});
  EXPECT_EQ(sentence.value(), words.value().reshaped(Shape{5}));
}

TEST(TextEncoder, OrderSensitive) {
  TextEncoder enc(small_config(2, 4, 8));
  ParamStore p;
  Rng rng(15);
  enc.init(p, rng);
  Tape t(&p, false);
  const Tensor a = enc.encode(t, {2, 5}).first.value();
  const Tensor b = enc.encode(t, {5, 2}).first.value();
  EXPECT_GT(max_abs_diff(a, b), 1e-9);
}

TEST(TextEncoder, OutOfVocabulary) {
  TextEncoder enc(small_config(2, 4, 3, 10));
  ParamStore p;
  Rng rng(0);
  enc.init(p, rng);
  Tape t(&p, false);
  EXPECT_THROW(enc.encode(t, {1, 10}), VocabError);
  EXPECT_THROW(enc.encode(t, {-1}), VocabError);
}

}  // namespace
}  // namespace sdfn
