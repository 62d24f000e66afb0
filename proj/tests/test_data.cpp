#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "sdfn/errors.hpp"
#include "sdfn/data.hpp"
#include "sdfn/rng.hpp"

namespace sdfn {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("sdfn_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(World, VocabularySize) {
  const auto u = generate_world(0, 4, 4);
  EXPECT_EQ(u.vocab_size(), 22u);
  std::set<std::string> names(u.vocabulary.begin(), u.vocabulary.end());
  EXPECT_EQ(names.size(), 22u);
  EXPECT_EQ(u.vocabulary[static_cast<std::size_t>(u.set_token)], "set");
  EXPECT_EQ(u.vocabulary[static_cast<std::size_t>(u.to_token)], "to");
  EXPECT_EQ(u.vocabulary[static_cast<std::size_t>(u.attribute_tokens[1])], "a1");
  EXPECT_EQ(u.vocabulary[static_cast<std::size_t>(u.value_token(2, 3))], "a2.v3");
}

TEST(World, Deterministic) {
  const auto a = generate_world(9, 4, 6), b = generate_world(9, 4, 6), c = generate_world(10, 4, 6);
  EXPECT_EQ(a.vocabulary, b.vocabulary);
  EXPECT_EQ(a.value_tokens, b.value_tokens);
  EXPECT_NE(a.vocabulary, c.vocabulary);
}

TEST(World, RejectsDegenerateAndOverflow) {
  EXPECT_THROW(generate_world(0, 1, 4), ConfigError);
  EXPECT_THROW(generate_world(0, 4, 1), ConfigError);
  EXPECT_THROW(generate_world(0, 17, 4, GridSpec{4, 4, 8}), ConfigError);
  EXPECT_THROW(generate_world(0, 4, 9, GridSpec{4, 4, 8}), ConfigError);
}

TEST(Render, NoiselessArgmaxIsValue) {
  const GridSpec grid{2, 2, 4};
  const auto u = generate_world(0, 4, 4, grid);
  const Item item{2, 0, 1, 3};
  const RawImage img = render_image(item, u, grid, 0.0, 1);
  for (std::size_t a = 0; a < 4; ++a) {
    const std::size_t r = a / 2, c = a % 2;
    for (std::size_t ch = 0; ch < 4; ++ch)
      EXPECT_EQ(img.pixels.data()[(r * 2 + c) * 4 + ch], ch == static_cast<std::size_t>(item[a]) ? 1.0 : 0.0);
  }
}

TEST(Render, OneAttributeChangesOneCell) {
  const GridSpec grid{4, 4, 8};
  const auto u = generate_world(0, 4, 6, grid);
  const RawImage a = render_image({1, 2, 3, 4}, u, grid, 0.0, 0);
  const RawImage b = render_image({1, 2, 5, 4}, u, grid, 0.0, 0);
  for (std::size_t cell = 0; cell < 16; ++cell) {
    bool differs = false;
    for (std::size_t ch = 0; ch < 8; ++ch) differs |= a.pixels.data()[cell * 8 + ch] != b.pixels.data()[cell * 8 + ch];
    EXPECT_EQ(differs, cell == 2) << cell;
  }
}

TEST(Render, SeededNoiseMatchesGenerator) {
  const GridSpec grid{2, 2, 4};
  const auto u = generate_world(0, 4, 4, grid);
  const RawImage img = render_image({0, 1, 2, 3}, u, grid, 0.1, 77);
  Rng rng(77);
  for (std::size_t i = 0; i < 16; ++i) {
    const double clean = (i % 4) == (i / 4) ? 1.0 : 0.0;
    EXPECT_EQ(img.pixels.data()[i], clean + 0.1 * rng.normal());
  }
  EXPECT_EQ(render_image({0, 1, 2, 3}, u, grid, 0.1, 77).pixels, img.pixels);
}

TEST(Render, WrongItemLength) {
  const auto u = generate_world(0, 4, 4);
  EXPECT_THROW(render_image({1, 2}, u, GridSpec{}, 0.0, 0), ShapeError);
}

TEST(Render, DistinctItemsDistinctGrids) {
  const GridSpec grid{2, 2, 4};
  const auto u = generate_world(0, 3, 3, grid);
  std::set<std::vector<double>> seen;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) {
        const RawImage img = render_image({a, b, c}, u, grid, 0.0, 0);
        seen.emplace(img.pixels.data().begin(), img.pixels.data().end());
      }
  EXPECT_EQ(seen.size(), 27u);
}

TEST(Triplets, SingleEditGrammar) {
  const auto u = generate_world(3, 4, 4);
  const TokenSeq tokens = encode_edits(u, {{1, 3}});
  ASSERT_EQ(tokens.size(), 4u);
  std::vector<std::string> words;
  for (int t : tokens) words.push_back(u.vocabulary[static_cast<std::size_t>(t)]);
  EXPECT_EQ(words, (std::vector<std::string>{"set", "a1", "to", "a1.v3"}));
}

TEST(Triplets, GoldenSeed5) {
  const auto u = generate_world(5, 4, 6);
  const auto r = generate_triplets(u, 3, 2, 5);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(record_to_line(r[0]),
            R"({"edits":[[0,4],[1,1]],"query_id":0,"reference":[0,4,4,2],"target":[4,1,4,2],"tokens":[2,24,14,29,2,3,14,10]})");
  EXPECT_EQ(record_to_line(r[1]),
            R"({"edits":[[0,3],[3,0]],"query_id":1,"reference":[5,1,0,1],"target":[3,1,0,0],"tokens":[2,24,14,16,2,6,14,11]})");
  EXPECT_EQ(record_to_line(r[2]),
            R"({"edits":[[2,2]],"query_id":2,"reference":[1,5,1,0],"target":[1,5,2,0],"tokens":[2,17,14,25]})");
}

TEST(Triplets, InvariantsHold) {
  const auto u = generate_world(6, 4, 6);
  const auto records = generate_triplets(u, 500, 3, 6, 100);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    EXPECT_EQ(r.query_id, 100 + i);
    ASSERT_GE(r.edits.size(), 1u);
    ASSERT_LE(r.edits.size(), 3u);
    std::set<int> attrs;
    for (const Edit& e : r.edits) {
      EXPECT_NE(r.reference[static_cast<std::size_t>(e.attribute)], e.value);
      attrs.insert(e.attribute);
    }
    EXPECT_EQ(attrs.size(), r.edits.size());
    EXPECT_EQ(r.target, apply_edits(r.reference, r.edits));
    EXPECT_EQ(decode_tokens(u, r.tokens), r.edits);
  }
  EXPECT_EQ(generate_triplets(u, 50, 3, 6), generate_triplets(u, 50, 3, 6));
}

TEST(Triplets, BadArguments) {
  const auto u = generate_world(0, 4, 4);
  EXPECT_THROW(generate_triplets(u, 0, 2, 0), ConfigError);
  EXPECT_THROW(generate_triplets(u, -3, 2, 0), ConfigError);
}

TEST(Triplets, DecodeRejectsMalformed) {
  const auto u = generate_world(0, 4, 4);
  TokenSeq ok = encode_edits(u, {{0, 1}});
  EXPECT_THROW(decode_tokens(u, {}), ParseError);
  EXPECT_THROW(decode_tokens(u, TokenSeq(ok.begin(), ok.begin() + 3)), ParseError);
  TokenSeq swapped = ok;
  std::swap(swapped[0], swapped[2]);
  EXPECT_THROW(decode_tokens(u, swapped), ParseError);
  TokenSeq wrong_attr = ok;
  wrong_attr[3] = u.value_token(1, 1);
  EXPECT_THROW(decode_tokens(u, wrong_attr), ParseError);
}

TEST(EvalSplit, TargetsSolvableByDecodedEdits) {
  const auto u = generate_world(8, 4, 6);
  const EvalSplit split = generate_eval_split(u, 256, 500, 2, 8, 1000);
  std::set<Item> distinct(split.gallery.begin(), split.gallery.end());
  ASSERT_EQ(distinct.size(), 256u);
  for (std::size_t q = 0; q < split.queries.size(); ++q) {
    const auto& rec = split.queries[q];
    const Item predicted = apply_edits(rec.reference, decode_tokens(u, rec.tokens));
    std::size_t hits = 0, where = 0;
    for (std::size_t g = 0; g < split.gallery.size(); ++g)
      if (split.gallery[g] == predicted) ++hits, where = g;
    ASSERT_EQ(hits, 1u);
    EXPECT_EQ(where, split.target_index[q]);
    EXPECT_NE(std::find(split.gallery.begin(), split.gallery.end(), rec.reference), split.gallery.end());
  }
}

TEST(EvalSplit, GalleryTooLarge) {
  const auto u = generate_world(0, 2, 2, GridSpec{2, 2, 4});
  EXPECT_THROW(generate_eval_split(u, 5, 1, 1, 0, 0), ConfigError);
  EXPECT_THROW(generate_eval_split(u, 4, 100, 1, 0, 0), ConfigError);
}

TEST(DatasetIo, RoundTrip) {
  const auto u = generate_world(1, 4, 6);
  const auto records = generate_triplets(u, 100, 2, 1);
  const fs::path path = scratch_dir("roundtrip") / "records.jsonl";
  write_records(path, records);
  EXPECT_EQ(read_records(path), records);
}

TEST(DatasetIo, EmptyFile) {
  const fs::path path = scratch_dir("empty") / "records.jsonl";
  std::ofstream(path).close();
  EXPECT_TRUE(read_records(path).empty());
}

TEST(DatasetIo, TruncatedLineNamesLine) {
  const auto u = generate_world(1, 4, 6);
  const auto records = generate_triplets(u, 3, 2, 1);
  const fs::path path = scratch_dir("truncated") / "records.jsonl";
  {
    std::ofstream out(path);
    out << record_to_line(records[0]) << '\n' << record_to_line(records[1]) << '\n';
    const std::string last = record_to_line(records[2]);
    out << last.substr(0, last.size() / 2);
  }
  try {
    read_records(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MissingFieldAndBadEdit) {
  EXPECT_THROW(record_from_line(R"({"query_id":1,"reference":[0],"edits":[],"target":[0]})", 4), ParseError);
  EXPECT_THROW(record_from_line(R"({"query_id":1,"reference":[0],"edits":[[1]],"target":[0],"tokens":[]})", 4),
               ParseError);
  EXPECT_THROW(read_records("/nonexistent/records.jsonl"), ParseError);
}

}  // namespace
}  // namespace sdfn
