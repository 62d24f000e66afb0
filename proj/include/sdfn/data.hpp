#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdfn/tensor.hpp"

namespace sdfn {

/// Attribute values of one item, one entry per attribute.
using Item = std::vector<int>;
using TokenSeq = std::vector<int>;

/// Grid geometry shared by the renderer and the image encoder.
struct GridSpec {
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t channels = 8;

  std::size_t cells() const { return height * width; }
};

// Vocabulary: the function words "set" and "to", one name per attribute
// ("a<k>") and one name per attribute value ("a<k>.v<j>"). Indices are dense
// from 0 and their assignment is a seeded permutation.
struct ItemUniverse {
  std::size_t attributes = 0;
  std::size_t values = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> vocabulary;
  int set_token = 0;
  int to_token = 0;
  std::vector<int> attribute_tokens;
  std::vector<int> value_tokens;  // attribute-major: [a * values + v]

  std::size_t vocab_size() const { return vocabulary.size(); }
  int value_token(std::size_t attribute, std::size_t value) const {
    return value_tokens[attribute * values + value];
  }
};

/// Builds the universe; attributes must fit the grid cells and values the channels.
ItemUniverse generate_world(std::uint64_t seed, std::size_t attributes, std::size_t values,
                            const GridSpec& grid = {});

struct RawImage {
  GridSpec grid;
  Tensor pixels;  // [height, width, channels]
};

/// Attribute a occupies cell a (row-major); the cell holds the one-hot of the
/// value, zero-padded to the channel count, plus N(0, sigma) noise.
RawImage render_image(const Item& item, const ItemUniverse& universe, const GridSpec& grid, double sigma,
                      std::uint64_t seed);

struct Edit {
  int attribute = 0;
  int value = 0;
  friend bool operator==(const Edit&, const Edit&) = default;
};

struct TripletRecord {
  std::uint64_t query_id = 0;
  Item reference;
  std::vector<Edit> edits;
  Item target;
  TokenSeq tokens;
  friend bool operator==(const TripletRecord&, const TripletRecord&) = default;
};

Item apply_edits(const Item& reference, const std::vector<Edit>& edits);
/// "set <attr> to <value>" per edit.
TokenSeq encode_edits(const ItemUniverse& universe, const std::vector<Edit>& edits);
/// Inverse of encode_edits; raises ParseError on any grammar violation.
std::vector<Edit> decode_tokens(const ItemUniverse& universe, const TokenSeq& tokens);

std::vector<TripletRecord> generate_triplets(const ItemUniverse& universe, long n, std::size_t max_edits,
                                             std::uint64_t seed, std::uint64_t first_id = 0);

/// Held-out split whose references and targets are all drawn from one gallery
/// of distinct items.
struct EvalSplit {
  std::vector<Item> gallery;
  std::vector<TripletRecord> queries;
  std::vector<std::size_t> target_index;  // gallery position of each query's target
};

EvalSplit generate_eval_split(const ItemUniverse& universe, std::size_t gallery_size, std::size_t queries,
                              std::size_t max_edits, std::uint64_t seed, std::uint64_t first_id);

// Line-delimited JSON, one record per line with the fields
// query_id, reference, edits ([[attribute, value], ...]), target, tokens.
void write_records(const std::filesystem::path& path, const std::vector<TripletRecord>& records);
std::vector<TripletRecord> read_records(const std::filesystem::path& path);
std::string record_to_line(const TripletRecord& record);
TripletRecord record_from_line(const std::string& line, std::size_t line_number);

}  // namespace sdfn
