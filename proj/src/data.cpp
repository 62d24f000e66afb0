#include "sdfn/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "sdfn/errors.hpp"
#include "sdfn/rng.hpp"

namespace sdfn {

ItemUniverse generate_world(std::uint64_t seed, std::size_t attributes, std::size_t values, const GridSpec& grid) {
  if (attributes < 2 || values < 2) {
    throw ConfigError("world needs at least 2 attributes and 2 values, got A=" + std::to_string(attributes) +
                      " V=" + std::to_string(values));
  }
  if (attributes > grid.cells()) {
    throw ConfigError("A=" + std::to_string(attributes) + " attributes exceed the " + std::to_string(grid.cells()) +
                      " grid cells");
  }
  if (values > grid.channels) {
    throw ConfigError("V=" + std::to_string(values) + " values exceed the " + std::to_string(grid.channels) +
                      " channels");
  }
  std::vector<std::string> names{"set", "to"};
  for (std::size_t a = 0; a < attributes; ++a) names.push_back("a" + std::to_string(a));
  for (std::size_t a = 0; a < attributes; ++a)
    for (std::size_t v = 0; v < values; ++v) names.push_back("a" + std::to_string(a) + ".v" + std::to_string(v));

  std::vector<int> slot(names.size());
  std::iota(slot.begin(), slot.end(), 0);
  Rng rng(mix_seed(seed, 0x776f726c64));
  shuffle(slot, rng);

  ItemUniverse u;
  u.attributes = attributes;
  u.values = values;
  u.seed = seed;
  u.vocabulary.resize(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) u.vocabulary[slot[i]] = names[i];
  u.set_token = slot[0];
  u.to_token = slot[1];
  for (std::size_t a = 0; a < attributes; ++a) u.attribute_tokens.push_back(slot[2 + a]);
  for (std::size_t i = 0; i < attributes * values; ++i) u.value_tokens.push_back(slot[2 + attributes + i]);
  return u;
}

RawImage render_image(const Item& item, const ItemUniverse& universe, const GridSpec& grid, double sigma,
                      std::uint64_t seed) {
  if (item.size() != universe.attributes) {
    throw ShapeError("render_image: item has " + std::to_string(item.size()) + " attributes, universe has " +
                     std::to_string(universe.attributes));
  }
  if (universe.attributes > grid.cells() || universe.values > grid.channels) {
    throw ConfigError("render_image: universe does not fit the grid");
  }
  RawImage img{grid, Tensor(Shape{grid.height, grid.width, grid.channels})};
  auto px = img.pixels.data();
  for (std::size_t a = 0; a < item.size(); ++a) {
    if (item[a] < 0 || static_cast<std::size_t>(item[a]) >= universe.values) {
      throw ShapeError("render_image: value " + std::to_string(item[a]) + " out of range");
    }
    px[a * grid.channels + static_cast<std::size_t>(item[a])] = 1.0;
  }
  if (sigma > 0.0) {
    Rng rng(seed);
    for (auto& v : px) v += sigma * rng.normal();
  }
  return img;
}

Item apply_edits(const Item& reference, const std::vector<Edit>& edits) {
  Item out = reference;
  for (const Edit& e : edits) out.at(static_cast<std::size_t>(e.attribute)) = e.value;
  return out;
}

TokenSeq encode_edits(const ItemUniverse& universe, const std::vector<Edit>& edits) {
  TokenSeq tokens;
  for (const Edit& e : edits) {
    tokens.push_back(universe.set_token);
    tokens.push_back(universe.attribute_tokens.at(static_cast<std::size_t>(e.attribute)));
    tokens.push_back(universe.to_token);
    tokens.push_back(universe.value_token(static_cast<std::size_t>(e.attribute), static_cast<std::size_t>(e.value)));
  }
  return tokens;
}

std::vector<Edit> decode_tokens(const ItemUniverse& universe, const TokenSeq& tokens) {
  if (tokens.empty() || tokens.size() % 4 != 0) {
    throw ParseError("token sequence of length " + std::to_string(tokens.size()) + " is not a list of edits");
  }
  auto attribute_of = [&](int tok) -> int {
    auto it = std::find(universe.attribute_tokens.begin(), universe.attribute_tokens.end(), tok);
    return it == universe.attribute_tokens.end() ? -1 : static_cast<int>(it - universe.attribute_tokens.begin());
  };
  std::vector<Edit> edits;
  for (std::size_t i = 0; i < tokens.size(); i += 4) {
    const int attr = attribute_of(tokens[i + 1]);
    if (tokens[i] != universe.set_token || attr < 0 || tokens[i + 2] != universe.to_token) {
      throw ParseError("malformed edit at token " + std::to_string(i));
    }
    int value = -1;
    for (std::size_t v = 0; v < universe.values; ++v) {
      if (universe.value_token(static_cast<std::size_t>(attr), v) == tokens[i + 3]) value = static_cast<int>(v);
    }
    if (value < 0) throw ParseError("token " + std::to_string(i + 3) + " is not a value of a" + std::to_string(attr));
    edits.push_back({attr, value});
  }
  return edits;
}

namespace {

Item random_item(const ItemUniverse& u, Rng& rng) {
  Item item(u.attributes);
  for (auto& v : item) v = static_cast<int>(rng.below(u.values));
  return item;
}

std::vector<Edit> random_edits(const ItemUniverse& u, const Item& reference, std::size_t max_edits, Rng& rng) {
  const std::size_t count = 1 + rng.below(std::min(max_edits, u.attributes));
  std::vector<int> attrs(u.attributes);
  std::iota(attrs.begin(), attrs.end(), 0);
  shuffle(attrs, rng);
  std::vector<Edit> edits;
  for (std::size_t k = 0; k < count; ++k) {
    const int a = attrs[k];
    // Draw from the V-1 values that differ from the current one.
    int v = static_cast<int>(rng.below(u.values - 1));
    if (v >= reference[static_cast<std::size_t>(a)]) ++v;
    edits.push_back({a, v});
  }
  return edits;
}

}  // namespace

std::vector<TripletRecord> generate_triplets(const ItemUniverse& universe, long n, std::size_t max_edits,
                                             std::uint64_t seed, std::uint64_t first_id) {
  if (n <= 0) throw ConfigError("generate_triplets: n must be positive");
  if (max_edits == 0) throw ConfigError("generate_triplets: max_edits must be positive");
  Rng rng(mix_seed(seed, 0x7472697073));
  std::vector<TripletRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    TripletRecord r;
    r.query_id = first_id + static_cast<std::uint64_t>(i);
    r.reference = random_item(universe, rng);
    r.edits = random_edits(universe, r.reference, max_edits, rng);
    r.target = apply_edits(r.reference, r.edits);
    r.tokens = encode_edits(universe, r.edits);
    out.push_back(std::move(r));
  }
  return out;
}

EvalSplit generate_eval_split(const ItemUniverse& universe, std::size_t gallery_size, std::size_t queries,
                              std::size_t max_edits, std::uint64_t seed, std::uint64_t first_id) {
  double space = 1.0;
  for (std::size_t a = 0; a < universe.attributes; ++a) space *= static_cast<double>(universe.values);
  if (gallery_size == 0 || static_cast<double>(gallery_size) > space) {
    throw ConfigError("gallery size " + std::to_string(gallery_size) + " exceeds the item space");
  }
  Rng rng(mix_seed(seed, 0x6576616c));
  EvalSplit split;
  std::set<Item> seen;
  while (split.gallery.size() < gallery_size) {
    Item item = random_item(universe, rng);
    if (seen.insert(item).second) split.gallery.push_back(std::move(item));
  }

  // Every ordered pair within the edit budget is a candidate query.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t r = 0; r < split.gallery.size(); ++r) {
    for (std::size_t t = 0; t < split.gallery.size(); ++t) {
      std::size_t diff = 0;
      for (std::size_t a = 0; a < universe.attributes; ++a) diff += split.gallery[r][a] != split.gallery[t][a];
      if (diff >= 1 && diff <= max_edits) pairs.emplace_back(r, t);
    }
  }
  if (pairs.size() < queries) {
    throw ConfigError("gallery admits only " + std::to_string(pairs.size()) + " queries, " +
                      std::to_string(queries) + " requested");
  }
  shuffle(pairs, rng);
  for (std::size_t q = 0; q < queries; ++q) {
    const auto [r, t] = pairs[q];
    TripletRecord rec;
    rec.query_id = first_id + q;
    rec.reference = split.gallery[r];
    rec.target = split.gallery[t];
    for (std::size_t a = 0; a < universe.attributes; ++a) {
      if (rec.reference[a] != rec.target[a]) rec.edits.push_back({static_cast<int>(a), rec.target[a]});
    }
    shuffle(rec.edits, rng);
    rec.tokens = encode_edits(universe, rec.edits);
    split.queries.push_back(std::move(rec));
    split.target_index.push_back(t);
  }
  return split;
}

std::string record_to_line(const TripletRecord& record) {
  nlohmann::json edits = nlohmann::json::array();
  for (const Edit& e : record.edits) edits.push_back({e.attribute, e.value});
  nlohmann::json j = {{"query_id", record.query_id},
                      {"reference", record.reference},
                      {"edits", edits},
                      {"target", record.target},
                      {"tokens", record.tokens}};
  return j.dump();
}

TripletRecord record_from_line(const std::string& line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number) + ": ";
  try {
    const auto j = nlohmann::json::parse(line);
    TripletRecord r;
    r.query_id = j.at("query_id").get<std::uint64_t>();
    r.reference = j.at("reference").get<Item>();
    for (const auto& e : j.at("edits")) {
      if (!e.is_array() || e.size() != 2) throw ParseError(where + "edit must be [attribute, value]");
      r.edits.push_back({e[0].get<int>(), e[1].get<int>()});
    }
    r.target = j.at("target").get<Item>();
    r.tokens = j.at("tokens").get<TokenSeq>();
    return r;
  } catch (const ParseError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + e.what());
  }
}

void write_records(const std::filesystem::path& path, const std::vector<TripletRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << record_to_line(r) << '\n';
}

std::vector<TripletRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<TripletRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(record_from_line(line, number));
  }
  return out;
}

}  // namespace sdfn
