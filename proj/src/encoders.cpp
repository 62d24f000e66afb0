#include "sdfn/encoders.hpp"

#include "sdfn/errors.hpp"

namespace sdfn {

ImageEncoder::ImageEncoder(EncoderConfig config)
    : config_(config),
      first_{"img.fc1", config.grid.channels, config.raw_dim, true},
      second_{"img.fc2", config.raw_dim, config.raw_dim, true},
      projection_{"img.proj", config.raw_dim, config.dim, false} {}

void ImageEncoder::init(ParamStore& params, Rng& rng) const {
  first_.init(params, rng);
  params.add("img.pos", uniform_init(Shape{config_.grid.cells(), config_.raw_dim}, config_.grid.channels, rng));
  second_.init(params, rng);
  projection_.init(params, rng);
}

Var ImageEncoder::encode(Tape& tape, const RawImage& image) const {
  const Shape expected{config_.grid.height, config_.grid.width, config_.grid.channels};
  if (image.pixels.shape() != expected) {
    if (image.pixels.rank() == 3 && image.pixels.dim(2) != config_.grid.channels) {
      throw ConfigError("image has " + std::to_string(image.pixels.dim(2)) + " channels, encoder expects " +
                        std::to_string(config_.grid.channels));
    }
    throw ShapeError("image " + shape_str(image.pixels.shape()) + " does not match encoder grid " +
                     shape_str(expected));
  }
  Var x = tape.constant(image.pixels.reshaped(Shape{config_.grid.cells(), config_.grid.channels}));
  Var h = relu(add(first_(tape, x), tape.param("img.pos")));
  h = relu(second_(tape, h));
  return projection_(tape, h);
}

Var ImageEncoder::encode_target(Tape& tape, const RawImage& image) const {
  return mean_axis(encode(tape, image), 0);
}

TextEncoder::TextEncoder(EncoderConfig config) : config_(config) {}

void TextEncoder::init(ParamStore& params, Rng& rng) const {
  const std::size_t d = config_.dim;
  params.add("txt.embed", uniform_init(Shape{config_.vocab, d}, 1, rng));
  params.add("txt.lstm.w_ih", uniform_init(Shape{4 * d, d}, d, rng));
  params.add("txt.lstm.w_hh", uniform_init(Shape{4 * d, d}, d, rng));
  params.add("txt.lstm.b", Tensor(Shape{4 * d}, 0.0));
}

std::pair<Var, Var> TextEncoder::encode(Tape& tape, const TokenSeq& tokens) const {
  if (tokens.empty()) throw ShapeError("text encoder: empty token sequence");
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab) {
      throw VocabError("token " + std::to_string(t) + " outside vocabulary of size " + std::to_string(config_.vocab));
    }
    ids.push_back(static_cast<std::size_t>(t));
  }
  const std::size_t d = config_.dim;
  Var embedded = gather_rows(tape.param("txt.embed"), ids);
  // Input contributions for every step at once: [L x 4D].
  Var pre = linear(embedded, tape.param("txt.lstm.w_ih"), tape.param("txt.lstm.b"));
  Var w_hh = tape.param("txt.lstm.w_hh");
  Var h, c;
  std::vector<Var> states;
  states.reserve(ids.size());
  for (std::size_t step = 0; step < ids.size(); ++step) {
    Var gates = row(pre, step);
    if (h.valid()) gates = add(gates, linear(h, w_hh));
    Var in_gate = sigmoid(slice_cols(gates, 0, d));
    Var forget_gate = sigmoid(slice_cols(gates, d, d));
    Var candidate = tanh(slice_cols(gates, 2 * d, d));
    Var out_gate = sigmoid(slice_cols(gates, 3 * d, d));
    c = c.valid() ? add(mul(forget_gate, c), mul(in_gate, candidate)) : mul(in_gate, candidate);
    h = mul(out_gate, tanh(c));
    states.push_back(h);
  }
  Var words = stack_rows(states);
  return {words, max_axis(words, 0)};
}

}  // namespace sdfn
