#include "sdfn/model.hpp"

namespace sdfn {
namespace {

EncoderConfig encoder_config(const TrainConfig& c, std::size_t vocab) {
  EncoderConfig e;
  e.grid = GridSpec{c.grid, c.grid, c.channels};
  e.dim = c.dim;
  e.raw_dim = c.effective_raw_dim();
  e.vocab = vocab;
  return e;
}

}  // namespace

SdfnModel::SdfnModel(const TrainConfig& config, std::size_t vocab)
    : image_(encoder_config(config, vocab)), text_(encoder_config(config, vocab)), network_(config.network()) {}

ParamStore SdfnModel::init_params(std::uint64_t seed) const {
  ParamStore params;
  Rng rng(mix_seed(seed, 0x696e6974));
  image_.init(params, rng);
  text_.init(params, rng);
  network_.init(params, rng);
  return params;
}

EncodedQuery SdfnModel::encode_query(Tape& tape, const RawImage& reference, const TokenSeq& tokens,
                                     std::uint64_t query_id) const {
  auto [words, sentence] = text_.encode(tape, tokens);
  return {image_.encode(tape, reference), words, sentence, query_id};
}

ForwardResult SdfnModel::forward(Tape& tape, const EncodedQuery& query, const RoutingOverride* forced) const {
  return network_.forward(tape, query, forced);
}

Var SdfnModel::encode_target(Tape& tape, const RawImage& target) const { return image_.encode_target(tape, target); }

}  // namespace sdfn
