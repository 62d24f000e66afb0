#pragma once

#include <cstdint>
#include <utility>

#include "sdfn/data.hpp"
#include "sdfn/nn.hpp"

namespace sdfn {

struct EncoderConfig {
  GridSpec grid;
  std::size_t dim = 32;
  std::size_t raw_dim = 64;  // width of the pre-projection feature map
  std::size_t vocab = 0;
};

/// Per-query inputs to the fusion network.
struct EncodedQuery {
  Var image;     // X_r  [K x D]
  Var words;     // T_w  [L x D]
  Var sentence;  // T_s  [D]
  std::uint64_t query_id = 0;
};

// Shared image encoder for reference and target images. Each grid position
// goes through the same two-layer affine stack (ReLU after each) into a
// raw_dim feature map, then a bias-free per-position projection to D. A
// learned per-position embedding is added before the first ReLU so pooled
// features can tell attributes apart.
class ImageEncoder {
 public:
  explicit ImageEncoder(EncoderConfig config);

  void init(ParamStore& params, Rng& rng) const;
  /// X_r [K x D], K = height * width.
  Var encode(Tape& tape, const RawImage& image) const;
  /// X_t [D]: row mean of encode().
  Var encode_target(Tape& tape, const RawImage& image) const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  Linear first_;
  Linear second_;
  Linear projection_;
};

// Word embeddings followed by a single-layer LSTM with hidden width D and a
// zero initial state. T_w stacks the hidden states; T_s max-pools them.
class TextEncoder {
 public:
  explicit TextEncoder(EncoderConfig config);

  void init(ParamStore& params, Rng& rng) const;
  std::pair<Var, Var> encode(Tape& tape, const TokenSeq& tokens) const;

 private:
  EncoderConfig config_;
};

}  // namespace sdfn
