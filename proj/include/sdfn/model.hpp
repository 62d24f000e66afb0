#pragma once

#include <cstdint>

#include "sdfn/config.hpp"
#include "sdfn/encoders.hpp"
#include "sdfn/router.hpp"

namespace sdfn {

/// Encoders plus the dynamic fusion network, bound to one TrainConfig.
class SdfnModel {
 public:
  SdfnModel(const TrainConfig& config, std::size_t vocab);

  ParamStore init_params(std::uint64_t seed) const;

  EncodedQuery encode_query(Tape& tape, const RawImage& reference, const TokenSeq& tokens,
                            std::uint64_t query_id) const;
  ForwardResult forward(Tape& tape, const EncodedQuery& query, const RoutingOverride* forced = nullptr) const;
  Var encode_target(Tape& tape, const RawImage& target) const;

  const ImageEncoder& image_encoder() const { return image_; }
  const TextEncoder& text_encoder() const { return text_; }
  const FusionNetwork& network() const { return network_; }

 private:
  ImageEncoder image_;
  TextEncoder text_;
  FusionNetwork network_;
};

}  // namespace sdfn
