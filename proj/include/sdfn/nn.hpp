#pragma once

#include <string>

#include "sdfn/autodiff.hpp"
#include "sdfn/ops.hpp"
#include "sdfn/rng.hpp"

namespace sdfn {

inline constexpr double kLayerNormEps = 1e-5;

// Layer descriptors hold parameter names and dimensions only; values live in a
// ParamStore and are pulled onto a tape when the layer is applied.

/// Fills a fresh [rows x cols] tensor from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

struct Linear {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;

  std::string weight_name() const { return name + ".w"; }
  std::string bias_name() const { return name + ".b"; }
  void init(ParamStore& params, Rng& rng) const;
  Var operator()(Tape& tape, Var x) const;
};

struct LayerNorm {
  std::string name;
  std::size_t dim = 0;
  double eps = kLayerNormEps;

  void init(ParamStore& params) const;
  Var operator()(Tape& tape, Var x) const;
};

/// Query/key/value projections plus an output projection, all [dim x dim].
struct AttentionParams {
  std::string name;
  std::size_t dim = 0;
  std::size_t heads = 4;

  void validate() const;
  void init(ParamStore& params, Rng& rng) const;
};

/// Scaled dot-product attention per head with scale 1/sqrt(dim/heads).
/// queries [n x dim], keys/values [m x dim] -> [n x dim].
Var multi_head_attention(Tape& tape, Var queries, Var keys, Var values, const AttentionParams& attn);

/// Two affine maps dim -> hidden -> dim with ReLU between.
struct FeedForward {
  std::string name;
  std::size_t dim = 0;
  std::size_t hidden = 0;

  Linear first() const { return {name + ".fc1", dim, hidden, true}; }
  Linear second() const { return {name + ".fc2", hidden, dim, true}; }
  void init(ParamStore& params, Rng& rng) const;
  Var operator()(Tape& tape, Var x) const;
};

}  // namespace sdfn
