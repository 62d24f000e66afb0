#include "sdfn/nn.hpp"

#include <cmath>

#include "sdfn/errors.hpp"

namespace sdfn {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void Linear::init(ParamStore& params, Rng& rng) const {
  params.add(weight_name(), uniform_init(Shape{out, in}, in, rng));
  if (bias) params.add(bias_name(), Tensor(Shape{out}, 0.0));
}

Var Linear::operator()(Tape& tape, Var x) const {
  return linear(x, tape.param(weight_name()), bias ? tape.param(bias_name()) : Var{});
}

void LayerNorm::init(ParamStore& params) const {
  // Gain 1/sqrt(D): normalized rows start with unit L2 norm rather than norm
  // sqrt(D). With unit gain the unnormalized Gram consistency term starts two
  // orders of magnitude above the retrieval loss and collapses the features.
  params.add(name + ".gain", Tensor(Shape{dim}, 1.0 / std::sqrt(static_cast<double>(dim))));
  params.add(name + ".bias", Tensor(Shape{dim}, 0.0));
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return layer_norm(x, tape.param(name + ".gain"), tape.param(name + ".bias"), eps);
}

void AttentionParams::validate() const {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention '" + name + "': head_count " + std::to_string(heads) + " does not divide D=" +
                      std::to_string(dim));
  }
}

void AttentionParams::init(ParamStore& params, Rng& rng) const {
  validate();
  for (const char* p : {".wq", ".wk", ".wv", ".wo"}) params.add(name + p, uniform_init(Shape{dim, dim}, dim, rng));
}

Var multi_head_attention(Tape& tape, Var queries, Var keys, Var values, const AttentionParams& attn) {
  attn.validate();
  if (keys.shape() != values.shape()) {
    throw ShapeError("attention: keys " + shape_str(keys.shape()) + " vs values " + shape_str(values.shape()));
  }
  const Var q = linear(queries, tape.param(attn.name + ".wq"));
  const Var k = linear(keys, tape.param(attn.name + ".wk"));
  const Var v = linear(values, tape.param(attn.name + ".wv"));
  if (q.value().rank() != 2 || k.value().rank() != 2) {
    throw ShapeError("attention: queries and keys must be matrices");
  }
  const std::size_t head_dim = attn.dim / attn.heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> heads;
  heads.reserve(attn.heads);
  for (std::size_t h = 0; h < attn.heads; ++h) {
    Var qh = attn.heads == 1 ? q : slice_cols(q, h * head_dim, head_dim);
    Var kh = attn.heads == 1 ? k : slice_cols(k, h * head_dim, head_dim);
    Var vh = attn.heads == 1 ? v : slice_cols(v, h * head_dim, head_dim);
    Var weights = softmax(scale(matmul_nt(qh, kh), scale_factor), 1);
    heads.push_back(matmul(weights, vh));
  }
  Var merged = heads.size() == 1 ? heads[0] : concat_cols(heads);
  return linear(merged, tape.param(attn.name + ".wo"));
}

void FeedForward::init(ParamStore& params, Rng& rng) const {
  first().init(params, rng);
  second().init(params, rng);
}

Var FeedForward::operator()(Tape& tape, Var x) const { return second()(tape, relu(first()(tape, x))); }

}  // namespace sdfn
