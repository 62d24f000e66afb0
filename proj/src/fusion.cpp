#include "sdfn/fusion.hpp"

#include "sdfn/errors.hpp"

namespace sdfn {

std::string_view module_name(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::kCam: return "cam";
    case ModuleKind::kJrm: return "jrm";
    case ModuleKind::kGtm: return "gtm";
    case ModuleKind::kRcm: return "rcm";
  }
  return "?";
}

std::optional<ModuleKind> module_from_name(std::string_view name) {
  for (ModuleKind k : kModuleOrder) {
    if (module_name(k) == name) return k;
  }
  return std::nullopt;
}

void JointReasoning::init(ParamStore& params, Rng& rng) const {
  concat_projection().init(params, rng);
  attention().init(params, rng);
  ffn().init(params, rng);
}

Var JointReasoning::attended(Tape& tape, Var x, Var sentence) const {
  if (sentence.value().rank() != 1) throw ShapeError("jrm: sentence feature must be a vector");
  Var cat = concat_projection()(tape, concat_cols({x, sentence}));
  return multi_head_attention(tape, cat, cat, cat, attention());
}

Var JointReasoning::operator()(Tape& tape, Var x, Var sentence) const {
  Var att = attended(tape, x, sentence);
  return add(ffn()(tape, att), att);
}

void CrossAttention::init(ParamStore& params, Rng& rng) const {
  attention().init(params, rng);
  norm().init(params);
}

Var CrossAttention::operator()(Tape& tape, Var x, Var words) const {
  if (words.value().rank() != 2) throw ShapeError("cam: word features must be [L x D], got " + shape_str(words.shape()));
  return norm()(tape, multi_head_attention(tape, x, words, words, attention()));
}

void GlobalTransform::init(ParamStore& params, Rng& rng) const {
  scaling().init(params, rng);
  shifting().init(params, rng);
  norm().init(params);
}

Var GlobalTransform::operator()(Tape& tape, Var x, Var sentence) const {
  Var alpha = scaling()(tape, sentence);
  Var beta = shifting()(tape, sentence);
  return norm()(tape, add(mul(x, alpha), beta));
}

void ResidualConnection::init(ParamStore& params) const { norm().init(params); }

Var ResidualConnection::operator()(Tape& tape, Var x) const { return norm()(tape, x); }

FusionLayer FusionLayer::make(const std::string& prefix, std::size_t dim, std::size_t heads, std::size_t hidden) {
  return {JointReasoning{prefix + ".jrm", dim, heads, hidden}, CrossAttention{prefix + ".cam", dim, heads},
          GlobalTransform{prefix + ".gtm", dim}, ResidualConnection{prefix + ".rcm", dim}};
}

void FusionLayer::init(ParamStore& params, Rng& rng, const std::array<bool, kModuleCount>& enabled) const {
  // Fixed order keeps initialization independent of which modules are disabled.
  for (ModuleKind k : kModuleOrder) {
    ParamStore scratch;
    ParamStore& target = enabled[static_cast<std::size_t>(k)] ? params : scratch;
    switch (k) {
      case ModuleKind::kCam: cam.init(target, rng); break;
      case ModuleKind::kJrm: jrm.init(target, rng); break;
      case ModuleKind::kGtm: gtm.init(target, rng); break;
      case ModuleKind::kRcm: rcm.init(target); break;
    }
  }
}

Var FusionLayer::apply(ModuleKind kind, Tape& tape, Var x, Var words, Var sentence) const {
  switch (kind) {
    case ModuleKind::kCam: return cam(tape, x, words);
    case ModuleKind::kJrm: return jrm(tape, x, sentence);
    case ModuleKind::kGtm: return gtm(tape, x, sentence);
    case ModuleKind::kRcm: return rcm(tape, x);
  }
  throw InvariantError("unknown module kind");
}

}  // namespace sdfn
