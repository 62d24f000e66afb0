#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "sdfn/nn.hpp"

namespace sdfn {

// Frozen module order; routing tables, path logits and traces all use it.
enum class ModuleKind { kCam = 0, kJrm = 1, kGtm = 2, kRcm = 3 };
inline constexpr std::size_t kModuleCount = 4;
inline constexpr std::array<ModuleKind, kModuleCount> kModuleOrder{ModuleKind::kCam, ModuleKind::kJrm,
                                                                   ModuleKind::kGtm, ModuleKind::kRcm};

std::string_view module_name(ModuleKind kind);
std::optional<ModuleKind> module_from_name(std::string_view name);

/// Joint reasoning: W_cat [X | T_s] per position, self-attention, FFN + residual.
struct JointReasoning {
  std::string name;
  std::size_t dim = 0;
  std::size_t heads = 4;
  std::size_t hidden = 0;

  Linear concat_projection() const { return {name + ".w_cat", 2 * dim, dim, false}; }
  AttentionParams attention() const { return {name + ".attn", dim, heads}; }
  FeedForward ffn() const { return {name + ".ffn", dim, hidden}; }
  void init(ParamStore& params, Rng& rng) const;
  Var operator()(Tape& tape, Var x, Var sentence) const;
  /// Exposes the attended sequence for the residual identity.
  Var attended(Tape& tape, Var x, Var sentence) const;
};

/// Cross attention: image positions query the word features, then LN.
struct CrossAttention {
  std::string name;
  std::size_t dim = 0;
  std::size_t heads = 4;

  AttentionParams attention() const { return {name + ".attn", dim, heads}; }
  LayerNorm norm() const { return {name + ".ln", dim}; }
  void init(ParamStore& params, Rng& rng) const;
  Var operator()(Tape& tape, Var x, Var words) const;
};

/// Global transformation: LN(alpha ⊙ X + beta), alpha = W_alpha T_s, beta = W_beta T_s.
struct GlobalTransform {
  std::string name;
  std::size_t dim = 0;

  Linear scaling() const { return {name + ".w_alpha", dim, dim, false}; }
  Linear shifting() const { return {name + ".w_beta", dim, dim, false}; }
  LayerNorm norm() const { return {name + ".ln", dim}; }
  void init(ParamStore& params, Rng& rng) const;
  Var operator()(Tape& tape, Var x, Var sentence) const;
};

/// Residual connection: LN(X); ignores the text entirely.
struct ResidualConnection {
  std::string name;
  std::size_t dim = 0;

  LayerNorm norm() const { return {name + ".ln", dim}; }
  void init(ParamStore& params) const;
  Var operator()(Tape& tape, Var x) const;
};

/// One operation-module layer; every module owns its own parameters.
struct FusionLayer {
  JointReasoning jrm;
  CrossAttention cam;
  GlobalTransform gtm;
  ResidualConnection rcm;

  static FusionLayer make(const std::string& prefix, std::size_t dim, std::size_t heads, std::size_t hidden);
  void init(ParamStore& params, Rng& rng, const std::array<bool, kModuleCount>& enabled) const;
  Var apply(ModuleKind kind, Tape& tape, Var x, Var words, Var sentence) const;
};

}  // namespace sdfn
