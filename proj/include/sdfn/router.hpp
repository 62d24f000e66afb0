#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdfn/encoders.hpp"
#include "sdfn/fusion.hpp"

namespace sdfn {

// kMsr: separate image and text scorers whose logits are summed.
// kSr: one scorer over [pooled image | sentence].
// kUniform: no routers; every routing distribution is uniform.
enum class RouterKind { kMsr, kSr, kUniform };

std::string_view router_name(RouterKind kind);
std::optional<RouterKind> router_from_name(std::string_view name);

/// Scores `outputs` routing targets from a source module's pooled output and T_s.
struct RouterHead {
  std::string name;
  std::size_t dim = 0;
  std::size_t outputs = kModuleCount;
  RouterKind kind = RouterKind::kMsr;

  void init(ParamStore& params, Rng& rng) const;
  Var logits(Tape& tape, Var pooled, Var sentence) const;

 private:
  Linear image_hidden() const { return {name + ".img.fc1", dim, dim / 2, true}; }
  Linear image_out() const { return {name + ".img.fc2", dim / 2, outputs, true}; }
  Linear text_hidden() const { return {name + ".txt.fc1", dim, dim / 2, true}; }
  Linear text_out() const { return {name + ".txt.fc2", dim / 2, outputs, true}; }
  Linear joint_hidden() const { return {name + ".joint.fc1", 2 * dim, dim, true}; }
  Linear joint_out() const { return {name + ".joint.fc2", dim, outputs, true}; }
};

struct RouteResult {
  Var logits;  // pre-temperature
  Var probs;   // softmax(logits / tau)
};

RouteResult route_probs(Tape& tape, const RouterHead& head, Var pooled, Var sentence, double tau);

/// Layer-0 inputs: every module receives X_r.
std::vector<Var> initial_inputs(Var image, std::size_t count);

/// X_i = Σ_j routing[j][i] · O_j. Rows of `routing` are source modules and
/// must each be a probability distribution (InvariantError otherwise).
std::vector<Var> propagate(std::span<const Var> outputs, Var routing);

struct NetworkConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 128;
  std::size_t layers = 3;
  RouterKind router = RouterKind::kMsr;
  double tau_r = 1.0;
  std::array<bool, kModuleCount> enabled{true, true, true, true};

  void validate() const;
  std::vector<ModuleKind> active() const;
};

/// Probabilities laid out in full module order; disabled modules get zeros.
struct RoutingTable {
  std::vector<Tensor> hops;  // one [4 x 4] per layer transition, rows = sources
  Tensor aggregation;        // [4]
  std::array<bool, kModuleCount> active{};
};

struct ForwardResult {
  Var f_q;
  Var f_in;
  Var path_logits;  // every routing site's logits, concatenated
  RoutingTable routing;
  std::vector<std::vector<Var>> outputs;  // [layer][active module] -> [K x D]
  std::vector<Var> last_inputs;           // inputs of the final layer
};

/// Fixed routing used in place of the routers (tests and path replays).
struct RoutingOverride {
  std::vector<Tensor> hops;  // [n x n] over active modules
  Tensor aggregation;        // [n]
};

class FusionNetwork {
 public:
  explicit FusionNetwork(NetworkConfig config);

  void init(ParamStore& params, Rng& rng) const;
  ForwardResult forward(Tape& tape, const EncodedQuery& query, const RoutingOverride* forced = nullptr) const;

  const NetworkConfig& config() const { return config_; }
  std::size_t site_width() const { return active_.size(); }
  /// Routing sites per query: one per (hop layer, source) plus the aggregation.
  std::size_t site_count() const { return (config_.layers - 1) * active_.size() + 1; }
  std::size_t path_length() const { return site_count() * site_width(); }

  const FusionLayer& layer(std::size_t l) const { return layers_.at(l); }
  const RouterHead& hop_router(std::size_t l, std::size_t source) const;
  const RouterHead& aggregation_router(std::size_t source) const;

 private:
  NetworkConfig config_;
  std::vector<ModuleKind> active_;
  std::vector<FusionLayer> layers_;
  std::vector<RouterHead> hop_routers_;  // [(layers - 1) * n]
  std::vector<RouterHead> agg_routers_;  // [n]
};

}  // namespace sdfn
