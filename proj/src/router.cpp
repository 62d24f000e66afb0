#include "sdfn/router.hpp"

#include <cmath>

#include "sdfn/errors.hpp"

namespace sdfn {

std::string_view router_name(RouterKind kind) {
  switch (kind) {
    case RouterKind::kMsr: return "msr";
    case RouterKind::kSr: return "sr";
    case RouterKind::kUniform: return "uniform";
  }
  return "?";
}

std::optional<RouterKind> router_from_name(std::string_view name) {
  for (RouterKind k : {RouterKind::kMsr, RouterKind::kSr, RouterKind::kUniform}) {
    if (router_name(k) == name) return k;
  }
  return std::nullopt;
}

void RouterHead::init(ParamStore& params, Rng& rng) const {
  switch (kind) {
    case RouterKind::kMsr:
      image_hidden().init(params, rng);
      image_out().init(params, rng);
      text_hidden().init(params, rng);
      text_out().init(params, rng);
      break;
    case RouterKind::kSr:
      joint_hidden().init(params, rng);
      joint_out().init(params, rng);
      break;
    case RouterKind::kUniform:
      break;
  }
}

Var RouterHead::logits(Tape& tape, Var pooled, Var sentence) const {
  switch (kind) {
    case RouterKind::kMsr: {
      Var image = image_out()(tape, relu(image_hidden()(tape, pooled)));
      Var text = text_out()(tape, relu(text_hidden()(tape, sentence)));
      return add(image, text);
    }
    case RouterKind::kSr:
      return joint_out()(tape, relu(joint_hidden()(tape, concat_cols({pooled, sentence}))));
    case RouterKind::kUniform:
      return tape.constant(Tensor(Shape{outputs}, 0.0));
  }
  throw InvariantError("unknown router kind");
}

RouteResult route_probs(Tape& tape, const RouterHead& head, Var pooled, Var sentence, double tau) {
  if (!(tau > 0.0)) throw ConfigError("routing temperature must be positive");
  Var logits = head.logits(tape, pooled, sentence);
  return {logits, softmax(scale(logits, 1.0 / tau), 0)};
}

std::vector<Var> initial_inputs(Var image, std::size_t count) { return std::vector<Var>(count, image); }

std::vector<Var> propagate(std::span<const Var> outputs, Var routing) {
  const Tensor& r = routing.value();
  const std::size_t n = outputs.size();
  if (r.shape() != Shape{n, n}) {
    throw ShapeError("propagate: routing " + shape_str(r.shape()) + " for " + std::to_string(n) + " modules");
  }
  for (std::size_t j = 0; j < n; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = r.at(j, i);
      if (p < 0.0 || p > 1.0) throw InvariantError("propagate: routing entry outside [0, 1]");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw InvariantError("propagate: routing row " + std::to_string(j) + " sums to " + std::to_string(total));
    }
  }
  std::vector<Var> inputs;
  inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) inputs.push_back(weighted_sum(outputs, slice_cols(routing, i, 1)));
  return inputs;
}

void NetworkConfig::validate() const {
  if (dim == 0 || layers == 0 || ffn_hidden == 0) throw ConfigError("network dimensions must be positive");
  if (dim % 2 != 0) throw ConfigError("D must be even (routers use D/2 hidden units)");
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("head_count " + std::to_string(heads) + " does not divide D=" + std::to_string(dim));
  }
  if (!(tau_r > 0.0)) throw ConfigError("tau_r must be positive");
  if (active().empty()) throw ConfigError("at least one operation module must stay enabled");
}

std::vector<ModuleKind> NetworkConfig::active() const {
  std::vector<ModuleKind> out;
  for (ModuleKind k : kModuleOrder) {
    if (enabled[static_cast<std::size_t>(k)]) out.push_back(k);
  }
  return out;
}

FusionNetwork::FusionNetwork(NetworkConfig config) : config_(config) {
  config_.validate();
  active_ = config_.active();
  const std::size_t n = active_.size();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    layers_.push_back(FusionLayer::make("net.l" + std::to_string(l), config_.dim, config_.heads, config_.ffn_hidden));
  }
  for (std::size_t l = 0; l + 1 < config_.layers; ++l) {
    for (ModuleKind src : active_) {
      hop_routers_.push_back(RouterHead{"route.l" + std::to_string(l) + "." + std::string(module_name(src)),
                                        config_.dim, n, config_.router});
    }
  }
  for (ModuleKind src : active_) {
    agg_routers_.push_back(RouterHead{"route.agg." + std::string(module_name(src)), config_.dim, 1, config_.router});
  }
}

const RouterHead& FusionNetwork::hop_router(std::size_t l, std::size_t source) const {
  return hop_routers_.at(l * active_.size() + source);
}

const RouterHead& FusionNetwork::aggregation_router(std::size_t source) const { return agg_routers_.at(source); }

void FusionNetwork::init(ParamStore& params, Rng& rng) const {
  for (const auto& layer : layers_) layer.init(params, rng, config_.enabled);
  for (const auto& head : hop_routers_) head.init(params, rng);
  for (const auto& head : agg_routers_) head.init(params, rng);
}

namespace {

Tensor expand_row(const Tensor& probs, const std::vector<ModuleKind>& active) {
  Tensor full(Shape{kModuleCount}, 0.0);
  for (std::size_t i = 0; i < active.size(); ++i) full[static_cast<std::size_t>(active[i])] = probs[i];
  return full;
}

}  // namespace

ForwardResult FusionNetwork::forward(Tape& tape, const EncodedQuery& query, const RoutingOverride* forced) const {
  const std::size_t n = active_.size();
  const std::size_t hops = config_.layers - 1;
  if (forced && (forced->hops.size() != hops || forced->aggregation.shape() != Shape{n})) {
    throw ShapeError("routing override does not match the network layout");
  }
  ForwardResult result;
  result.routing.active = config_.enabled;
  std::vector<Var> site_logits;
  std::vector<Var> inputs = initial_inputs(query.image, n);

  for (std::size_t l = 0; l < config_.layers; ++l) {
    std::vector<Var> outputs;
    outputs.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      outputs.push_back(layers_[l].apply(active_[j], tape, inputs[j], query.words, query.sentence));
    }
    std::vector<Var> pooled;
    pooled.reserve(n);
    for (const Var& o : outputs) pooled.push_back(mean_axis(o, 0));

    if (l + 1 < config_.layers) {
      std::vector<Var> rows;
      Tensor table(Shape{kModuleCount, kModuleCount}, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        RouteResult route = route_probs(tape, hop_router(l, j), pooled[j], query.sentence, config_.tau_r);
        site_logits.push_back(route.logits);
        rows.push_back(forced ? tape.constant(Tensor(Shape{n}, std::vector<double>(
                                    forced->hops[l].row(j).begin(), forced->hops[l].row(j).end())))
                              : route.probs);
        const Tensor full = expand_row(rows.back().value(), active_);
        std::copy(full.data().begin(), full.data().end(),
                  table.row(static_cast<std::size_t>(active_[j])).begin());
      }
      result.routing.hops.push_back(std::move(table));
      result.outputs.push_back(std::move(outputs));
      inputs = propagate(result.outputs.back(), stack_rows(rows));
    } else {
      std::vector<Var> agg_logits;
      for (std::size_t j = 0; j < n; ++j) {
        agg_logits.push_back(aggregation_router(j).logits(tape, pooled[j], query.sentence));
      }
      Var logits = n == 1 ? agg_logits[0] : concat_cols(agg_logits);
      site_logits.push_back(logits);
      Var weights = forced ? tape.constant(forced->aggregation) : softmax(scale(logits, 1.0 / config_.tau_r), 0);
      result.routing.aggregation = expand_row(weights.value(), active_);
      result.f_q = weighted_sum(pooled, weights);
      result.last_inputs = inputs;
      result.outputs.push_back(std::move(outputs));
    }
  }

  std::vector<Var> pooled_inputs;
  for (const Var& x : result.last_inputs) pooled_inputs.push_back(mean_axis(x, 0));
  result.f_in = pooled_inputs[0];
  for (std::size_t i = 1; i < pooled_inputs.size(); ++i) result.f_in = add(result.f_in, pooled_inputs[i]);
  result.path_logits = site_logits.size() == 1 ? site_logits[0] : concat_cols(site_logits);
  return result;
}

}  // namespace sdfn
