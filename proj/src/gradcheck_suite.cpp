#include "sdfn/gradcheck_suite.hpp"

#include <functional>
#include <map>

#include "sdfn/errors.hpp"
#include "sdfn/losses.hpp"
#include "sdfn/model.hpp"
#include "sdfn/ops.hpp"
#include "sdfn/router.hpp"

namespace sdfn {

namespace {

constexpr std::size_t kDim = 8;
constexpr std::size_t kHeads = 2;
constexpr std::size_t kHidden = 16;
constexpr std::size_t kBatch = 2;
constexpr std::size_t kPositions = 4;
constexpr std::size_t kWords = 6;

Tensor random_tensor(Shape shape, Rng& rng, double spread = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.data()) v = spread * rng.normal();
  return t;
}

// Nonlinear scalar readout so every output coordinate gets its own weight.
Var readout(Tape& tape, Var x, const Tensor& weights) { return sum(mul(tanh(x), tape.constant(weights))); }

TrainConfig tiny_config(std::uint64_t seed) {
  TrainConfig c;
  c.dim = kDim;
  c.heads = kHeads;
  c.ffn_hidden = kHidden;
  c.raw_dim = 2 * kDim;
  c.layers = 3;
  c.grid = 2;
  c.channels = 4;
  c.attributes = 2;
  c.values = 3;
  c.batch_size = kBatch;
  c.seed = seed;
  return c;
}

struct Case {
  ParamStore params;
  GraphBuilder build;
};

Case module_case(ModuleKind kind, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6d6f64));
  auto layer = std::make_shared<FusionLayer>(FusionLayer::make("m", kDim, kHeads, kHidden));
  Case c;
  layer->init(c.params, rng, {true, true, true, true});
  c.params.add("in.x", random_tensor({kPositions, kDim}, rng));
  c.params.add("in.words", random_tensor({kWords, kDim}, rng));
  c.params.add("in.sentence", random_tensor({kDim}, rng));
  const Tensor w = random_tensor({kPositions, kDim}, rng);
  c.build = [layer, kind, w](Tape& t) {
    Var out = layer->apply(kind, t, t.param("in.x"), t.param("in.words"), t.param("in.sentence"));
    return readout(t, out, w);
  };
  return c;
}

Case router_case(RouterKind kind, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x726f75));
  RouterHead head{"r", kDim, kModuleCount, kind};
  Case c;
  head.init(c.params, rng);
  c.params.add("in.pooled", random_tensor({kDim}, rng));
  c.params.add("in.sentence", random_tensor({kDim}, rng));
  const Tensor w1 = random_tensor({kModuleCount}, rng);
  const Tensor w2 = random_tensor({kModuleCount}, rng);
  c.build = [head, w1, w2](Tape& t) {
    const RouteResult r = route_probs(t, head, t.param("in.pooled"), t.param("in.sentence"), 0.7);
    return add(sum(mul(r.probs, t.constant(w1))), readout(t, r.logits, w2));
  };
  return c;
}

Case propagate_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x70726f));
  Case c;
  for (std::size_t j = 0; j < kModuleCount; ++j) {
    c.params.add("in.o" + std::to_string(j), random_tensor({kPositions, kDim}, rng));
  }
  c.params.add("in.logits", random_tensor({kModuleCount, kModuleCount}, rng));
  const Tensor w = random_tensor({kPositions, kDim}, rng);
  c.build = [w](Tape& t) {
    std::vector<Var> outs;
    for (std::size_t j = 0; j < kModuleCount; ++j) outs.push_back(t.param("in.o" + std::to_string(j)));
    const auto inputs = propagate(outs, softmax(t.param("in.logits"), 1));
    Var total = readout(t, inputs[0], w);
    for (std::size_t i = 1; i < inputs.size(); ++i) total = add(total, readout(t, inputs[i], w));
    return total;
  };
  return c;
}

Case features_case(const std::string& which, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6c6f73));
  Case c;
  c.params.add("in.f_q", random_tensor({kBatch + 1, kDim}, rng));
  c.params.add("in.f_t", random_tensor({kBatch + 1, kDim}, rng));
  c.params.add("in.f_in", random_tensor({kBatch + 1, kDim}, rng));
  if (which == "bbc") {
    c.build = [](Tape& t) { return bbc_loss(t.param("in.f_q"), t.param("in.f_t"), 10.0); };
  } else {
    c.build = [](Tape& t) { return consistency_loss(t.param("in.f_q"), t.param("in.f_t"), t.param("in.f_in")); };
  }
  return c;
}

Case spd_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x737064));
  const std::size_t length = 9 * kModuleCount;
  Case c;
  c.params.add("in.s0", random_tensor({length}, rng, 2.0));
  c.params.add("in.s1", random_tensor({length}, rng, 2.0));
  c.params.add("in.s2", random_tensor({length}, rng, 2.0));
  const Tensor t0 = random_tensor({length}, rng, 2.0);
  const Tensor t2 = random_tensor({length}, rng, 2.0);
  c.build = [t0, t2](Tape& t) {
    const std::vector<Var> student{t.param("in.s0"), t.param("in.s1"), t.param("in.s2")};
    const std::vector<Var> teacher{t.constant(t0), Var{}, t.constant(t2)};  // middle query masked
    return spd_loss(student, teacher, kModuleCount, 2.0);
  };
  return c;
}

Case encoder_case(bool image, std::uint64_t seed) {
  const TrainConfig config = tiny_config(seed);
  const GridSpec grid{config.grid, config.grid, config.channels};
  const ItemUniverse world = generate_world(seed, config.attributes, config.values, grid);
  auto model = std::make_shared<SdfnModel>(config, world.vocab_size());
  Case c;
  c.params = model->init_params(seed);
  Rng rng(mix_seed(seed, 0x656e63));
  const auto triplets = generate_triplets(world, 1, 2, seed);
  const RawImage img = render_image(triplets[0].reference, world, grid, 0.05, seed);
  const TokenSeq tokens = triplets[0].tokens;
  const Tensor w_seq = random_tensor({kPositions, kDim}, rng);
  const Tensor w_vec = random_tensor({kDim}, rng);
  const Tensor w_words = random_tensor({tokens.size(), kDim}, rng);
  if (image) {
    c.build = [model, img, w_seq, w_vec](Tape& t) {
      return add(readout(t, model->image_encoder().encode(t, img), w_seq),
                 readout(t, model->encode_target(t, img), w_vec));
    };
  } else {
    c.build = [model, tokens, w_words, w_vec](Tape& t) {
      auto [words, sentence] = model->text_encoder().encode(t, tokens);
      return add(readout(t, words, w_words), readout(t, sentence, w_vec));
    };
  }
  // Only the encoder's own blocks are differenced.
  ParamStore own;
  for (const auto& [name, value] : c.params) {
    if (name.rfind(image ? "img." : "txt.", 0) == 0) own.add(name, value);
  }
  c.params = std::move(own);
  return c;
}

Case full_case(std::uint64_t seed, RouterKind router) {
  TrainConfig config = tiny_config(seed);
  config.router = router;
  const GridSpec grid{config.grid, config.grid, config.channels};
  const ItemUniverse world = generate_world(seed, config.attributes, config.values, grid);
  auto model = std::make_shared<SdfnModel>(config, world.vocab_size());
  Case c;
  c.params = model->init_params(seed);
  const auto triplets = generate_triplets(world, kBatch, 2, seed);
  std::vector<RawImage> refs, tgts;
  for (std::size_t b = 0; b < kBatch; ++b) {
    refs.push_back(render_image(triplets[b].reference, world, grid, 0.05, mix_seed(seed, 2 * b)));
    tgts.push_back(render_image(triplets[b].target, world, grid, 0.05, mix_seed(seed, 2 * b + 1)));
  }
  Rng rng(mix_seed(seed, 0x66756c));
  std::vector<Tensor> teachers;
  for (std::size_t b = 0; b < kBatch; ++b) {
    teachers.push_back(random_tensor({model->network().path_length()}, rng));
  }
  c.build = [model, triplets, refs, tgts, teachers, config, router](Tape& t) {
    std::vector<Var> q, tg, in, student, teacher;
    for (std::size_t b = 0; b < kBatch; ++b) {
      const EncodedQuery enc = model->encode_query(t, refs[b], triplets[b].tokens, triplets[b].query_id);
      const ForwardResult fr = model->forward(t, enc);
      q.push_back(fr.f_q);
      in.push_back(fr.f_in);
      tg.push_back(model->encode_target(t, tgts[b]));
      student.push_back(fr.path_logits);
      teacher.push_back(t.constant(teachers[b]));
    }
    Var f_q = stack_rows(q), f_t = stack_rows(tg), f_in = stack_rows(in);
    Var total = add(bbc_loss(f_q, f_t, config.bbc_scale), consistency_loss(f_q, f_t, f_in));
    if (router == RouterKind::kUniform) return total;
    Var path = spd_loss(student, teacher, model->network().site_width(), config.tau_path);
    return add(total, scale(path, config.lambda));
  };
  return c;
}

const std::map<std::string, std::function<Case(std::uint64_t)>>& registry() {
  static const std::map<std::string, std::function<Case(std::uint64_t)>> cases{
      {"image_encoder", [](std::uint64_t s) { return encoder_case(true, s); }},
      {"text_encoder", [](std::uint64_t s) { return encoder_case(false, s); }},
      {"cam", [](std::uint64_t s) { return module_case(ModuleKind::kCam, s); }},
      {"jrm", [](std::uint64_t s) { return module_case(ModuleKind::kJrm, s); }},
      {"gtm", [](std::uint64_t s) { return module_case(ModuleKind::kGtm, s); }},
      {"rcm", [](std::uint64_t s) { return module_case(ModuleKind::kRcm, s); }},
      {"router_msr", [](std::uint64_t s) { return router_case(RouterKind::kMsr, s); }},
      {"router_sr", [](std::uint64_t s) { return router_case(RouterKind::kSr, s); }},
      {"propagate", propagate_case},
      {"bbc", [](std::uint64_t s) { return features_case("bbc", s); }},
      {"consistency", [](std::uint64_t s) { return features_case("consistency", s); }},
      {"spd", spd_case},
      {"full", [](std::uint64_t s) { return full_case(s, RouterKind::kMsr); }},
      {"full_sr", [](std::uint64_t s) { return full_case(s, RouterKind::kSr); }},
      {"full_uniform", [](std::uint64_t s) { return full_case(s, RouterKind::kUniform); }},
  };
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_components() {
  return {"image_encoder", "text_encoder", "cam", "jrm",  "gtm",     "rcm",          "router_msr", "router_sr",
          "propagate",     "bbc",          "consistency", "spd",  "full", "full_sr", "full_uniform"};
}

SuiteCase run_gradcheck_case(const std::string& component, std::uint64_t seed, const GradCheckOptions& options) {
  auto it = registry().find(component);
  if (it == registry().end()) throw ConfigError("unknown gradcheck component: " + component);
  Case c = it->second(seed);
  // Fresh init is a special point (zero biases, equal LayerNorm gains) where
  // some blocks have gradients near the difference quotient's roundoff floor.
  // Checking at a nearby generic point keeps every block measurable.
  Rng rng(mix_seed(seed, 0x6a6974));
  for (auto& [name, value] : c.params)
    for (double& v : value.data()) v += 0.1 * rng.normal();
  return {component, seed, check_gradients(c.build, c.params, options)};
}

std::vector<SuiteCase> run_gradcheck_suite(std::span<const std::uint64_t> seeds, const GradCheckOptions& options) {
  std::vector<SuiteCase> out;
  for (std::uint64_t seed : seeds) {
    for (const auto& name : gradcheck_components()) out.push_back(run_gradcheck_case(name, seed, options));
  }
  return out;
}

}  // namespace sdfn
