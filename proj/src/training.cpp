#include "sdfn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "sdfn/errors.hpp"
#include "sdfn/ops.hpp"
#include "sdfn/rng.hpp"

namespace sdfn {

// ---- data assembly ---------------------------------------------------------

namespace {

constexpr std::uint64_t kEvalFirstId = std::uint64_t{1} << 32;

}  // namespace

Dataset build_dataset(const TrainConfig& config) {
  Dataset data;
  data.grid = GridSpec{config.grid, config.grid, config.channels};
  data.noise = config.noise;
  data.seed = config.data_seed;
  data.universe = generate_world(config.data_seed, config.attributes, config.values, data.grid);
  data.eval = generate_eval_split(data.universe, config.gallery_size, config.eval_queries, config.max_edits,
                                  mix_seed(config.data_seed, 1), kEvalFirstId);

  std::set<std::pair<Item, Item>> held_out;
  for (const auto& q : data.eval.queries) held_out.emplace(q.reference, q.target);
  const long candidates = static_cast<long>(config.train_size + config.train_size / 8 + 16);
  for (auto& rec : generate_triplets(data.universe, candidates, config.max_edits, mix_seed(config.data_seed, 2))) {
    if (data.train.size() == config.train_size) break;
    if (held_out.count({rec.reference, rec.target})) continue;
    data.train.push_back(std::move(rec));
  }
  if (data.train.size() < config.train_size) throw ConfigError("could not draw enough held-out-disjoint triplets");
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json world = {{"attributes", data.universe.attributes},
                          {"values", data.universe.values},
                          {"seed", data.seed},
                          {"grid", {data.grid.height, data.grid.width, data.grid.channels}},
                          {"noise", data.noise},
                          {"vocabulary", data.universe.vocabulary},
                          {"gallery", data.eval.gallery},
                          {"target_index", data.eval.target_index}};
  std::ofstream(dir / "world.json") << world.dump(1) << '\n';
  write_records(dir / "train.jsonl", data.train);
  write_records(dir / "eval.jsonl", data.eval.queries);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "world.json");
  if (!in) throw ParseError("cannot open " + (dir / "world.json").string());
  Dataset data;
  try {
    const auto world = nlohmann::json::parse(in);
    const auto grid = world.at("grid").get<std::vector<std::size_t>>();
    if (grid.size() != 3) throw ParseError("world.json: grid must be [height, width, channels]");
    data.grid = GridSpec{grid[0], grid[1], grid[2]};
    data.noise = world.at("noise").get<double>();
    data.seed = world.at("seed").get<std::uint64_t>();
    data.universe = generate_world(data.seed, world.at("attributes").get<std::size_t>(),
                                   world.at("values").get<std::size_t>(), data.grid);
    if (world.at("vocabulary").get<std::vector<std::string>>() != data.universe.vocabulary) {
      throw ParseError("world.json: vocabulary does not match the seeded universe");
    }
    data.eval.gallery = world.at("gallery").get<std::vector<Item>>();
    data.eval.target_index = world.at("target_index").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("world.json: ") + e.what());
  }
  data.train = read_records(dir / "train.jsonl");
  data.eval.queries = read_records(dir / "eval.jsonl");
  if (data.eval.queries.size() != data.eval.target_index.size()) {
    throw ParseError("eval.jsonl and world.json disagree on the number of queries");
  }
  return data;
}

RenderedData render_dataset(const Dataset& data) {
  RenderedData out;
  auto render = [&](const Item& item, std::uint64_t key) {
    return render_image(item, data.universe, data.grid, data.noise, mix_seed(data.seed, key));
  };
  for (const auto& r : data.train) {
    out.train_reference.push_back(render(r.reference, 4 * r.query_id));
    out.train_target.push_back(render(r.target, 4 * r.query_id + 1));
  }
  for (const auto& q : data.eval.queries) out.eval_reference.push_back(render(q.reference, 4 * q.query_id + 2));
  for (std::size_t g = 0; g < data.eval.gallery.size(); ++g) {
    out.gallery.push_back(render(data.eval.gallery[g], 4 * g + 3));
  }
  return out;
}

// ---- routing paths ---------------------------------------------------------

PathBank update_teacher_bank(const PathBank& bank, PathRecords records, std::size_t expected_length) {
  for (const auto& [id, logits] : records) {
    if (logits.size() != expected_length) {
      throw InvariantError("path record for query " + std::to_string(id) + " has " + std::to_string(logits.size()) +
                           " logits, expected " + std::to_string(expected_length));
    }
  }
  return PathBank{bank.epoch + 1, std::move(records)};
}

std::vector<double> site_probabilities(std::span<const double> logits, std::size_t site_width, double tau) {
  if (site_width == 0 || logits.size() % site_width != 0) throw ShapeError("site_probabilities: bad site width");
  std::vector<double> out(logits.size());
  for (std::size_t s = 0; s < logits.size(); s += site_width) {
    double mx = logits[s];
    for (std::size_t i = 1; i < site_width; ++i) mx = std::max(mx, logits[s + i]);
    double z = 0.0;
    for (std::size_t i = 0; i < site_width; ++i) z += (out[s + i] = std::exp((logits[s + i] - mx) / tau));
    for (std::size_t i = 0; i < site_width; ++i) out[s + i] /= z;
  }
  return out;
}

std::optional<double> path_churn(const PathRecords& previous, const PathRecords& current, std::size_t site_width) {
  if (site_width == 0) throw ShapeError("path_churn: zero site width");
  double total = 0.0;
  std::size_t sites = 0;
  for (const auto& [id, curr] : current) {
    auto it = previous.find(id);
    if (it == previous.end()) continue;
    const auto& prev = it->second;
    if (prev.size() != curr.size() || curr.size() % site_width != 0) {
      throw InvariantError("path_churn: query " + std::to_string(id) + " has mismatched routing tables");
    }
    for (std::size_t s = 0; s < curr.size(); s += site_width) {
      double tv = 0.0;
      for (std::size_t i = 0; i < site_width; ++i) tv += std::abs(curr[s + i] - prev[s + i]);
      total += 0.5 * tv;
      ++sites;
    }
  }
  if (sites == 0) return std::nullopt;
  return total / static_cast<double>(sites);
}

// ---- evaluation ------------------------------------------------------------

std::size_t target_rank(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) {
    throw EvalError("target index " + std::to_string(target) + " absent from a gallery of " +
                    std::to_string(scores.size()));
  }
  const double t = scores[target];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > t || (scores[j] == t && j < target)) ++rank;
  }
  return rank;
}

namespace {

Tensor normalized_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    if (!(s > 0.0)) throw NumericsError("recall: zero-norm feature row " + std::to_string(r));
    const double inv = 1.0 / std::sqrt(s);
    for (double& v : out.row(r)) v *= inv;
  }
  return out;
}

}  // namespace

std::map<std::size_t, double> recall_at_k(const Tensor& queries, const Tensor& gallery,
                                          std::span<const std::size_t> targets, std::span<const std::size_t> ks) {
  if (queries.rank() != 2 || gallery.rank() != 2 || queries.cols() != gallery.cols()) {
    throw ShapeError("recall_at_k: queries " + shape_str(queries.shape()) + " vs gallery " +
                     shape_str(gallery.shape()));
  }
  if (targets.size() != queries.rows()) throw ShapeError("recall_at_k: one target per query required");
  const Tensor q = normalized_rows(queries);
  const Tensor g = normalized_rows(gallery);
  std::map<std::size_t, double> hits;
  for (std::size_t k : ks) hits[k] = 0.0;
  std::vector<double> scores(g.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < g.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += q.at(i, c) * g.at(j, c);
      scores[j] = s;
    }
    const std::size_t rank = target_rank(scores, targets[i]);
    for (auto& [k, h] : hits) h += rank < k ? 1.0 : 0.0;
  }
  for (auto& [k, h] : hits) h /= static_cast<double>(q.rows());
  return hits;
}

// ---- optimizer -------------------------------------------------------------

void adam_step(ParamStore& params, const GradientMap& grads, AdamState& state, double lr, const TrainConfig& config) {
  ++state.step;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw InvariantError("adam_step: missing gradient for " + name);
    const Tensor& g = git->second;
    if (!state.m.contains(name)) {
      state.m.add(name, Tensor(theta.shape(), 0.0));
      state.v.add(name, Tensor(theta.shape(), 0.0));
    }
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + config.adam_eps) + config.weight_decay * theta[i]);
    }
  }
}

// ---- metrics ---------------------------------------------------------------

std::string metrics_to_line(const EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch},     {"steps", m.steps},   {"lr", m.lr},         {"l_bbc", m.l_bbc},
                      {"l_cons", m.l_cons},   {"l_path", m.l_path}, {"l_total", m.l_total}, {"r1", m.r1},
                      {"r10", m.r10},         {"r50", m.r50}};
  j["churn"] = m.churn ? nlohmann::json(*m.churn) : nlohmann::json(nullptr);
  return j.dump();
}

EpochMetrics metrics_from_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    EpochMetrics m;
    m.epoch = j.at("epoch").get<std::size_t>();
    m.steps = j.at("steps").get<std::size_t>();
    m.lr = j.at("lr").get<double>();
    m.l_bbc = j.at("l_bbc").get<double>();
    m.l_cons = j.at("l_cons").get<double>();
    m.l_path = j.at("l_path").get<double>();
    m.l_total = j.at("l_total").get<double>();
    m.r1 = j.at("r1").get<double>();
    m.r10 = j.at("r10").get<double>();
    m.r50 = j.at("r50").get<double>();
    if (!j.at("churn").is_null()) m.churn = j.at("churn").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics line: ") + e.what());
  }
}

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(TrainConfig config, const Dataset& data)
    : config_(std::move(config)),
      data_(&data),
      images_(render_dataset(data)),
      model_(config_, data.universe.vocab_size()),
      params_(model_.init_params(config_.seed)) {
  config_.validate();
}

void Trainer::set_epochs(std::size_t epochs) {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  config_.epochs = epochs;
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(data_->train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(config_.seed, 0x6f72646572 + epoch));
  shuffle(order, rng);
  return order;
}

std::optional<StepResult> Trainer::step() {
  const std::size_t epoch = completed_epochs_ + 1;
  if (order_.empty()) order_ = epoch_order(epoch);
  const std::size_t start = step_in_epoch_ * config_.batch_size;
  if (start >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), start + config_.batch_size);

  try {
    Tape tape(&params_);
    std::vector<Var> queries, targets, inputs, student, teacher;
    bool any_teacher = false;
    for (std::size_t b = start; b < end; ++b) {
      const std::size_t idx = order_[b];
      const TripletRecord& rec = data_->train[idx];
      const EncodedQuery enc = model_.encode_query(tape, images_.train_reference[idx], rec.tokens, rec.query_id);
      const ForwardResult fr = model_.forward(tape, enc);
      queries.push_back(fr.f_q);
      inputs.push_back(fr.f_in);
      targets.push_back(model_.encode_target(tape, images_.train_target[idx]));
      student.push_back(fr.path_logits);
      records_[rec.query_id] = fr.path_logits.value().values();

      Var t;
      if (config_.spd_enabled()) {
        if (config_.teacher == TeacherMode::kBank) {
          auto it = bank_.logits.find(rec.query_id);
          if (it != bank_.logits.end()) t = tape.constant(Tensor(Shape{it->second.size()}, it->second));
        } else if (teacher_params_) {
          Tape frozen(&*teacher_params_, false);
          const EncodedQuery tenc = model_.encode_query(frozen, images_.train_reference[idx], rec.tokens, rec.query_id);
          t = tape.constant(model_.forward(frozen, tenc).path_logits.value());
        }
      }
      any_teacher = any_teacher || t.valid();
      teacher.push_back(t);
    }

    Var f_q = stack_rows(queries);
    Var f_t = stack_rows(targets);
    Var f_in = stack_rows(inputs);
    Var l_bbc = bbc_loss(f_q, f_t, config_.bbc_scale);
    Var total = l_bbc;
    double cons_value = 0.0, path_value = 0.0;
    if (config_.use_cons) {
      Var l_cons = consistency_loss(f_q, f_t, f_in);
      cons_value = l_cons.value()[0];
      total = add(total, l_cons);
    }
    // A masked or disabled path term stays off the tape entirely.
    if (any_teacher) {
      Var l_path = spd_loss(student, teacher, model_.network().site_width(), config_.tau_path);
      path_value = l_path.value()[0];
      total = add(total, scale(l_path, config_.lambda));
    }
    const LossBreakdown loss = total_loss(l_bbc.value()[0], cons_value, path_value, config_.lambda);
    if (!std::isfinite(loss.l_total)) throw NumericsError("non-finite loss");
    const GradientMap grads = tape.backward(total);
    adam_step(params_, grads, adam_, config_.lr_at(epoch), config_);

    ++step_in_epoch_;
    sum_bbc_ += loss.l_bbc;
    sum_cons_ += loss.l_cons;
    sum_path_ += loss.l_path;
    sum_total_ += loss.l_total;
    StepResult result{loss, end - start};
    result.loss.tau_path = config_.tau_path;
    result.loss.batch = end - start;
    return result;
  } catch (const NumericsError& e) {
    throw NumericsError("epoch " + std::to_string(epoch) + " step " + std::to_string(step_in_epoch_ + 1) + ": " +
                        e.what());
  }
}

EpochMetrics Trainer::finish_epoch() {
  EpochMetrics m;
  m.epoch = completed_epochs_ + 1;
  m.steps = step_in_epoch_;
  m.lr = config_.lr_at(m.epoch);
  const double steps = std::max<double>(1.0, static_cast<double>(step_in_epoch_));
  m.l_bbc = sum_bbc_ / steps;
  m.l_cons = sum_cons_ / steps;
  m.l_path = sum_path_ / steps;
  m.l_total = sum_total_ / steps;

  const std::size_t width = model_.network().site_width();
  PathRecords previous, current;
  for (const auto& [id, logits] : bank_.logits) previous[id] = site_probabilities(logits, width, config_.tau_r);
  for (const auto& [id, logits] : records_) current[id] = site_probabilities(logits, width, config_.tau_r);
  m.churn = path_churn(previous, current, width);

  bank_ = update_teacher_bank(bank_, std::move(records_), model_.network().path_length());
  if (config_.teacher == TeacherMode::kModelCopy) teacher_params_ = params_;

  const std::array<std::size_t, 3> ks{1, 10, 50};
  const auto recall = evaluate(ks);
  m.r1 = recall.at(1);
  m.r10 = recall.at(10);
  m.r50 = recall.at(50);

  ++completed_epochs_;
  order_.clear();
  records_.clear();
  step_in_epoch_ = 0;
  sum_bbc_ = sum_cons_ = sum_path_ = sum_total_ = 0.0;
  return m;
}

EpochMetrics Trainer::run_epoch() {
  while (step()) {
  }
  return finish_epoch();
}

std::vector<EpochMetrics> Trainer::run(const std::function<void(const EpochMetrics&, const Trainer&)>& on_epoch) {
  std::vector<EpochMetrics> log;
  while (completed_epochs_ < config_.epochs) {
    log.push_back(run_epoch());
    if (on_epoch) on_epoch(log.back(), *this);
  }
  return log;
}

std::map<std::size_t, double> Trainer::evaluate(std::span<const std::size_t> ks) const {
  const auto& gallery_images = images_.gallery;
  Tensor gallery(Shape{gallery_images.size(), config_.dim});
  for (std::size_t g = 0; g < gallery_images.size(); ++g) {
    Tape tape(&params_, false);
    const Tensor& f = model_.encode_target(tape, gallery_images[g]).value();
    std::copy(f.data().begin(), f.data().end(), gallery.row(g).begin());
  }
  const auto& queries = data_->eval.queries;
  Tensor features(Shape{queries.size(), config_.dim});
  for (std::size_t q = 0; q < queries.size(); ++q) {
    Tape tape(&params_, false);
    const EncodedQuery enc = model_.encode_query(tape, images_.eval_reference[q], queries[q].tokens,
                                                 queries[q].query_id);
    const Tensor& f = model_.forward(tape, enc).f_q.value();
    std::copy(f.data().begin(), f.data().end(), features.row(q).begin());
  }
  return recall_at_k(features, gallery, data_->eval.target_index, ks);
}

// ---- routing traces --------------------------------------------------------

std::vector<TraceRow> trace_paths(const SdfnModel& model, const ParamStore& params,
                                  const std::vector<TripletRecord>& records, const std::vector<RawImage>& references) {
  if (records.size() != references.size()) throw ShapeError("trace_paths: one reference image per record required");
  std::vector<TraceRow> rows;
  const auto active = model.network().config().active();
  for (std::size_t q = 0; q < records.size(); ++q) {
    Tape tape(&params, false);
    const EncodedQuery enc = model.encode_query(tape, references[q], records[q].tokens, records[q].query_id);
    const ForwardResult fr = model.forward(tape, enc);
    for (std::size_t l = 0; l < fr.routing.hops.size(); ++l) {
      for (ModuleKind src : active) {
        TraceRow row{records[q].query_id, l, std::string(module_name(src)), {}};
        const auto probs = fr.routing.hops[l].row(static_cast<std::size_t>(src));
        std::copy(probs.begin(), probs.end(), row.probs.begin());
        rows.push_back(row);
      }
    }
    TraceRow agg{records[q].query_id, fr.routing.hops.size(), "aggregate", {}};
    std::copy(fr.routing.aggregation.data().begin(), fr.routing.aggregation.data().end(), agg.probs.begin());
    rows.push_back(agg);
  }
  return rows;
}

std::string trace_to_line(const TraceRow& row) {
  nlohmann::json j = {{"query_id", row.query_id}, {"layer", row.layer}, {"source", row.source}, {"probs", row.probs}};
  return j.dump();
}

std::vector<TraceRow> read_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<TraceRow> rows;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    TraceRow row;
    try {
      const auto j = nlohmann::json::parse(line);
      row.query_id = j.at("query_id").get<std::uint64_t>();
      row.layer = j.at("layer").get<std::size_t>();
      row.source = j.at("source").get<std::string>();
      row.probs = j.at("probs").get<std::array<double, kModuleCount>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(number) + ": " + e.what());
    }
    double total = 0.0;
    for (double p : row.probs) {
      if (p < 0.0 || p > 1.0) throw InvariantError("line " + std::to_string(number) + ": probability outside [0, 1]");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw InvariantError("line " + std::to_string(number) + ": routing row sums to " + std::to_string(total));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace sdfn
