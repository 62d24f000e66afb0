#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdfn/config.hpp"
#include "sdfn/data.hpp"
#include "sdfn/losses.hpp"
#include "sdfn/model.hpp"

namespace sdfn {

// ---- data assembly ---------------------------------------------------------

struct Dataset {
  ItemUniverse universe;
  GridSpec grid;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::vector<TripletRecord> train;
  EvalSplit eval;
};

/// Generates the training triplets and the held-out split from the config's
/// data fields. Training pairs never coincide with a held-out (reference, target) pair.
Dataset build_dataset(const TrainConfig& config);

/// Directory layout: world.json, train.jsonl, eval.jsonl.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Renders every image once with per-record noise seeds.
struct RenderedData {
  std::vector<RawImage> train_reference;
  std::vector<RawImage> train_target;
  std::vector<RawImage> eval_reference;
  std::vector<RawImage> gallery;
};

RenderedData render_dataset(const Dataset& data);

// ---- routing paths ---------------------------------------------------------

/// Per-query flattened routing logits.
using PathRecords = std::map<std::uint64_t, std::vector<double>>;

/// Teacher signal for self-path distillation: the logits each query produced
/// during the previous epoch.
struct PathBank {
  std::size_t epoch = 0;  // epoch in which the bank serves as teacher
  PathRecords logits;
  friend bool operator==(const PathBank&, const PathBank&) = default;
};

/// Replaces the bank with this epoch's records (stamped bank.epoch + 1).
/// Raises InvariantError when a record's length differs from `expected_length`.
PathBank update_teacher_bank(const PathBank& bank, PathRecords records, std::size_t expected_length);

/// softmax(logits / tau) applied site by site.
std::vector<double> site_probabilities(std::span<const double> logits, std::size_t site_width, double tau);

// Mean total-variation distance between routing distributions of consecutive
// epochs over every site of every shared query. Inputs are probabilities.
// std::nullopt when no query is shared.
std::optional<double> path_churn(const PathRecords& previous, const PathRecords& current, std::size_t site_width);

// ---- evaluation ------------------------------------------------------------

/// 0-based rank of `target`: candidates with a strictly higher score, plus
/// equal-score candidates at a lower gallery index.
std::size_t target_rank(std::span<const double> scores, std::size_t target);

/// Cosine-similarity recall@K for each K. Query and gallery rows are features.
std::map<std::size_t, double> recall_at_k(const Tensor& queries, const Tensor& gallery,
                                          std::span<const std::size_t> targets, std::span<const std::size_t> ks);

// ---- optimizer -------------------------------------------------------------

struct AdamState {
  std::uint64_t step = 0;
  ParamStore m;
  ParamStore v;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Adam with decoupled weight decay: θ -= lr · (m̂ / (sqrt(v̂) + eps) + wd · θ).
void adam_step(ParamStore& params, const GradientMap& grads, AdamState& state, double lr, const TrainConfig& config);

// ---- training --------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double lr = 0.0;
  double l_bbc = 0.0;
  double l_cons = 0.0;
  double l_path = 0.0;
  double l_total = 0.0;
  double r1 = 0.0;
  double r10 = 0.0;
  double r50 = 0.0;
  std::optional<double> churn;
  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

/// One JSON object per line with the fields above ("churn" is null when absent).
std::string metrics_to_line(const EpochMetrics& m);
EpochMetrics metrics_from_line(const std::string& line);

struct StepResult {
  LossBreakdown loss;
  std::size_t batch = 0;
};

class Trainer {
 public:
  Trainer(TrainConfig config, const Dataset& data);

  /// Runs the next batch of the current epoch. Returns std::nullopt once the
  /// epoch has no batches left.
  std::optional<StepResult> step();
  /// Closes the epoch: refreshes the teacher bank, measures churn, evaluates.
  EpochMetrics finish_epoch();
  EpochMetrics run_epoch();
  std::vector<EpochMetrics> run(const std::function<void(const EpochMetrics&, const Trainer&)>& on_epoch = {});

  /// Recall@K of the current parameters on the held-out split.
  std::map<std::size_t, double> evaluate(std::span<const std::size_t> ks) const;

  const TrainConfig& config() const { return config_; }
  /// Extends or shortens the run; the only setting a resumed run may change.
  void set_epochs(std::size_t epochs);
  const SdfnModel& model() const { return model_; }
  const ParamStore& params() const { return params_; }
  ParamStore& mutable_params() { return params_; }
  const AdamState& optimizer() const { return adam_; }
  const PathBank& bank() const { return bank_; }
  std::size_t completed_epochs() const { return completed_epochs_; }
  std::size_t step_in_epoch() const { return step_in_epoch_; }
  const RenderedData& images() const { return images_; }
  const Dataset& dataset() const { return *data_; }

  /// Checkpoints are written between epochs.
  void save_checkpoint(const std::filesystem::path& path) const;
  static Trainer load_checkpoint(const std::filesystem::path& path, const Dataset& data);

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  TrainConfig config_;
  const Dataset* data_;
  RenderedData images_;
  SdfnModel model_;
  ParamStore params_;
  AdamState adam_;
  PathBank bank_;
  std::optional<ParamStore> teacher_params_;
  std::size_t completed_epochs_ = 0;

  // in-progress epoch
  std::vector<std::size_t> order_;
  std::size_t step_in_epoch_ = 0;
  PathRecords records_;
  double sum_bbc_ = 0.0, sum_cons_ = 0.0, sum_path_ = 0.0, sum_total_ = 0.0;
};

/// Config stored in a checkpoint header, read without loading the weights.
TrainConfig read_checkpoint_config(const std::filesystem::path& path);

// ---- routing traces --------------------------------------------------------

struct TraceRow {
  std::uint64_t query_id = 0;
  std::size_t layer = 0;
  std::string source;  // module name, or "aggregate" for the final weights
  std::array<double, kModuleCount> probs{};
};

std::vector<TraceRow> trace_paths(const SdfnModel& model, const ParamStore& params,
                                  const std::vector<TripletRecord>& records, const std::vector<RawImage>& references);
std::string trace_to_line(const TraceRow& row);
/// Parses and validates traces; raises InvariantError on a row off the simplex.
std::vector<TraceRow> read_traces(const std::filesystem::path& path);

}  // namespace sdfn
