#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sdfn/fusion.hpp"
#include "sdfn/router.hpp"

namespace sdfn {

enum class TeacherMode { kBank, kModelCopy };

/// Every knob of a training run. Keys in config files and `--set` overrides use
/// the field names below (see docs/config.md).
struct TrainConfig {
  // optimization
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  std::size_t lr_decay_epoch = 25;
  double lr_decay_factor = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // objective
  double lambda = 0.6;
  double tau_path = 2.0;
  double bbc_scale = 10.0;
  bool use_cons = true;
  TeacherMode teacher = TeacherMode::kBank;

  // architecture
  std::size_t layers = 3;
  std::size_t dim = 32;
  std::size_t raw_dim = 0;     // 0 -> 2 * dim
  std::size_t heads = 4;
  std::size_t ffn_hidden = 0;  // 0 -> 4 * dim
  double tau_r = 1.0;
  RouterKind router = RouterKind::kMsr;
  std::array<bool, kModuleCount> enabled{true, true, true, true};

  // synthetic data
  std::size_t attributes = 4;
  std::size_t values = 6;
  std::size_t grid = 4;
  std::size_t channels = 8;
  double noise = 0.05;
  std::size_t max_edits = 2;
  std::size_t train_size = 2000;
  std::size_t eval_queries = 500;
  std::size_t gallery_size = 256;
  std::uint64_t data_seed = 1234;

  std::uint64_t seed = 42;

  std::size_t effective_raw_dim() const { return raw_dim ? raw_dim : 2 * dim; }
  std::size_t effective_ffn_hidden() const { return ffn_hidden ? ffn_hidden : 4 * dim; }
  /// Learning rate in effect during 1-based `epoch`.
  double lr_at(std::size_t epoch) const { return epoch >= lr_decay_epoch ? lr * lr_decay_factor : lr; }
  bool spd_enabled() const { return lambda > 0.0; }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
  NetworkConfig network() const;
};

std::vector<std::string> config_keys();
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& config, const std::string& key);

/// Named presets: toy, fashioniq, shoes, fashion200k.
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// `key = value` lines; '#' starts a comment. A `preset` key, when present,
/// must come first and seeds the remaining values.
TrainConfig parse_config_text(const std::string& text, TrainConfig base = {});

// Builds a config from an optional preset, an optional file and KEY=VALUE
// overrides applied last, then validates it.
TrainConfig parse_config(const std::string& preset_name, const std::filesystem::path& path,
                         const std::vector<std::string>& overrides);

/// Round-trippable `key = value` rendering of every field.
std::string config_to_text(const TrainConfig& config);

}  // namespace sdfn
