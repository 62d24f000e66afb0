#include "sdfn/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sdfn/errors.hpp"

namespace sdfn {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field size_field(T TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.*member = static_cast<T>(to_size("", v)); },
          [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.*member = to_double("", v); },
          [member](const TrainConfig& c) { return fmt_double(c.*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"epochs", size_field(&TrainConfig::epochs)},
      {"batch_size", size_field(&TrainConfig::batch_size)},
      {"lr", double_field(&TrainConfig::lr)},
      {"weight_decay", double_field(&TrainConfig::weight_decay)},
      {"lr_decay_epoch", size_field(&TrainConfig::lr_decay_epoch)},
      {"lr_decay_factor", double_field(&TrainConfig::lr_decay_factor)},
      {"adam_beta1", double_field(&TrainConfig::adam_beta1)},
      {"adam_beta2", double_field(&TrainConfig::adam_beta2)},
      {"adam_eps", double_field(&TrainConfig::adam_eps)},
      {"lambda", double_field(&TrainConfig::lambda)},
      {"tau_path", double_field(&TrainConfig::tau_path)},
      {"bbc_scale", double_field(&TrainConfig::bbc_scale)},
      {"use_cons",
       {[](TrainConfig& c, const std::string& v) { c.use_cons = to_bool("use_cons", v); },
        [](const TrainConfig& c) { return std::string(c.use_cons ? "true" : "false"); }}},
      {"teacher",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "bank") c.teacher = TeacherMode::kBank;
          else if (v == "model_copy") c.teacher = TeacherMode::kModelCopy;
          else throw ConfigError("teacher: expected bank or model_copy, got '" + v + "'");
        },
        [](const TrainConfig& c) { return std::string(c.teacher == TeacherMode::kBank ? "bank" : "model_copy"); }}},
      {"layers", size_field(&TrainConfig::layers)},
      {"dim", size_field(&TrainConfig::dim)},
      {"raw_dim", size_field(&TrainConfig::raw_dim)},
      {"heads", size_field(&TrainConfig::heads)},
      {"ffn_hidden", size_field(&TrainConfig::ffn_hidden)},
      {"tau_r", double_field(&TrainConfig::tau_r)},
      {"router",
       {[](TrainConfig& c, const std::string& v) {
          auto k = router_from_name(v);
          if (!k) throw ConfigError("router: expected msr, sr or uniform, got '" + v + "'");
          c.router = *k;
        },
        [](const TrainConfig& c) { return std::string(router_name(c.router)); }}},
      {"disable",
       {[](TrainConfig& c, const std::string& v) {
          c.enabled = {true, true, true, true};
          if (v.empty() || v == "none") return;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) {
            auto k = module_from_name(trim(item));
            if (!k) throw ConfigError("disable: unknown module '" + item + "'");
            c.enabled[static_cast<std::size_t>(*k)] = false;
          }
        },
        [](const TrainConfig& c) {
          std::string out;
          for (ModuleKind k : kModuleOrder) {
            if (c.enabled[static_cast<std::size_t>(k)]) continue;
            if (!out.empty()) out += ',';
            out += module_name(k);
          }
          return out.empty() ? std::string("none") : out;
        }}},
      {"attributes", size_field(&TrainConfig::attributes)},
      {"values", size_field(&TrainConfig::values)},
      {"grid", size_field(&TrainConfig::grid)},
      {"channels", size_field(&TrainConfig::channels)},
      {"noise", double_field(&TrainConfig::noise)},
      {"max_edits", size_field(&TrainConfig::max_edits)},
      {"train_size", size_field(&TrainConfig::train_size)},
      {"eval_queries", size_field(&TrainConfig::eval_queries)},
      {"gallery_size", size_field(&TrainConfig::gallery_size)},
      {"data_seed", size_field(&TrainConfig::data_seed)},
      {"seed", size_field(&TrainConfig::seed)},
  };
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (lr_decay_epoch == 0) fail("lr_decay_epoch must be positive");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) fail("lr_decay_factor must lie in (0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(lambda >= 0.0)) fail("lambda must be non-negative");
  if (!(tau_path > 0.0)) fail("tau_path must be positive");
  if (!(bbc_scale > 0.0)) fail("bbc_scale must be positive");
  if (!(noise >= 0.0)) fail("noise must be non-negative");
  if (grid == 0 || channels == 0) fail("grid and channels must be positive");
  if (max_edits == 0) fail("max_edits must be positive");
  if (train_size == 0 || eval_queries == 0 || gallery_size == 0) fail("data sizes must be positive");
  if (attributes < 2 || values < 2) fail("attributes and values must be at least 2");
  if (attributes > grid * grid) fail("attributes exceed the grid cells");
  if (values > channels) fail("values exceed the channel count");
  network().validate();
}

NetworkConfig TrainConfig::network() const {
  NetworkConfig n;
  n.dim = dim;
  n.heads = heads;
  n.ffn_hidden = effective_ffn_hidden();
  n.layers = layers;
  n.router = router;
  n.tau_r = tau_r;
  n.enabled = enabled;
  return n;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : fields()) keys.push_back(k);
  return keys;
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(config, trim(value));
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    throw ConfigError(what.rfind(':', 0) == 0 ? key + what : what);
  }
}

std::string get_config_value(const TrainConfig& config, const std::string& key) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(config);
}

std::vector<std::string> preset_names() { return {"toy", "fashioniq", "shoes", "fashion200k"}; }

TrainConfig preset(const std::string& name) {
  TrainConfig c;  // defaults are the toy preset
  if (name == "toy") return c;
  auto full_size = [](TrainConfig& p) {
    p.lr = 1e-4;
    p.weight_decay = 1e-6;
    p.lr_decay_factor = 0.1;
    p.dim = 1024;
    p.raw_dim = 2048;
  };
  if (name == "fashioniq") {
    full_size(c);
    c.epochs = 60;
    c.batch_size = 32;
    c.lr_decay_epoch = 50;
    c.lambda = 1.0;
    return c;
  }
  if (name == "shoes") {
    full_size(c);
    c.epochs = 30;
    c.batch_size = 16;
    c.lr_decay_epoch = 15;
    c.lambda = 0.6;
    return c;
  }
  if (name == "fashion200k") {
    full_size(c);
    c.epochs = 50;
    c.batch_size = 64;
    c.lr_decay_epoch = 30;
    c.lambda = 0.6;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

TrainConfig parse_config_text(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool seen_other = false;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      if (seen_other) throw ConfigError("config line " + std::to_string(number) + ": preset must come first");
      base = preset(value);
      continue;
    }
    seen_other = true;
    set_config_value(base, key, value);
  }
  return base;
}

TrainConfig parse_config(const std::string& preset_name, const std::filesystem::path& path,
                         const std::vector<std::string>& overrides) {
  TrainConfig config = preset_name.empty() ? TrainConfig{} : preset(preset_name);
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    config = parse_config_text(ss.str(), config);
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not KEY=VALUE");
    set_config_value(config, trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  config.validate();
  return config;
}

std::string config_to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace sdfn
