#include "sdfn/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdfn/errors.hpp"
#include "sdfn/gradcheck_suite.hpp"
#include "sdfn/training.hpp"

namespace sdfn {

namespace fs = std::filesystem;

std::vector<AblationVariant> ablation_variants() {
  const std::string plain = "use_cons=false", no_spd = "lambda=0", uniform = "router=uniform";
  return {
      {"baseline", {uniform, plain, no_spd}},
      {"baseline+sr", {"router=sr", plain, no_spd}},
      {"baseline+msr", {"router=msr", plain, no_spd}},
      {"baseline+cons", {uniform, "use_cons=true", no_spd}},
      {"baseline+cons+sr", {"router=sr", "use_cons=true", no_spd}},
      {"baseline+cons+msr", {"router=msr", "use_cons=true", no_spd}},
      {"sdfn", {"router=msr", "use_cons=true"}},
      {"no-rcm", {"router=msr", "use_cons=true", "disable=rcm"}},
      {"no-jrm", {"router=msr", "use_cons=true", "disable=jrm"}},
      {"no-gtm", {"router=msr", "use_cons=true", "disable=gtm"}},
      {"no-cam", {"router=msr", "use_cons=true", "disable=cam"}},
  };
}

AblationVariant find_variant(const std::string& name) {
  const std::string key = name == "no-rsm" ? "no-rcm" : name;
  for (auto& v : ablation_variants()) {
    if (v.name == key) return v;
  }
  throw ConfigError("unknown ablation variant: " + name);
}

TrainConfig apply_variant(TrainConfig base, const AblationVariant& variant) {
  // The SPD weight of the base config is kept unless the variant turns it off.
  set_config_value(base, "disable", "none");
  for (const auto& kv : variant.overrides) {
    const auto eq = kv.find('=');
    set_config_value(base, kv.substr(0, eq), kv.substr(eq + 1));
  }
  base.validate();
  return base;
}

namespace {

struct CommonOptions {
  std::string preset;
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string data;
  std::string checkpoint;
};

void add_config_options(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--preset", o.preset, "named preset: toy, fashioniq, shoes, fashion200k");
  cmd->add_option("--config", o.config, "config file of key = value lines");
  cmd->add_option("--set", o.overrides, "KEY=VALUE override, applied last (repeatable)");
  cmd->add_option("--seed", o.seed, "shorthand for --set seed=N");
}

TrainConfig load_config(const CommonOptions& o) {
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  return parse_config(o.preset, o.config, overrides);
}

Dataset obtain_dataset(const CommonOptions& o, const TrainConfig& config) {
  return o.data.empty() ? build_dataset(config) : load_dataset(o.data);
}

fs::path require_checkpoint(const std::string& path) {
  if (path.empty() || !fs::is_regular_file(path)) throw CheckpointMissing("checkpoint not found: " + path);
  return path;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

class SeriesWriter {
 public:
  explicit SeriesWriter(const fs::path& dir, bool append) {
    fs::create_directories(dir);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    metrics_.open(dir / "metrics.log", mode);
    loss_.open(dir / "loss.tsv", mode);
    churn_.open(dir / "churn.tsv", mode);
    recall_.open(dir / "recall.tsv", mode);
    if (!append) {
      loss_ << "epoch\tl_bbc\tl_cons\tl_path\tl_total\n";
      churn_ << "epoch\tchurn\n";
      recall_ << "epoch\tr1\tr10\tr50\n";
    }
  }
  void write(const EpochMetrics& m) {
    metrics_ << metrics_to_line(m) << '\n' << std::flush;
    loss_ << m.epoch << '\t' << fmt(m.l_bbc) << '\t' << fmt(m.l_cons) << '\t' << fmt(m.l_path) << '\t'
          << fmt(m.l_total) << '\n'
          << std::flush;
    churn_ << m.epoch << '\t' << (m.churn ? fmt(*m.churn) : "NA") << '\n' << std::flush;
    recall_ << m.epoch << '\t' << fmt(m.r1) << '\t' << fmt(m.r10) << '\t' << fmt(m.r50) << '\n' << std::flush;
  }

 private:
  std::ofstream metrics_, loss_, churn_, recall_;
};

std::vector<EpochMetrics> train_into(Trainer& trainer, const fs::path& out, bool append, bool checkpoints) {
  SeriesWriter series(out, append);
  std::ofstream(out / "config.txt") << config_to_text(trainer.config());
  return trainer.run([&](const EpochMetrics& m, const Trainer& t) {
    series.write(m);
    if (checkpoints) t.save_checkpoint(out / "checkpoints" / ("epoch_" + std::to_string(m.epoch)));
    std::cerr << "epoch " << m.epoch << " loss " << fmt(m.l_total) << " R@1 " << fmt(m.r1) << '\n';
  });
}

nlohmann::json recall_json(const std::map<std::size_t, double>& recall) {
  nlohmann::json j;
  for (const auto& [k, v] : recall) j["R" + std::to_string(k)] = v;
  return j;
}

int cmd_gen_data(const CommonOptions& o) {
  const TrainConfig config = load_config(o);
  const Dataset data = build_dataset(config);
  save_dataset(data, o.out);
  nlohmann::json j = {{"train", data.train.size()},
                      {"eval", data.eval.queries.size()},
                      {"gallery", data.eval.gallery.size()},
                      {"vocab", data.universe.vocab_size()},
                      {"dir", o.out}};
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_train(const CommonOptions& o, const std::string& resume, bool keep_checkpoints) {
  std::optional<Trainer> trainer;
  std::optional<Dataset> data;
  if (!resume.empty()) {
    const fs::path ckpt = require_checkpoint(resume);
    TrainConfig config = read_checkpoint_config(ckpt);
    data = obtain_dataset(o, config);
    trainer.emplace(Trainer::load_checkpoint(ckpt, *data));
    for (const auto& kv : o.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || kv.substr(0, eq) != "epochs") {
        throw ConfigError("only epochs may be overridden when resuming, got '" + kv + "'");
      }
      TrainConfig probe = trainer->config();
      set_config_value(probe, "epochs", kv.substr(eq + 1));
      trainer->set_epochs(probe.epochs);
    }
  } else {
    const TrainConfig config = load_config(o);
    data = obtain_dataset(o, config);
    trainer.emplace(config, *data);
  }
  const auto log = train_into(*trainer, o.out, !resume.empty(), keep_checkpoints);
  if (!log.empty()) std::cout << metrics_to_line(log.back()) << '\n';
  return kExitOk;
}

int cmd_eval(const CommonOptions& o) {
  const fs::path ckpt = require_checkpoint(o.checkpoint);
  const Dataset data = obtain_dataset(o, read_checkpoint_config(ckpt));
  const Trainer trainer = Trainer::load_checkpoint(ckpt, data);
  const std::array<std::size_t, 3> ks{1, 10, 50};
  std::cout << recall_json(trainer.evaluate(ks)).dump() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& components) {
  GradCheckOptions options;
  double worst = 0.0;
  bool ok = true;
  std::cout << "component\tseed\tmax_rel_error\tcoordinates\trefined\tstatus\n";
  const auto names = components.empty() ? gradcheck_components() : components;
  for (std::uint64_t seed : seeds) {
    for (const auto& name : names) {
      const SuiteCase c = run_gradcheck_case(name, seed, options);
      worst = std::max(worst, c.report.max_rel_error);
      ok = ok && c.report.passed;
      std::printf("%s\t%llu\t%.3e\t%zu\t%zu\t%s\n", name.c_str(), static_cast<unsigned long long>(seed),
                  c.report.max_rel_error, c.report.coordinates, c.report.refined, c.report.passed ? "ok" : "FAIL");
    }
  }
  std::printf("max_rel_error\t%.3e\t%s\n", worst, ok ? "ok" : "FAIL");
  return ok ? kExitOk : kExitFailure;
}

int cmd_trace(const CommonOptions& o, const std::string& split, std::size_t limit) {
  const fs::path ckpt = require_checkpoint(o.checkpoint);
  const Dataset data = obtain_dataset(o, read_checkpoint_config(ckpt));
  const Trainer trainer = Trainer::load_checkpoint(ckpt, data);
  std::vector<TripletRecord> records;
  std::vector<RawImage> refs;
  if (split == "eval") {
    records = data.eval.queries;
    refs = trainer.images().eval_reference;
  } else if (split == "train") {
    records = data.train;
    refs = trainer.images().train_reference;
  } else {
    throw ConfigError("unknown split: " + split);
  }
  if (limit && limit < records.size()) {
    records.resize(limit);
    refs.resize(limit);
  }
  const auto rows = trace_paths(trainer.model(), trainer.params(), records, refs);
  fs::create_directories(o.out);
  const fs::path path = fs::path(o.out) / "traces.log";
  {
    std::ofstream out(path);
    for (const auto& row : rows) out << trace_to_line(row) << '\n';
  }
  const auto checked = read_traces(path);
  nlohmann::json j = {{"rows", checked.size()}, {"queries", records.size()}, {"path", path.string()}};
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_ablate(const CommonOptions& o, const std::vector<std::string>& names, const std::vector<std::uint64_t>& seeds) {
  const TrainConfig base = load_config(o);
  std::vector<AblationVariant> variants;
  if (names.empty()) {
    variants = ablation_variants();
  } else {
    for (const auto& n : names) variants.push_back(find_variant(n));
  }
  const std::vector<std::uint64_t> run_seeds = seeds.empty() ? std::vector<std::uint64_t>{base.seed} : seeds;
  const Dataset data = obtain_dataset(o, base);
  fs::create_directories(o.out);
  std::ofstream table(fs::path(o.out) / "ablation.tsv");
  const std::string header = "variant\tseed\tr1\tr10\tr50\tmean_churn\n";
  table << header;
  std::cout << header;
  for (const auto& variant : variants) {
    for (std::uint64_t seed : run_seeds) {
      TrainConfig config = apply_variant(base, variant);
      config.seed = seed;
      Trainer trainer(config, data);
      const fs::path dir = fs::path(o.out) / variant.name / ("seed_" + std::to_string(seed));
      const auto log = train_into(trainer, dir, false, false);
      double churn = 0.0;
      std::size_t counted = 0;
      for (const auto& m : log) {
        if (m.churn) {
          churn += *m.churn;
          ++counted;
        }
      }
      std::ostringstream row;
      row << variant.name << '\t' << seed << '\t' << fmt(log.back().r1) << '\t' << fmt(log.back().r10) << '\t'
          << fmt(log.back().r50) << '\t' << (counted ? fmt(churn / static_cast<double>(counted)) : "NA") << '\n';
      table << row.str() << std::flush;
      std::cout << row.str() << std::flush;
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"sdfn: dynamic fusion network for composed image retrieval on synthetic data"};
  app.require_subcommand(1);
  CommonOptions o;

  auto* gen = app.add_subcommand("gen-data", "generate and save a synthetic dataset");
  add_config_options(gen, o);
  gen->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  add_config_options(train, o);
  std::string resume;
  bool last_only = false;
  train->add_option("--out", o.out, "output directory")->required();
  train->add_option("--data", o.data, "dataset directory from gen-data (default: generate from the config)");
  train->add_option("--resume", resume, "continue from a checkpoint");
  train->add_flag("--no-checkpoints", last_only, "skip writing per-epoch checkpoints");

  auto* eval = app.add_subcommand("eval", "recall@K of a checkpoint on the held-out split");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", o.data, "dataset directory");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check of every component");
  std::vector<std::uint64_t> grad_seeds{0, 1, 2, 3, 4};
  std::vector<std::string> components;
  grad->add_option("--seeds", grad_seeds, "seeds to check");
  grad->add_option("--component", components, "restrict to these components");

  auto* trace = app.add_subcommand("trace-paths", "dump routing tables of a checkpoint");
  std::string split = "eval";
  std::size_t limit = 0;
  trace->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  trace->add_option("--data", o.data, "dataset directory");
  trace->add_option("--split", split, "eval or train");
  trace->add_option("--limit", limit, "number of queries (0 = all)");
  trace->add_option("--out", o.out, "output directory");

  auto* ablate = app.add_subcommand("ablate", "train every ablation variant and tabulate recall");
  add_config_options(ablate, o);
  std::vector<std::string> variant_names;
  std::vector<std::uint64_t> ablate_seeds;
  ablate->add_option("--out", o.out, "output directory")->required();
  ablate->add_option("--data", o.data, "dataset directory");
  ablate->add_option("--variants", variant_names, "subset of variants (default: all)");
  ablate->add_option("--seeds", ablate_seeds, "seeds (default: the config seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train(o, resume, !last_only);
    if (*eval) return cmd_eval(o);
    if (*grad) return cmd_gradcheck(grad_seeds, components);
    if (*trace) return cmd_trace(o, split, limit);
    if (*ablate) return cmd_ablate(o, variant_names, ablate_seeds);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CheckpointMissing& e) {
    std::cerr << e.what() << '\n';
    return kExitNoCheckpoint;
  } catch (const NumericsError& e) {
    std::cerr << "numerics error: " << e.what() << '\n';
    return kExitNumerics;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace sdfn
