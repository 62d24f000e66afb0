#include <cstring>
#include <fstream>

#include "sdfn/errors.hpp"
#include "sdfn/training.hpp"

namespace sdfn {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'F', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  void u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(std::span<const double> xs) {
    u64(xs.size());
    out_.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    doubles(t.data());
  }
  void store(const ParamStore& s) {
    u64(s.size());
    for (const auto& [name, t] : s) {
      str(name);
      tensor(t);
    }
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw ParseError(origin_ + ": truncated checkpoint");
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::size_t count() {
    const std::uint64_t n = u64();
    if (n > (std::uint64_t{1} << 32)) throw ParseError(origin_ + ": implausible length field");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    std::string s(count(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> xs(count());
    raw(xs.data(), xs.size() * sizeof(double));
    return xs;
  }
  Tensor tensor() {
    Shape shape(count());
    for (auto& d : shape) d = count();
    try {
      return Tensor(shape, doubles());
    } catch (const ShapeError& e) {
      throw ParseError(origin_ + ": " + e.what());
    }
  }
  ParamStore store() {
    ParamStore s;
    const std::size_t n = count();
    for (std::size_t i = 0; i < n; ++i) {
      std::string name = str();
      s.add(name, tensor());
    }
    return s;
  }

 private:
  std::ifstream& in_;
  std::string origin_;
};

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  if (step_in_epoch_ != 0) throw InvariantError("checkpoints are only written between epochs");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    Writer w(out);
    w.str(config_to_text(config_));
    w.u64(completed_epochs_);
    w.store(params_);
    w.u64(adam_.step);
    w.store(adam_.m);
    w.store(adam_.v);
    w.u64(bank_.epoch);
    w.u64(bank_.logits.size());
    for (const auto& [id, logits] : bank_.logits) {
      w.u64(id);
      w.doubles(logits);
    }
    w.u64(teacher_params_ ? 1 : 0);
    if (teacher_params_) w.store(*teacher_params_);
    if (!out) throw Error("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

TrainConfig read_header(Reader& r, const std::filesystem::path& path) {
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(path.string() + ": not a checkpoint");
  std::uint32_t version = 0;
  r.raw(&version, sizeof version);
  if (version != kVersion) throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  return parse_config_text(r.str());
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointMissing("cannot open checkpoint " + path.string());
  return in;
}

}  // namespace

TrainConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in = open_checkpoint(path);
  Reader r(in, path.string());
  return read_header(r, path);
}

Trainer Trainer::load_checkpoint(const std::filesystem::path& path, const Dataset& data) {
  std::ifstream in = open_checkpoint(path);
  Reader r(in, path.string());
  TrainConfig config = read_header(r, path);
  Trainer trainer(config, data);
  trainer.completed_epochs_ = r.count();
  ParamStore params = r.store();
  for (const auto& [name, t] : trainer.params_) {
    if (!params.contains(name) || params.at(name).shape() != t.shape()) {
      throw ParseError(path.string() + ": parameter " + name + " missing or reshaped");
    }
  }
  if (params.size() != trainer.params_.size()) throw ParseError(path.string() + ": unexpected parameters");
  trainer.params_ = std::move(params);
  trainer.adam_.step = r.u64();
  trainer.adam_.m = r.store();
  trainer.adam_.v = r.store();
  trainer.bank_.epoch = r.count();
  const std::size_t entries = r.count();
  for (std::size_t i = 0; i < entries; ++i) {
    const std::uint64_t id = r.u64();
    trainer.bank_.logits[id] = r.doubles();
  }
  if (r.u64() != 0) trainer.teacher_params_ = r.store();
  return trainer;
}

}  // namespace sdfn
