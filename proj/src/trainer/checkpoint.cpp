// Checkpoint container: 8-byte magic, u32 version, then records of
// (u32 name length, name, u64 payload length, payload) until end of file.
// Integers and doubles are stored in host byte order.

#include <cstring>
#include <fstream>
#include <iterator>

#include "iwadv/networks/factory.hpp"
#include "iwadv/trainer/trainer.hpp"

namespace iwadv::train {

namespace {

constexpr char kMagic[8] = {'I', 'W', 'A', 'D', 'V', 'C', 'K', 'P'};

class Writer {
 public:
  template <class T>
  static void put(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void field(const std::string& name, const std::string& payload) {
    put(out_, static_cast<std::uint32_t>(name.size()));
    out_ += name;
    put(out_, static_cast<std::uint64_t>(payload.size()));
    out_ += payload;
  }
  void u64(const std::string& name, std::uint64_t v) {
    std::string p;
    put(p, v);
    field(name, p);
  }
  void doubles(const std::string& name, const std::vector<double>& v) {
    field(name, std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)));
  }
  void u64s(const std::string& name, const std::vector<std::uint64_t>& v) {
    field(name, std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::uint64_t)));
  }
  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class Fields {
 public:
  Fields(const std::string& bytes, const std::string& path) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const std::string& what) {
      if (bytes.size() - pos < n) {
        throw CheckpointError(path + ": checkpoint field '" + what + "' is truncated (" + std::to_string(n) +
                              " bytes needed, " + std::to_string(bytes.size() - pos) + " left)");
      }
    };
    need(sizeof kMagic, "magic");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
      throw CheckpointError(path + ": checkpoint field 'magic' does not match; not a checkpoint file");
    }
    pos += sizeof kMagic;
    need(4, "version");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + pos, 4);
    pos += 4;
    if (version != kCheckpointVersion) {
      throw CheckpointError(path + ": checkpoint field 'version' is " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
    std::string last = "version";
    while (pos < bytes.size()) {
      need(4, "name length after '" + last + "'");
      std::uint32_t name_len;
      std::memcpy(&name_len, bytes.data() + pos, 4);
      pos += 4;
      need(name_len, "name after '" + last + "'");
      std::string name = bytes.substr(pos, name_len);
      pos += name_len;
      need(8, name);
      std::uint64_t len;
      std::memcpy(&len, bytes.data() + pos, 8);
      pos += 8;
      need(len, name);
      fields_[name] = bytes.substr(pos, len);
      pos += len;
      last = name;
    }
    path_ = path;
  }

  bool has(const std::string& name) const { return fields_.count(name) > 0; }

  const std::string& raw(const std::string& name) const {
    auto it = fields_.find(name);
    if (it == fields_.end()) throw CheckpointError(path_ + ": checkpoint field '" + name + "' is missing");
    return it->second;
  }
  std::uint64_t u64(const std::string& name) const {
    const auto& r = raw(name);
    if (r.size() != 8) throw CheckpointError(path_ + ": checkpoint field '" + name + "' has the wrong size");
    std::uint64_t v;
    std::memcpy(&v, r.data(), 8);
    return v;
  }
  template <class T>
  std::vector<T> array(const std::string& name) const {
    const auto& r = raw(name);
    if (r.size() % sizeof(T) != 0) {
      throw CheckpointError(path_ + ": checkpoint field '" + name + "' length is not a whole number of elements");
    }
    std::vector<T> v(r.size() / sizeof(T));
    std::memcpy(v.data(), r.data(), r.size());
    return v;
  }
  [[noreturn]] void fail(const std::string& name, const std::string& msg) const {
    throw CheckpointError(path_ + ": checkpoint field '" + name + "' " + msg);
  }

 private:
  std::map<std::string, std::string> fields_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const TrainState& state, const TrainingConfig& config, const std::filesystem::path& path) {
  Writer w;
  w.field("descriptor", state.model.descriptor().dump());
  w.field("config", config.to_json().dump());
  w.field("objective", state.objective);
  w.u64("seed", state.seed);
  w.u64("step", state.step);
  w.field("rng", state.rng);
  w.field("data_rng", state.data_rng);
  w.u64s("order", std::vector<std::uint64_t>(state.order.begin(), state.order.end()));
  w.u64("cursor", state.cursor);
  w.u64("epoch", state.epoch);
  w.u64("stopped_early", state.stopped_early ? 1 : 0);
  std::vector<double> hist;
  // wall_ms stays out so that reruns write identical files
  for (const auto& r : state.history) {
    hist.insert(hist.end(), {static_cast<double>(r.step), r.model_loss, r.bound, r.disc_loss});
  }
  w.doubles("history", hist);
  for (const auto& p : state.model.parameters()) {
    std::vector<std::uint64_t> shape(p.tensor.shape().begin(), p.tensor.shape().end());
    w.u64s("shape:" + p.name, shape);
    w.doubles("param:" + p.name, std::vector<double>(p.tensor.values().begin(), p.tensor.values().end()));
  }
  for (const auto& [name, m] : state.optimizer.m) w.doubles("adam_m:" + name, m);
  for (const auto& [name, v] : state.optimizer.v) w.doubles("adam_v:" + name, v);
  for (const auto& [group, t] : state.optimizer.t) w.u64("opt_t:" + group, t);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    std::string header;
    Writer::put(header, kCheckpointVersion);
    out << header << w.bytes();
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path, TrainingConfig* config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Fields f(bytes, path.string());

  TrainState s;
  Json desc;
  try {
    desc = Json::parse(f.raw("descriptor"));
    RandomSource scratch(0);
    s.model = nn::make_model(desc, scratch);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    f.fail("descriptor", std::string("cannot rebuild the model: ") + e.what());
  }
  if (config) {
    try {
      *config = TrainingConfig::from_json(Json::parse(f.raw("config")));
    } catch (const CheckpointError&) {
      throw;
    } catch (const std::exception& e) {
      f.fail("config", e.what());
    }
  }
  s.objective = f.raw("objective");
  s.seed = f.u64("seed");
  s.step = f.u64("step");
  s.rng = f.raw("rng");
  s.data_rng = f.raw("data_rng");
  for (const char* name : {"rng", "data_rng"}) {
    try {
      (void)RandomSource::deserialize(f.raw(name));
    } catch (const std::exception& e) {
      f.fail(name, std::string("is not a generator state: ") + e.what());
    }
  }
  for (auto v : f.array<std::uint64_t>("order")) s.order.push_back(v);
  s.cursor = f.u64("cursor");
  s.epoch = f.u64("epoch");
  if (s.cursor > s.order.size()) f.fail("cursor", "points past the data order");
  s.stopped_early = f.u64("stopped_early") != 0;
  auto hist = f.array<double>("history");
  if (hist.size() % 4 != 0) f.fail("history", "is not a whole number of records");
  for (std::size_t i = 0; i < hist.size(); i += 4) {
    s.history.push_back({static_cast<std::size_t>(hist[i]), hist[i + 1], hist[i + 2], hist[i + 3], 0.0});
  }
  for (const auto& p : s.model.parameters()) {
    auto shape = f.array<std::uint64_t>("shape:" + p.name);
    if (!std::equal(shape.begin(), shape.end(), p.tensor.shape().begin(), p.tensor.shape().end())) {
      f.fail("shape:" + p.name, "does not match the rebuilt model");
    }
    auto values = f.array<double>("param:" + p.name);
    if (values.size() != p.tensor.size()) f.fail("param:" + p.name, "has the wrong number of values");
    Tensor target = p.tensor;
    std::copy(values.begin(), values.end(), target.mutable_values().begin());
    for (const char* kind : {"adam_m:", "adam_v:"}) {
      const std::string name = kind + p.name;
      if (!f.has(name)) continue;
      auto mv = f.array<double>(name);
      if (mv.size() != p.tensor.size()) f.fail(name, "has the wrong number of values");
      (kind[5] == 'm' ? s.optimizer.m : s.optimizer.v)[p.name] = std::move(mv);
    }
  }
  for (const char* group : {"theta", "phi", "psi"}) {
    const std::string name = std::string("opt_t:") + group;
    if (f.has(name)) s.optimizer.t[group] = f.u64(name);
  }
  return s;
}

}  // namespace iwadv::train
