#include "idvae/trainer.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace idvae {

namespace {

constexpr const char* kMagic = "IDVAE-CHECKPOINT 1";

std::string join_dims(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

Shape split_dims(const std::string& text) {
  Shape s;
  if (text == "scalar") return s;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) s.push_back(std::stoll(item));
  return s;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void write_floats(std::ostream& out, const std::vector<float>& values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(values[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
}

std::string moment_name(const std::string& opt, const char* which, const std::string& param) {
  return "adam/" + opt + "/" + which + "/" + param;
}

void copy_into(const StoredTensor& src, Tensor dst, const std::string& name) {
  if (src.shape != dst.shape()) {
    throw DataError("checkpoint tensor '" + name + "' has shape " + join_dims(src.shape) + ", model expects " +
                    join_dims(dst.shape()));
  }
  auto out = dst.mutable_data();
  std::copy(src.values.begin(), src.values.end(), out.begin());
}

const StoredTensor& require(const Checkpoint& ckpt, const std::string& name) {
  const StoredTensor* t = ckpt.find(name);
  if (!t) throw DataError("checkpoint is missing tensor '" + name + "'");
  return *t;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ostringstream manifest;
  manifest << kMagic << "\n";
  manifest << "step " << step << "\n";
  manifest << "rng " << rng_seed << " " << rng_counter << "\n";
  for (const auto& [k, v] : config) manifest << "config " << k << "=" << v << "\n";
  for (const auto& [name, t] : optimizer_steps) manifest << "optimizer " << name << " " << t << "\n";
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    manifest << "tensor " << t.name << " " << join_dims(t.shape) << " " << offset << " " << t.values.size() << "\n";
    offset += t.values.size() * 4;
  }
  manifest << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << manifest.str();
  for (const auto& t : tensors) write_floats(out, t.values);
  if (!out) throw DataError("error while writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const auto where = [&](const std::string& msg) { return DataError(path.string() + ": " + msg); };

  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw where("not a checkpoint (bad header)");

  Checkpoint ckpt;
  struct Entry {
    std::uint64_t offset;
    std::uint64_t count;
  };
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (kind == "step") {
      fields >> ckpt.step;
    } else if (kind == "rng") {
      fields >> ckpt.rng_seed >> ckpt.rng_counter;
    } else if (kind == "config") {
      const auto rest = line.substr(7);
      const auto eq = rest.find('=');
      if (eq == std::string::npos) throw where("bad config line '" + line + "'");
      ckpt.config.emplace_back(rest.substr(0, eq), rest.substr(eq + 1));
      continue;
    } else if (kind == "optimizer") {
      std::string name;
      std::uint64_t t = 0;
      fields >> name >> t;
      ckpt.optimizer_steps[name] = t;
    } else if (kind == "tensor") {
      StoredTensor t;
      std::string dims;
      Entry e{};
      fields >> t.name >> dims >> e.offset >> e.count;
      try {
        t.shape = split_dims(dims);
      } catch (const std::exception&) {
        throw where("bad tensor dims '" + dims + "'");
      }
      if (fields.fail() || static_cast<std::uint64_t>(numel(t.shape)) != e.count) {
        throw where("bad tensor entry '" + line + "'");
      }
      ckpt.tensors.push_back(std::move(t));
      entries.push_back(e);
    } else {
      throw where("unknown manifest line '" + line + "'");
    }
    if (fields.fail()) throw where("malformed manifest line '" + line + "'");
  }
  if (!ended) throw where("truncated manifest");

  const auto data_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto data_bytes = static_cast<std::uint64_t>(in.tellg() - data_start);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.offset + e.count * 4 > data_bytes) throw where("truncated data for tensor '" + ckpt.tensors[i].name + "'");
    std::vector<std::uint32_t> words(e.count);
    in.seekg(data_start + static_cast<std::streamoff>(e.offset));
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(e.count * 4));
    if (!in) throw where("read error in tensor '" + ckpt.tensors[i].name + "'");
    auto& values = ckpt.tensors[i].values;
    values.resize(e.count);
    for (std::size_t j = 0; j < e.count; ++j) values[j] = std::bit_cast<float>(to_little(words[j]));
  }
  return ckpt;
}

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

ExperimentConfig checkpoint_config(const Checkpoint& ckpt) {
  ExperimentConfig config = ExperimentConfig::from_pairs(ckpt.config);
  config.resolve();
  return config;
}

Checkpoint make_checkpoint(const ExperimentConfig& config, const TrainState& state) {
  Checkpoint ckpt;
  ckpt.config = config.to_pairs();
  ckpt.step = state.step;
  ckpt.rng_seed = state.seed;
  ckpt.rng_counter = state.step;
  for (const auto& p : state.net->params().all()) {
    const auto v = p.tensor.data();
    ckpt.tensors.push_back({p.name, p.tensor.shape(), std::vector<float>(v.begin(), v.end())});
  }
  for (const auto& [name, opt] : state.optimizers) {
    ckpt.optimizer_steps[name] = opt.steps();
    for (const auto& p : opt.params()) {
      const Moments& m = opt.moments().at(p.name);
      ckpt.tensors.push_back({moment_name(name, "m", p.name), p.tensor.shape(), std::vector<float>(m.m.begin(), m.m.end())});
      ckpt.tensors.push_back({moment_name(name, "v", p.name), p.tensor.shape(), std::vector<float>(m.v.begin(), m.v.end())});
    }
  }
  return ckpt;
}

TrainState restore_state(const Checkpoint& ckpt, const ExperimentConfig& config, const Shape& sample_shape,
                         int classes) {
  TrainState state = TrainState::create(config, sample_shape, classes);
  state.step = ckpt.step;
  state.seed = ckpt.rng_seed;
  for (const auto& p : state.net->params().all()) copy_into(require(ckpt, p.name), p.tensor, p.name);
  for (auto& [name, opt] : state.optimizers) {
    const auto it = ckpt.optimizer_steps.find(name);
    if (it == ckpt.optimizer_steps.end()) throw DataError("checkpoint has no optimizer state for phase '" + name + "'");
    opt.set_steps(it->second);
    for (const auto& p : opt.params()) {
      Moments& m = opt.moments().at(p.name);
      const auto& sm = require(ckpt, moment_name(name, "m", p.name));
      const auto& sv = require(ckpt, moment_name(name, "v", p.name));
      if (sm.values.size() != m.m.size() || sv.values.size() != m.v.size()) {
        throw DataError("checkpoint moments for '" + p.name + "' have the wrong size");
      }
      m.m.assign(sm.values.begin(), sm.values.end());
      m.v.assign(sv.values.begin(), sv.values.end());
    }
  }
  return state;
}

std::unique_ptr<Network> load_network(const Checkpoint& ckpt, const Shape& sample_shape, int classes) {
  const ExperimentConfig config = checkpoint_config(ckpt);
  auto net = std::make_unique<Network>(config.net_spec(sample_shape, classes), config.seed);
  for (const auto& p : net->params().all()) copy_into(require(ckpt, p.name), p.tensor, p.name);
  return net;
}

}  // namespace idvae
