#include "idvae/config.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace idvae {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vae: return "vae";
    case Variant::idvae: return "idvae";
    case Variant::idvae_r: return "idvae_r";
    case Variant::no_sharing: return "no_sharing";
    case Variant::c_idvae: return "c_idvae";
  }
  return "?";
}

std::string to_string(ScheduleOrder s) {
  switch (s) {
    case ScheduleOrder::dis_first: return "dis_first";
    case ScheduleOrder::enc_first: return "enc_first";
    case ScheduleOrder::joint: return "joint";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::vae, Variant::idvae, Variant::idvae_r, Variant::no_sharing, Variant::c_idvae}) {
    if (s == to_string(v)) return v;
  }
  if (s == "vae_gan") return Variant::no_sharing;
  throw ConfigError("unknown variant '" + s + "' (vae, idvae, idvae_r, no_sharing, c_idvae)");
}

ScheduleOrder parse_schedule(const std::string& s) {
  for (ScheduleOrder o : {ScheduleOrder::dis_first, ScheduleOrder::enc_first, ScheduleOrder::joint}) {
    if (s == to_string(o)) return o;
  }
  throw ConfigError("unknown schedule '" + s + "' (dis_first, enc_first, joint)");
}

namespace {

std::string fmt_float(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string fmt_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  }
}

long long to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<int> to_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  if (value.empty() || value == "auto") return out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(static_cast<int>(to_int(key, item)));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ExperimentConfig ExperimentConfig::for_variant(Variant v) {
  ExperimentConfig c;
  c.set("variant", to_string(v));
  return c;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "variant") {
    variant = parse_variant(value);
    weights = LossWeights{};
    dis_phase = true;
    if (variant == Variant::vae) {
      weights.omega = 0.0f;
      weights.lambda = 0.0f;
      dis_phase = false;
    } else if (variant == Variant::idvae_r) {
      weights.gamma = 1.0f;
    }
  } else if (key == "schedule") {
    schedule = parse_schedule(value);
  } else if (key == "dis_phase") {
    dis_phase = to_bool(key, value);
  } else if (key == "alpha") {
    weights.alpha = static_cast<real>(to_double(key, value));
  } else if (key == "beta") {
    weights.beta = static_cast<real>(to_double(key, value));
  } else if (key == "omega") {
    weights.omega = static_cast<real>(to_double(key, value));
  } else if (key == "lambda") {
    weights.lambda = static_cast<real>(to_double(key, value));
  } else if (key == "gamma") {
    weights.gamma = static_cast<real>(to_double(key, value));
  } else if (key == "lr") {
    optim.lr = static_cast<real>(to_double(key, value));
  } else if (key == "beta1") {
    optim.beta1 = static_cast<real>(to_double(key, value));
  } else if (key == "beta2") {
    optim.beta2 = static_cast<real>(to_double(key, value));
  } else if (key == "adam_eps") {
    optim.eps = static_cast<real>(to_double(key, value));
  } else if (key == "batch_size") {
    batch_size = static_cast<int>(to_int(key, value));
  } else if (key == "epochs") {
    epochs = static_cast<int>(to_int(key, value));
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(to_int(key, value));
  } else if (key == "dataset") {
    if (value != "ring2d" && value != "mnist") throw ConfigError("unknown dataset '" + value + "' (ring2d, mnist)");
    dataset = value;
  } else if (key == "data_dir") {
    data_dir = value;
  } else if (key == "train_limit") {
    train_limit = static_cast<int>(to_int(key, value));
  } else if (key == "ring_k") {
    ring_k = static_cast<int>(to_int(key, value));
  } else if (key == "ring_radius") {
    ring_radius = to_double(key, value);
  } else if (key == "ring_sigma") {
    ring_sigma = to_double(key, value);
  } else if (key == "ring_train") {
    ring_train = static_cast<int>(to_int(key, value));
  } else if (key == "ring_test") {
    ring_test = static_cast<int>(to_int(key, value));
  } else if (key == "arch") {
    if (value != "auto" && value != "mlp" && value != "conv") throw ConfigError("unknown arch '" + value + "'");
    arch = value;
  } else if (key == "latent_dim") {
    latent_dim = static_cast<int>(to_int(key, value));
  } else if (key == "trunk") {
    trunk = to_list(key, value);
  } else if (key == "decoder") {
    decoder = to_list(key, value);
  } else if (key == "log_every") {
    log_every = static_cast<int>(to_int(key, value));
  } else if (key == "probe_samples") {
    probe_samples = static_cast<int>(to_int(key, value));
  } else if (key == "checkpoints") {
    checkpoints = to_bool(key, value);
  } else if (key == "out_dir") {
    out_dir = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void ExperimentConfig::apply(const KeyValues& pairs) {
  for (const auto& [k, v] : pairs)
    if (k == "variant") set(k, v);
  for (const auto& [k, v] : pairs)
    if (k != "variant") set(k, v);
}

void ExperimentConfig::resolve() {
  const bool image = is_image();
  if (arch == "auto") arch = image ? "conv" : "mlp";
  if (latent_dim == 0) latent_dim = image ? 64 : 2;
  if (trunk.empty()) trunk = arch == "conv" ? std::vector<int>{32, 64, 128} : std::vector<int>{128, 128};
  if (decoder.empty() && arch == "mlp") decoder = trunk;
  weights.validate();
  if (variant == Variant::idvae_r && !(weights.gamma > 0.0f)) throw ConfigError("idvae_r needs gamma > 0");
  if (variant != Variant::idvae_r && weights.gamma != 0.0f) {
    throw ConfigError("gamma > 0 is reserved for the idvae_r variant");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (conditional() && !image && ring_k < 2) throw ConfigError("conditional ring needs k >= 2");
  if (optim.lr < 0.0f) throw ConfigError("lr must be >= 0");
}

KeyValues ExperimentConfig::to_pairs() const {
  return {
      {"variant", to_string(variant)},
      {"schedule", to_string(schedule)},
      {"dis_phase", dis_phase ? "true" : "false"},
      {"alpha", fmt_float(weights.alpha, 9)},
      {"beta", fmt_float(weights.beta, 9)},
      {"omega", fmt_float(weights.omega, 9)},
      {"lambda", fmt_float(weights.lambda, 9)},
      {"gamma", fmt_float(weights.gamma, 9)},
      {"lr", fmt_float(optim.lr, 9)},
      {"beta1", fmt_float(optim.beta1, 9)},
      {"beta2", fmt_float(optim.beta2, 9)},
      {"adam_eps", fmt_float(optim.eps, 9)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"seed", std::to_string(seed)},
      {"dataset", dataset},
      {"data_dir", data_dir},
      {"train_limit", std::to_string(train_limit)},
      {"ring_k", std::to_string(ring_k)},
      {"ring_radius", fmt_float(ring_radius, 17)},
      {"ring_sigma", fmt_float(ring_sigma, 17)},
      {"ring_train", std::to_string(ring_train)},
      {"ring_test", std::to_string(ring_test)},
      {"arch", arch},
      {"latent_dim", std::to_string(latent_dim)},
      {"trunk", trunk.empty() ? "auto" : fmt_list(trunk)},
      {"decoder", decoder.empty() ? "auto" : fmt_list(decoder)},
      {"log_every", std::to_string(log_every)},
      {"probe_samples", std::to_string(probe_samples)},
      {"checkpoints", checkpoints ? "true" : "false"},
      {"out_dir", out_dir},
  };
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : ExperimentConfig{}.to_pairs()) keys.push_back(k);
  return keys;
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_pairs()) out += k + " = " + v + "\n";
  return out;
}

KeyValues ExperimentConfig::parse_text(const std::string& text) {
  KeyValues pairs;
  std::stringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return pairs;
}

ExperimentConfig ExperimentConfig::from_pairs(const KeyValues& pairs) {
  ExperimentConfig c;
  c.apply(pairs);
  return c;
}

NetSpec ExperimentConfig::net_spec(const Shape& sample_shape, int classes) const {
  NetSpec spec;
  spec.input_shape = sample_shape;
  spec.latent_dim = latent_dim;
  spec.arch = arch == "conv" ? Arch::conv : Arch::mlp;
  spec.trunk = trunk;
  spec.decoder = decoder;
  spec.cond_dim = conditional() ? classes : 0;
  spec.no_sharing = variant == Variant::no_sharing;
  spec.sigmoid_output = is_image();
  return spec;
}

}  // namespace idvae
