#pragma once

#include "idvae/data.hpp"
#include "idvae/losses.hpp"
#include "idvae/nets.hpp"
#include "idvae/optim.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace idvae {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { vae, idvae, idvae_r, no_sharing, c_idvae };
enum class ScheduleOrder { dis_first, enc_first, joint };

std::string to_string(Variant v);
std::string to_string(ScheduleOrder s);
Variant parse_variant(const std::string& s);
ScheduleOrder parse_schedule(const std::string& s);

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Everything that determines a run. Setting `variant` resets the loss
/// weights and the discriminator-phase switch to that variant's defaults, so
/// apply() handles it before any other key.
struct ExperimentConfig {
  Variant variant = Variant::idvae;
  ScheduleOrder schedule = ScheduleOrder::dis_first;
  bool dis_phase = true;
  LossWeights weights;
  AdamHyper optim;
  int batch_size = 64;
  int epochs = 20;
  std::uint64_t seed = 1;

  std::string dataset = "ring2d";
  std::string data_dir = "data/mnist";
  int train_limit = 0;  // 0 keeps the whole training split
  int ring_k = 8;
  double ring_radius = 2.0;
  double ring_sigma = 0.02;
  int ring_train = 20000;
  int ring_test = 2000;

  // Architecture; "auto" / 0 / empty pick the dataset defaults.
  std::string arch = "auto";
  int latent_dim = 0;
  std::vector<int> trunk;
  std::vector<int> decoder;

  int log_every = 100;
  int probe_samples = 2000;
  bool checkpoints = true;
  std::string out_dir = "runs/default";

  static ExperimentConfig for_variant(Variant v);

  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& pairs);
  /// Fills dataset-dependent defaults and checks invariants.
  void resolve();
  KeyValues to_pairs() const;
  std::string to_text() const;

  static KeyValues parse_text(const std::string& text);
  static ExperimentConfig from_pairs(const KeyValues& pairs);

  bool is_image() const { return dataset == "mnist"; }
  bool conditional() const { return variant == Variant::c_idvae; }
  MixtureSpec mixture() const { return MixtureSpec::ring(ring_k, ring_radius, ring_sigma); }
  NetSpec net_spec(const Shape& sample_shape, int classes) const;
};

std::vector<std::string> config_keys();

}  // namespace idvae
