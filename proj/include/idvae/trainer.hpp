#pragma once

// Three-phase training schedule over the partitioned parameters:
//
//   1. (theta_dis, theta_shared) <- -grad L_dis
//   2. (theta_enc, theta_shared) <- -grad L_enc
//   3. theta_dec                 <- -grad L_dec
//
// Each phase runs its own forward pass on the current parameters, so later
// phases see the updates of earlier ones. The mini-batch, prior sample and
// reparameterization noise are drawn once per step and shared by all phases.
// enc_first swaps phases 1 and 2; joint merges them into one update on
// L_enc + L_dis. The vae variant has no discriminator phase and its decoder
// phase minimizes L_enc (= L_VAE).

#include "idvae/config.hpp"
#include "idvae/data.hpp"
#include "idvae/losses.hpp"
#include "idvae/nets.hpp"
#include "idvae/optim.hpp"
#include "idvae/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace idvae {

/// Loss became NaN/inf during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Phase { dis, enc, joint, dec };
std::string to_string(Phase p);

struct TrainState {
  std::unique_ptr<Network> net;
  std::map<std::string, Adam> optimizers;  // one per phase kind
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  /// Fresh state: network initialised from the seed, empty moments.
  static TrainState create(const ExperimentConfig& config, const Shape& sample_shape, int classes);
};

using PhaseObserver = std::function<void(Phase, const TrainState&)>;

/// Per-step randomness derived from (seed, step): prior sample and noise.
LossInputs step_inputs(const Batch& batch, const Network& net, std::uint64_t seed, std::uint64_t step);

/// Runs the schedule once and advances state.step. The returned bundle holds
/// each loss as evaluated in its own phase.
LossBundle train_step(const Batch& batch, const ExperimentConfig& config, TrainState& state,
                      const PhaseObserver& observer = {});

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Text manifest followed by raw little-endian float32 arrays.
struct Checkpoint {
  KeyValues config;
  std::uint64_t step = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  std::map<std::string, std::uint64_t> optimizer_steps;
  std::vector<StoredTensor> tensors;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  const StoredTensor* find(const std::string& name) const;
};

/// Resolved config stored in a checkpoint's manifest.
ExperimentConfig checkpoint_config(const Checkpoint& ckpt);

Checkpoint make_checkpoint(const ExperimentConfig& config, const TrainState& state);
/// Rebuilds network and optimizer state; throws DataError on mismatch.
TrainState restore_state(const Checkpoint& ckpt, const ExperimentConfig& config, const Shape& sample_shape,
                         int classes);
/// Network only, for sampling and evaluation.
std::unique_ptr<Network> load_network(const Checkpoint& ckpt, const Shape& sample_shape, int classes);

struct DataSplits {
  Dataset train;
  Dataset test;
};
DataSplits load_data(const ExperimentConfig& config);

/// Sample shape and class count of the configured dataset, without loading it.
std::pair<Shape, int> data_geometry(const ExperimentConfig& config);

struct Probe {
  double recons = 0;
  double modes = 0;
  double quality = 0;
};

/// Held-out reconstruction MSE using the posterior mean.
double heldout_recons(const Network& net, const Dataset& test, std::size_t limit = 1000);

/// Decodes n prior samples; conditional models cycle through the labels
/// unless `label` is given.
Tensor generate(const Network& net, std::size_t n, std::uint64_t seed, std::optional<int> label = std::nullopt);

/// Posterior-mean reconstructions of x.
Tensor reconstruct(const Network& net, const Tensor& x, const Condition& cond);

struct TrainResult {
  std::vector<std::filesystem::path> artifacts;
  Checkpoint final_checkpoint;
  Probe final_probe;
};

/// Runs epochs * ceil(N / batch) steps, logging every `log_every` steps to
/// metrics.csv and checkpointing after every epoch. When `resume` is given,
/// training continues from its step and appends to the existing log.
class Trainer {
 public:
  explicit Trainer(ExperimentConfig config);
  Trainer(ExperimentConfig config, const Checkpoint& resume);

  const ExperimentConfig& config() const { return config_; }
  TrainState& state() { return state_; }
  const DataSplits& data() const { return data_; }
  std::size_t steps_per_epoch() const { return loader_.batches_per_epoch(); }
  std::uint64_t total_steps() const;

  /// Executes one scheduled step; returns its losses.
  LossBundle step();
  Probe probe() const;
  TrainResult run(std::ostream* log = nullptr);

  static std::vector<std::string> metric_columns();

 private:
  void prepare_epoch(std::uint64_t epoch);

  ExperimentConfig config_;
  DataSplits data_;
  BatchLoader loader_;
  TrainState state_;
  std::uint64_t loader_epoch_ = UINT64_MAX;
};

}  // namespace idvae
