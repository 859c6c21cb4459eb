#pragma once

#include "idvae/rng.hpp"
#include "idvae/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace idvae {

/// Malformed or unreadable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MixtureSpec {
  int k = 8;
  std::vector<std::array<double, 2>> centers;
  double sigma = 0.02;
  double radius = 2.0;

  /// k centers equally spaced on a circle, the first at angle 0.
  static MixtureSpec ring(int k = 8, double radius = 2.0, double sigma = 0.02);
  void validate() const;
};

/// Labelled samples of a fixed shape; values are row-major per sample.
struct Dataset {
  Shape sample_shape;
  std::vector<real> values;
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  std::int64_t sample_size() const { return numel(sample_shape); }
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  Tensor all() const;
};

struct Batch {
  Tensor x;
  std::optional<Tensor> y;  // one-hot, present for conditional models
  std::vector<int> labels;
};

/// n points, each a uniformly chosen center plus N(0, sigma^2 I) noise; the
/// label is the mode index.
Dataset sample_mixture(const MixtureSpec& spec, std::size_t n, std::uint64_t seed);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801),
/// plain or gzip-compressed. Images become [n,1,H,W] floats byte/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

real byte_to_unit(std::uint8_t v);
std::uint8_t unit_to_byte(real v);

/// [n, d_z] i.i.d. standard normal entries.
Tensor sample_prior(std::size_t n, int latent_dim, std::uint64_t seed);
Tensor sample_prior(std::size_t n, int latent_dim, CounterRng& rng);

/// Shuffled mini-batches; each epoch visits every example exactly once, the
/// final batch of an epoch may be short.
class BatchLoader {
 public:
  BatchLoader(const Dataset& data, std::size_t batch_size, int cond_dim);

  std::size_t batches_per_epoch() const;
  /// Batch `index` of the epoch whose order is drawn from `rng` by begin_epoch.
  void begin_epoch(CounterRng& rng);
  Batch batch(std::size_t index) const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  int cond_dim_;
  std::vector<std::size_t> order_;
};

}  // namespace idvae
