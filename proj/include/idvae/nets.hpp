#pragma once

// Shared-trunk encoder/discriminator and decoder/generator.
//
// The encoder and the discriminator run the same trunk up to the penultimate
// layer l. From there two fully connected heads produce the posterior mean
// and log-variance (theta_enc) and one fully connected layer feeds a single
// sigmoid unit (theta_dis). The decoder is theta_dec. In no-sharing mode the
// trunk is duplicated: the encoder-side copy belongs to theta_enc and the
// discriminator-side copy to theta_dis, leaving theta_shared empty.
//
// Conditioning: the decoder receives the label vector concatenated to z; the
// trunk receives it after its first layer (channel-wise broadcast maps for
// convolutional trunks, plain concatenation for dense trunks).

#include "idvae/rng.hpp"
#include "idvae/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace idvae {

enum class Arch { mlp, conv };

enum Group : unsigned {
  kShared = 1u << 0,
  kEnc = 1u << 1,
  kDis = 1u << 2,
  kDec = 1u << 3,
};
using GroupMask = unsigned;
inline constexpr GroupMask kAllGroups = kShared | kEnc | kDis | kDec;

std::string group_name(Group g);

struct NetSpec {
  Shape input_shape{2};
  int latent_dim = 2;
  Arch arch = Arch::mlp;
  /// Hidden widths (mlp) or channel counts of the stride-2 convolutions (conv).
  std::vector<int> trunk{128, 128};
  /// Hidden widths of a dense decoder; a conv decoder mirrors the trunk.
  std::vector<int> decoder{128, 128};
  int cond_dim = 0;
  bool no_sharing = false;
  real slope = 0.2f;
  bool sigmoid_output = false;

  static NetSpec ring2d();
  /// Convolutional trunk 32/64/128 with mirrored transpose-conv decoder.
  static NetSpec image(std::int64_t channels, std::int64_t height, std::int64_t width);

  std::int64_t input_size() const;
  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// The four disjoint parameter sets theta_shared, theta_enc, theta_dis, theta_dec.
struct ParamPartition {
  std::vector<NamedTensor> shared;
  std::vector<NamedTensor> enc;
  std::vector<NamedTensor> dis;
  std::vector<NamedTensor> dec;

  const std::vector<NamedTensor>& group(Group g) const;
  std::vector<NamedTensor> select(GroupMask mask) const;
  std::vector<NamedTensor> all() const { return select(kAllGroups); }
  std::vector<Tensor> tensors(GroupMask mask) const;
  /// Throws std::logic_error if any tensor appears twice or names collide.
  void validate() const;
};

struct LatentCode {
  Tensor mu;
  Tensor log_var;
  Tensor sample;
};

using Condition = std::optional<Tensor>;

enum class TrunkSide { encoder, discriminator };

class Network {
 public:
  Network(NetSpec spec, std::uint64_t seed);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const NetSpec& spec() const { return spec_; }
  const ParamPartition& params() const { return partition_; }

  /// Parameters belonging to groups in `frozen` enter the graph as constants,
  /// so no gradient reaches them from the result.
  LatentCode encode(const Tensor& x, const Condition& cond, const Tensor& noise, GroupMask frozen = 0) const;
  LatentCode encode(const Tensor& x, const Condition& cond, CounterRng& rng, GroupMask frozen = 0) const;
  Tensor decode(const Tensor& z, const Condition& cond, GroupMask frozen = 0) const;
  Tensor discriminate(const Tensor& x, const Condition& cond, GroupMask frozen = 0) const;

  /// Enc_l(x) / Dis_l(x), flattened to [B, feature_width()].
  Tensor trunk_features(const Tensor& x, const Condition& cond, int layer, GroupMask frozen = 0,
                        TrunkSide side = TrunkSide::discriminator) const;
  Tensor trunk_features(const Tensor& x, const Condition& cond, TrunkSide side, GroupMask frozen = 0) const;

  // Head stages, applied to trunk features.
  LatentCode latent_from_features(const Tensor& features, const Tensor& noise, GroupMask frozen = 0) const;
  Tensor prob_from_features(const Tensor& features, GroupMask frozen = 0) const;

  int penultimate_layer() const { return static_cast<int>(spec_.trunk.size()); }
  std::int64_t feature_width() const { return feature_width_; }
  /// Channel count entering the second trunk layer (base + cond_dim).
  std::int64_t channels_after_first_layer() const;

 private:
  struct Layer {
    enum class Kind { dense, conv, conv_transpose } kind;
    std::string weight_name;
    Tensor weight;
    Tensor bias;
    Group group;
    int stride = 1;
    int padding = 0;
  };

  void build();
  Layer make_layer(Layer::Kind kind, const std::string& name, Shape weight_shape, std::int64_t fan_in,
                   std::int64_t bias_size, Group group, CounterRng& rng, int stride = 1, int padding = 0);
  std::vector<Layer> build_trunk(const std::string& prefix, Group group, CounterRng& rng);
  void register_layer(const Layer& layer);
  void check_input(const Tensor& x, const Condition& cond, const std::string& op) const;
  void check_condition(const Condition& cond, std::int64_t batch, const std::string& op) const;
  Tensor apply(const Layer& layer, const Tensor& h, GroupMask frozen) const;
  Tensor run_trunk(const std::vector<Layer>& trunk, const Tensor& x, const Condition& cond, GroupMask frozen) const;
  const std::vector<Layer>& trunk_for(TrunkSide side) const;

  NetSpec spec_;
  std::uint64_t seed_;
  std::vector<Layer> enc_trunk_;
  std::vector<Layer> dis_trunk_;  // empty when sharing: the encoder trunk serves both
  Layer mu_head_;
  Layer log_var_head_;
  Layer dis_head_;
  std::vector<Layer> decoder_;
  std::vector<std::int64_t> spatial_;  // trunk spatial extents, conv only
  std::int64_t feature_width_ = 0;
  ParamPartition partition_;
};

/// One-hot rows for integer labels in [0, classes).
Tensor one_hot(std::span<const int> labels, int classes);

}  // namespace idvae
