#include "idvae/nets.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace idvae {

std::string group_name(Group g) {
  switch (g) {
    case kShared: return "shared";
    case kEnc: return "enc";
    case kDis: return "dis";
    case kDec: return "dec";
  }
  return "?";
}

NetSpec NetSpec::ring2d() { return NetSpec{}; }

NetSpec NetSpec::image(std::int64_t channels, std::int64_t height, std::int64_t width) {
  NetSpec spec;
  spec.input_shape = {channels, height, width};
  spec.latent_dim = 64;
  spec.arch = Arch::conv;
  spec.trunk = {32, 64, 128};
  spec.decoder = {};
  spec.sigmoid_output = true;
  return spec;
}

std::int64_t NetSpec::input_size() const { return numel(input_shape); }

void NetSpec::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("NetSpec: latent dim must be >= 1");
  if (trunk.empty()) throw std::invalid_argument("NetSpec: trunk needs at least one layer");
  if (cond_dim < 0) throw std::invalid_argument("NetSpec: negative cond dim");
  if (input_shape.empty() || input_size() <= 0) throw std::invalid_argument("NetSpec: empty input shape");
  if (arch == Arch::conv && input_shape.size() != 3) {
    throw std::invalid_argument("NetSpec: conv trunk needs a [C,H,W] input shape, got " + to_string(input_shape));
  }
  for (int w : trunk)
    if (w < 1) throw std::invalid_argument("NetSpec: trunk widths must be positive");
  for (int w : decoder)
    if (w < 1) throw std::invalid_argument("NetSpec: decoder widths must be positive");
}

const std::vector<NamedTensor>& ParamPartition::group(Group g) const {
  switch (g) {
    case kShared: return shared;
    case kEnc: return enc;
    case kDis: return dis;
    case kDec: return dec;
  }
  throw std::invalid_argument("unknown parameter group");
}

std::vector<NamedTensor> ParamPartition::select(GroupMask mask) const {
  std::vector<NamedTensor> out;
  for (Group g : {kShared, kEnc, kDis, kDec}) {
    if (mask & g) {
      const auto& part = group(g);
      out.insert(out.end(), part.begin(), part.end());
    }
  }
  return out;
}

std::vector<Tensor> ParamPartition::tensors(GroupMask mask) const {
  std::vector<Tensor> out;
  for (const auto& p : select(mask)) out.push_back(p.tensor);
  return out;
}

void ParamPartition::validate() const {
  std::set<const void*> identities;
  std::set<std::string> names;
  for (const auto& p : all()) {
    if (!identities.insert(p.tensor.identity()).second) {
      throw std::logic_error("parameter " + p.name + " appears in more than one set");
    }
    if (!names.insert(p.name).second) throw std::logic_error("duplicate parameter name " + p.name);
    if (!p.tensor.requires_grad()) throw std::logic_error("parameter " + p.name + " is not trainable");
  }
}

Tensor one_hot(std::span<const int> labels, int classes) {
  std::vector<real> values(labels.size() * static_cast<std::size_t>(classes), 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw std::out_of_range("label " + std::to_string(labels[i]) + " outside [0," + std::to_string(classes) + ")");
    }
    values[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return Tensor::constant({static_cast<std::int64_t>(labels.size()), classes}, std::move(values));
}

Network::Network(NetSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  spec_.validate();
  build();
  partition_.validate();
}

Network::Layer Network::make_layer(Layer::Kind kind, const std::string& name, Shape weight_shape,
                                   std::int64_t fan_in, std::int64_t bias_size, Group group, CounterRng& rng,
                                   int stride, int padding) {
  // He-uniform bound for leaky_relu; biases start at zero.
  const double gain = 2.0 / (1.0 + static_cast<double>(spec_.slope) * spec_.slope);
  const double bound = std::sqrt(3.0 * gain / static_cast<double>(fan_in));
  std::vector<real> w(static_cast<std::size_t>(numel(weight_shape)));
  for (auto& v : w) v = static_cast<real>(rng.uniform(-bound, bound));
  Shape bias_shape = kind == Layer::Kind::dense ? Shape{1, bias_size} : Shape{bias_size};
  Layer layer;
  layer.kind = kind;
  layer.weight_name = name;
  layer.weight = Tensor::parameter(std::move(weight_shape), std::move(w));
  layer.bias = Tensor::parameter(std::move(bias_shape), std::vector<real>(static_cast<std::size_t>(bias_size), 0.0f));
  layer.group = group;
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

std::vector<Network::Layer> Network::build_trunk(const std::string& prefix, Group group, CounterRng& rng) {
  std::vector<Layer> trunk;
  const auto depth = spec_.trunk.size();
  if (spec_.arch == Arch::mlp) {
    std::int64_t in = spec_.input_size();
    for (std::size_t i = 0; i < depth; ++i) {
      const std::int64_t out = spec_.trunk[i];
      trunk.push_back(make_layer(Layer::Kind::dense, prefix + std::to_string(i), {in, out}, in, out, group, rng));
      in = out + (i == 0 ? spec_.cond_dim : 0);
    }
    feature_width_ = in;
    return trunk;
  }
  std::int64_t in_c = spec_.input_shape[0];
  spatial_ = {spec_.input_shape[1]};
  std::int64_t width = spec_.input_shape[2];
  for (std::size_t i = 0; i < depth; ++i) {
    const std::int64_t size = spatial_.back();
    const int kernel = size % 2 == 0 ? 4 : 3;
    const std::int64_t out_c = spec_.trunk[i];
    trunk.push_back(make_layer(Layer::Kind::conv, prefix + std::to_string(i), {out_c, in_c, kernel, kernel},
                               in_c * kernel * kernel, out_c, group, rng, 2, 1));
    spatial_.push_back((size + 2 - kernel) / 2 + 1);
    width = (width + 2 - (width % 2 == 0 ? 4 : 3)) / 2 + 1;
    in_c = out_c + (i == 0 ? spec_.cond_dim : 0);
  }
  if (width != spatial_.back()) throw std::invalid_argument("NetSpec: conv trunk needs square images");
  feature_width_ = in_c * spatial_.back() * spatial_.back();
  return trunk;
}

void Network::build() {
  CounterRng rng(seed_);
  const Group trunk_group = spec_.no_sharing ? kEnc : kShared;
  enc_trunk_ = build_trunk(spec_.no_sharing ? "enc.trunk." : "shared.trunk.", trunk_group, rng);
  if (spec_.no_sharing) {
    // Same architecture and initial values, separate storage.
    for (const auto& layer : enc_trunk_) {
      Layer copy = layer;
      copy.weight_name = "dis.trunk." + layer.weight_name.substr(std::string("enc.trunk.").size());
      copy.weight = Tensor::parameter(layer.weight.shape(), {layer.weight.data().begin(), layer.weight.data().end()});
      copy.bias = Tensor::parameter(layer.bias.shape(), {layer.bias.data().begin(), layer.bias.data().end()});
      copy.group = kDis;
      dis_trunk_.push_back(std::move(copy));
    }
  }

  const std::int64_t f = feature_width_;
  const std::int64_t dz = spec_.latent_dim;
  mu_head_ = make_layer(Layer::Kind::dense, "enc.mu", {f, dz}, f, dz, kEnc, rng);
  log_var_head_ = make_layer(Layer::Kind::dense, "enc.log_var", {f, dz}, f, dz, kEnc, rng);
  dis_head_ = make_layer(Layer::Kind::dense, "dis.head", {f, 1}, f, 1, kDis, rng);

  const std::int64_t dec_in = dz + spec_.cond_dim;
  if (spec_.arch == Arch::mlp) {
    std::int64_t in = dec_in;
    for (std::size_t i = 0; i < spec_.decoder.size(); ++i) {
      const std::int64_t out = spec_.decoder[i];
      decoder_.push_back(make_layer(Layer::Kind::dense, "dec." + std::to_string(i), {in, out}, in, out, kDec, rng));
      in = out;
    }
    const std::int64_t out = spec_.input_size();
    decoder_.push_back(
        make_layer(Layer::Kind::dense, "dec." + std::to_string(decoder_.size()), {in, out}, in, out, kDec, rng));
  } else {
    const auto depth = spec_.trunk.size();
    const std::int64_t last_c = spec_.trunk.back();
    const std::int64_t side = spatial_.back();
    decoder_.push_back(make_layer(Layer::Kind::dense, "dec.0", {dec_in, last_c * side * side}, dec_in,
                                  last_c * side * side, kDec, rng));
    for (std::size_t i = depth; i-- > 0;) {
      const std::int64_t in_c = spec_.trunk[i];
      const std::int64_t out_c = i > 0 ? spec_.trunk[i - 1] : spec_.input_shape[0];
      const std::int64_t kernel = spatial_[i] - (spatial_[i + 1] - 1) * 2 + 2;
      decoder_.push_back(make_layer(Layer::Kind::conv_transpose, "dec." + std::to_string(decoder_.size()),
                                    {in_c, out_c, kernel, kernel}, out_c * kernel * kernel, out_c, kDec, rng, 2, 1));
    }
  }

  for (const auto& l : enc_trunk_) register_layer(l);
  for (const auto& l : dis_trunk_) register_layer(l);
  register_layer(mu_head_);
  register_layer(log_var_head_);
  register_layer(dis_head_);
  for (const auto& l : decoder_) register_layer(l);
}

void Network::register_layer(const Layer& layer) {
  auto& part = [&]() -> std::vector<NamedTensor>& {
    switch (layer.group) {
      case kShared: return partition_.shared;
      case kEnc: return partition_.enc;
      case kDis: return partition_.dis;
      case kDec: return partition_.dec;
    }
    throw std::logic_error("bad group");
  }();
  part.push_back({layer.weight_name + ".w", layer.weight});
  part.push_back({layer.weight_name + ".b", layer.bias});
}

std::int64_t Network::channels_after_first_layer() const {
  return spec_.trunk.front() + spec_.cond_dim;
}

void Network::check_condition(const Condition& cond, std::int64_t batch, const std::string& op) const {
  if (spec_.cond_dim == 0) {
    if (cond) throw std::invalid_argument(op + ": condition supplied to an unconditional network");
    return;
  }
  if (!cond) throw std::invalid_argument(op + ": conditional network requires a condition");
  if (cond->rank() != 2 || cond->dim(0) != batch || cond->dim(1) != spec_.cond_dim) {
    throw ShapeError(op, cond->shape(), Shape{batch, spec_.cond_dim});
  }
}

void Network::check_input(const Tensor& x, const Condition& cond, const std::string& op) const {
  Shape expected{x.rank() > 0 ? x.dim(0) : 0};
  expected.insert(expected.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  if (x.shape() != expected) throw ShapeError(op, x.shape(), expected);
  check_condition(cond, x.dim(0), op);
}

Tensor Network::apply(const Layer& layer, const Tensor& h, GroupMask frozen) const {
  const bool freeze = (frozen & layer.group) != 0;
  const Tensor w = freeze ? layer.weight.detach() : layer.weight;
  const Tensor b = freeze ? layer.bias.detach() : layer.bias;
  switch (layer.kind) {
    case Layer::Kind::dense: return add(matmul(h, w), b);
    case Layer::Kind::conv: return conv2d(h, w, b, layer.stride, layer.padding);
    case Layer::Kind::conv_transpose: return conv2d_transpose(h, w, b, layer.stride, layer.padding);
  }
  throw std::logic_error("bad layer kind");
}

const std::vector<Network::Layer>& Network::trunk_for(TrunkSide side) const {
  return side == TrunkSide::discriminator && spec_.no_sharing ? dis_trunk_ : enc_trunk_;
}

Tensor Network::run_trunk(const std::vector<Layer>& trunk, const Tensor& x, const Condition& cond,
                          GroupMask frozen) const {
  const std::int64_t batch = x.dim(0);
  Tensor h = spec_.arch == Arch::mlp ? reshape(x, {batch, spec_.input_size()}) : x;
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    h = leaky_relu(apply(trunk[i], h, frozen), spec_.slope);
    if (i == 0 && cond) {
      if (spec_.arch == Arch::mlp) {
        h = concat({h, *cond}, 1);
      } else {
        const Shape maps{batch, spec_.cond_dim, h.dim(2), h.dim(3)};
        h = concat({h, broadcast(reshape(*cond, {batch, spec_.cond_dim, 1, 1}), maps)}, 1);
      }
    }
  }
  return spec_.arch == Arch::mlp ? h : reshape(h, {batch, feature_width_});
}

Tensor Network::trunk_features(const Tensor& x, const Condition& cond, TrunkSide side, GroupMask frozen) const {
  check_input(x, cond, "trunk_features");
  return run_trunk(trunk_for(side), x, cond, frozen);
}

Tensor Network::trunk_features(const Tensor& x, const Condition& cond, int layer, GroupMask frozen,
                               TrunkSide side) const {
  if (layer != penultimate_layer()) {
    throw std::out_of_range("trunk_features: layer " + std::to_string(layer) + " is not the shared layer " +
                            std::to_string(penultimate_layer()));
  }
  return trunk_features(x, cond, side, frozen);
}

LatentCode Network::latent_from_features(const Tensor& features, const Tensor& noise, GroupMask frozen) const {
  LatentCode code;
  code.mu = apply(mu_head_, features, frozen);
  code.log_var = apply(log_var_head_, features, frozen);
  if (noise.shape() != code.mu.shape()) throw ShapeError("encode", noise.shape(), code.mu.shape());
  code.sample = add(code.mu, mul(exp(scale(code.log_var, 0.5f)), noise));
  return code;
}

Tensor Network::prob_from_features(const Tensor& features, GroupMask frozen) const {
  return sigmoid(apply(dis_head_, features, frozen));
}

LatentCode Network::encode(const Tensor& x, const Condition& cond, const Tensor& noise, GroupMask frozen) const {
  check_input(x, cond, "encode");
  return latent_from_features(run_trunk(enc_trunk_, x, cond, frozen), noise, frozen);
}

LatentCode Network::encode(const Tensor& x, const Condition& cond, CounterRng& rng, GroupMask frozen) const {
  const std::int64_t batch = x.rank() > 0 ? x.dim(0) : 0;
  const Shape noise_shape{batch, spec_.latent_dim};
  return encode(x, cond, Tensor::constant(noise_shape, rng.normal(static_cast<std::size_t>(numel(noise_shape)))),
                frozen);
}

Tensor Network::decode(const Tensor& z, const Condition& cond, GroupMask frozen) const {
  if (z.rank() != 2 || z.dim(1) != spec_.latent_dim) throw ShapeError("decode", z.shape(), Shape{-1, spec_.latent_dim});
  const std::int64_t batch = z.dim(0);
  check_condition(cond, batch, "decode");
  Tensor h = cond ? concat({z, *cond}, 1) : z;
  Shape out_shape{batch};
  out_shape.insert(out_shape.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  const auto last = decoder_.size() - 1;
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    h = apply(decoder_[i], h, frozen);
    if (i < last) {
      h = leaky_relu(h, spec_.slope);
      if (i == 0 && spec_.arch == Arch::conv) {
        const std::int64_t side = spatial_.back();
        h = reshape(h, {batch, spec_.trunk.back(), side, side});
      }
    }
  }
  if (spec_.sigmoid_output) h = sigmoid(h);
  return reshape(h, out_shape);
}

Tensor Network::discriminate(const Tensor& x, const Condition& cond, GroupMask frozen) const {
  check_input(x, cond, "discriminate");
  return prob_from_features(run_trunk(trunk_for(TrunkSide::discriminator), x, cond, frozen), frozen);
}

}  // namespace idvae
