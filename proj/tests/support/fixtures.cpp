#include "fixtures.hpp"

#include "idvae/data.hpp"
#include "oracles.hpp"

namespace idvae::testing {

std::string to_string(NetKind k) {
  switch (k) {
    case NetKind::mlp: return "mlp";
    case NetKind::conv: return "conv";
    case NetKind::mlp_cond: return "mlp_cond";
    case NetKind::conv_cond: return "conv_cond";
    case NetKind::no_sharing_mlp: return "no_sharing_mlp";
    case NetKind::no_sharing_conv: return "no_sharing_conv";
  }
  return "?";
}

NetSpec tiny_spec(NetKind kind) {
  const bool conv = kind == NetKind::conv || kind == NetKind::conv_cond || kind == NetKind::no_sharing_conv;
  NetSpec spec;
  if (conv) {
    spec = NetSpec::image(1, 8, 8);
    spec.trunk = {3, 4};
    spec.latent_dim = 3;
  } else {
    spec.trunk = {8, 8};
    spec.decoder = {8, 8};
  }
  if (kind == NetKind::mlp_cond || kind == NetKind::conv_cond) spec.cond_dim = 3;
  spec.no_sharing = kind == NetKind::no_sharing_mlp || kind == NetKind::no_sharing_conv;
  return spec;
}

Fixture make_fixture(NetKind kind, std::uint64_t seed, std::int64_t batch) {
  const NetSpec spec = tiny_spec(kind);
  CounterRng rng(seed);
  Fixture f;
  f.net = std::make_unique<Network>(spec, rng.next_u64());
  // Zero biases put some pre-activations exactly on the leaky_relu kink.
  for (const auto& p : f.net->params().all()) {
    if (!p.name.ends_with(".b")) continue;
    Tensor b = p.tensor;
    const auto v = uniform(static_cast<std::size_t>(b.numel()), -0.1, 0.1, rng);
    std::copy(v.begin(), v.end(), b.mutable_data().begin());
  }
  Shape xs{batch};
  xs.insert(xs.end(), spec.input_shape.begin(), spec.input_shape.end());
  const auto n = static_cast<std::size_t>(numel(xs));
  f.in.x = spec.arch == Arch::conv ? Tensor::constant(xs, uniform(n, 0.0, 1.0, rng))
                                   : Tensor::constant(xs, uniform(n, -2.0, 2.0, rng));
  if (spec.cond_dim > 0) {
    std::vector<int> labels;
    for (std::int64_t i = 0; i < batch; ++i) labels.push_back(static_cast<int>(rng.below(spec.cond_dim)));
    f.in.cond = one_hot(labels, spec.cond_dim);
  }
  const Shape zs{batch, spec.latent_dim};
  f.in.prior_z = Tensor::constant(zs, rng.normal(static_cast<std::size_t>(numel(zs))));
  f.in.noise = Tensor::constant(zs, rng.normal(static_cast<std::size_t>(numel(zs))));
  return f;
}

ExperimentConfig tiny_ring_config(Variant v, std::uint64_t seed) {
  ExperimentConfig c = ExperimentConfig::for_variant(v);
  c.dataset = "ring2d";
  c.seed = seed;
  c.batch_size = 16;
  c.trunk = {16, 16};
  c.decoder = {16, 16};
  c.ring_train = 256;
  c.ring_test = 64;
  c.epochs = 1;
  c.log_every = 4;
  c.probe_samples = 200;
  c.checkpoints = false;
  c.resolve();
  return c;
}

Batch ring_batch(std::size_t n, int cond_dim, std::uint64_t seed) {
  const Dataset d = sample_mixture(MixtureSpec::ring(), n, seed);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Batch b;
  b.x = d.gather(idx);
  b.labels = d.labels;
  if (cond_dim > 0) b.y = one_hot(b.labels, cond_dim);
  return b;
}

}  // namespace idvae::testing
