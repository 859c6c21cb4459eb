#pragma once

// Small networks and inputs shared by the unit tests and property checks.

#include "idvae/config.hpp"
#include "idvae/losses.hpp"
#include "idvae/nets.hpp"
#include "idvae/trainer.hpp"

#include <memory>
#include <string>

namespace idvae::testing {

enum class NetKind { mlp, conv, mlp_cond, conv_cond, no_sharing_mlp, no_sharing_conv };
inline constexpr int kNetKinds = 6;

std::string to_string(NetKind k);
NetSpec tiny_spec(NetKind kind);

struct Fixture {
  std::unique_ptr<Network> net;
  LossInputs in;
};

/// Random network of the given kind plus a batch, prior sample and noise.
Fixture make_fixture(NetKind kind, std::uint64_t seed, std::int64_t batch = 4);

/// Config for a fast ring run of the given variant.
ExperimentConfig tiny_ring_config(Variant v, std::uint64_t seed);

/// Random ring batch, one-hot labels when cond_dim > 0.
Batch ring_batch(std::size_t n, int cond_dim, std::uint64_t seed);

}  // namespace idvae::testing
