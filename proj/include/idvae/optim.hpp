#pragma once

#include "idvae/nets.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace idvae {

struct AdamHyper {
  real lr = 2e-4f;
  real beta1 = 0.5f;
  real beta2 = 0.999f;
  real eps = 1e-8f;
};

struct Moments {
  std::vector<real> m;
  std::vector<real> v;
};

/// One adaptive-moment update of `param` in place; `t` is the 1-based step.
void optimizer_update(std::span<real> param, std::span<const real> grad, Moments& moments, std::uint64_t t,
                      const AdamHyper& hyper);

/// Adaptive-moment optimizer with bias correction over a fixed parameter
/// list. Moments are keyed by parameter name and created zeroed.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamHyper hyper);

  /// Applies the stored gradients; parameters without a gradient buffer see 0.
  void step();
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  const AdamHyper& hyper() const { return hyper_; }

 private:
  std::vector<NamedTensor> params_;
  AdamHyper hyper_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace idvae
