#include "idvae/optim.hpp"

#include <cmath>

namespace idvae {

void optimizer_update(std::span<real> param, std::span<const real> grad, Moments& moments, std::uint64_t t,
                      const AdamHyper& hyper) {
  const auto n = param.size();
  if (moments.m.size() != n) moments.m.assign(n, 0.0f);
  if (moments.v.size() != n) moments.v.assign(n, 0.0f);
  const real b1 = hyper.beta1;
  const real b2 = hyper.beta2;
  const auto step = static_cast<double>(t);
  const real c1 = static_cast<real>(1.0 - std::pow(static_cast<double>(b1), step));
  const real c2 = static_cast<real>(1.0 - std::pow(static_cast<double>(b2), step));
  for (std::size_t i = 0; i < n; ++i) {
    const real g = grad.empty() ? 0.0f : grad[i];
    moments.m[i] = b1 * moments.m[i] + (1.0f - b1) * g;
    moments.v[i] = b2 * moments.v[i] + (1.0f - b2) * g * g;
    const real m_hat = moments.m[i] / c1;
    const real v_hat = moments.v[i] / c2;
    param[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

Adam::Adam(std::vector<NamedTensor> params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
  for (const auto& p : params_) {
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    moments_[p.name] = Moments{std::vector<real>(n, 0.0f), std::vector<real>(n, 0.0f)};
  }
}

void Adam::step() {
  ++t_;
  for (auto& p : params_) {
    const std::span<const real> grad = p.tensor.has_grad() ? p.tensor.grad() : std::span<const real>{};
    optimizer_update(p.tensor.mutable_data(), grad, moments_[p.name], t_, hyper_);
  }
}

}  // namespace idvae
