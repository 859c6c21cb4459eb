#pragma once

// Loss terms of the hybrid model.
//
//   L_enc = alpha * L_recons + beta * L_prior
//   L_dis = -[log D(x) + log(1 - D(Dec(z'))) + log(1 - D(Dec(Enc(x))))]
//   L_dec = omega * L_GAN + lambda * L_recons^dis (+ gamma * L_recons)
//
// Gradient routing of each term (who receives a nonzero gradient):
//
//   term          shared  enc  dis  dec
//   recons          x      x         x      (through Dec(Enc(x)))
//   prior           x      x
//   dis_loss        x           x           (fakes detached)
//   recons_dis                       x      (trunk frozen, Dis_l(x) constant)
//   gen_adv                          x      (discriminator frozen)
//
// In no-sharing mode "shared" is empty and the trunk rows move to the
// encoder-side (recons, prior) or discriminator-side (dis_loss) copy.

#include "idvae/nets.hpp"
#include "idvae/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace idvae {

struct LossWeights {
  real alpha = 1.0f;
  real beta = 1.0f;
  real omega = 1.0f;
  real lambda = 1e-2f;
  real gamma = 0.0f;

  void validate() const;
};

inline constexpr real kProbEpsilon = 1e-7f;

/// Mean squared error over batch and every data dimension.
Tensor recons_loss(const Tensor& x, const Tensor& x_tilde);
/// Batch mean of 0.5 * sum_d (mu^2 + exp(log_var) - log_var - 1).
Tensor prior_kl(const Tensor& mu, const Tensor& log_var);
/// Discriminator loss from probabilities; each term is a batch mean.
Tensor dis_loss(const Tensor& p_real, const Tensor& p_fake_prior, const Tensor& p_fake_recon);
/// -log D(Dec(z')) - log D(Dec(Enc(x))), each a batch mean.
Tensor gen_adv_loss(const Tensor& p_fake_prior, const Tensor& p_fake_recon);
/// Squared error between discriminator features of x and of its reconstruction.
Tensor recons_dis_loss(const Tensor& features_real, const Tensor& features_recon);

// Network-level forms. The fakes passed to dis_loss are detached; gen_adv_loss
// and recons_dis_loss evaluate the discriminator with its weights frozen.
Tensor dis_loss(const Network& net, const Tensor& x, const Tensor& x_prior_fake, const Tensor& x_recon_fake,
                const Condition& cond, GroupMask frozen = 0);
Tensor gen_adv_loss(const Network& net, const Tensor& x_prior_fake, const Tensor& x_recon_fake, const Condition& cond);
Tensor recons_dis_loss(const Network& net, const Tensor& x, const Tensor& x_tilde, const Condition& cond);

struct LossComponents {
  real recons = 0;
  real prior = 0;
  real recons_dis = 0;
  real gan = 0;
  real dis_real = 0;
  real dis_fake_prior = 0;
  real dis_fake_recon = 0;

  static std::vector<std::string> names();
  std::vector<real> values() const;
};

struct LossBundle {
  Tensor l_enc = Tensor::scalar(0.0f);
  Tensor l_dis = Tensor::scalar(0.0f);
  Tensor l_dec = Tensor::scalar(0.0f);
  LossComponents components;
};

enum LossTerm : unsigned {
  kEncTerm = 1u << 0,
  kDisTerm = 1u << 1,
  kDecTerm = 1u << 2,
};
inline constexpr unsigned kAllTerms = kEncTerm | kDisTerm | kDecTerm;

struct LossInputs {
  Tensor x;
  Condition cond;
  Tensor prior_z;  // z' ~ N(0, I), [B, d_z]
  Tensor noise;    // reparameterization noise, [B, d_z]
};

/// Builds the requested losses from one encode of x, one decode of the
/// posterior sample and one decode of the prior sample. Parameters in
/// `frozen` act as constants throughout; terms not requested stay zero.
LossBundle assemble(const Network& net, const LossWeights& weights, const LossInputs& in,
                    unsigned terms = kAllTerms, GroupMask frozen = 0);

}  // namespace idvae
