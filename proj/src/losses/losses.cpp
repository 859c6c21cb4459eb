#include "idvae/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace idvae {

void LossWeights::validate() const {
  for (real w : {alpha, beta, omega, lambda, gamma}) {
    if (!(w >= 0.0f) || !std::isfinite(w)) throw std::invalid_argument("loss weights must be finite and >= 0");
  }
}

Tensor recons_loss(const Tensor& x, const Tensor& x_tilde) {
  if (x.shape() != x_tilde.shape()) throw ShapeError("recons_loss", x.shape(), x_tilde.shape());
  return mean(square(sub(x, x_tilde)));
}

Tensor prior_kl(const Tensor& mu, const Tensor& log_var) {
  if (mu.shape() != log_var.shape() || mu.rank() != 2) throw ShapeError("prior_kl", mu.shape(), log_var.shape());
  for (real v : mu.data())
    if (!std::isfinite(v)) throw std::domain_error("prior_kl: non-finite mean");
  for (real v : log_var.data())
    if (!std::isfinite(v)) throw std::domain_error("prior_kl: non-finite log-variance");
  const auto batch = static_cast<real>(mu.dim(0));
  Tensor per_dim = add_scalar(sub(add(square(mu), exp(log_var)), log_var), -1.0f);
  return scale(sum(per_dim), 0.5f / batch);
}

namespace {

Tensor safe_prob(const Tensor& p) { return clamp(p, kProbEpsilon, 1.0f - kProbEpsilon); }

Tensor log_prob(const Tensor& p) { return mean(log(safe_prob(p))); }

Tensor log_one_minus(const Tensor& p) { return mean(log(add_scalar(neg(safe_prob(p)), 1.0f))); }

void check_prob(const std::string& op, const Tensor& p) {
  // NaN passes through so the trainer reports it as a non-finite loss.
  for (real v : p.data()) {
    if (v < 0.0f || v > 1.0f) {
      throw std::domain_error(op + ": discriminator output " + std::to_string(v) + " outside [0,1]");
    }
  }
}

}  // namespace

Tensor dis_loss(const Tensor& p_real, const Tensor& p_fake_prior, const Tensor& p_fake_recon) {
  if (p_real.numel() != p_fake_prior.numel() || p_real.numel() != p_fake_recon.numel()) {
    throw ShapeError("dis_loss", p_real.shape(), p_fake_prior.shape());
  }
  check_prob("dis_loss", p_real);
  check_prob("dis_loss", p_fake_prior);
  check_prob("dis_loss", p_fake_recon);
  return neg(add(add(log_prob(p_real), log_one_minus(p_fake_prior)), log_one_minus(p_fake_recon)));
}

Tensor gen_adv_loss(const Tensor& p_fake_prior, const Tensor& p_fake_recon) {
  if (p_fake_prior.numel() != p_fake_recon.numel()) {
    throw ShapeError("gen_adv_loss", p_fake_prior.shape(), p_fake_recon.shape());
  }
  check_prob("gen_adv_loss", p_fake_prior);
  check_prob("gen_adv_loss", p_fake_recon);
  return neg(add(log_prob(p_fake_prior), log_prob(p_fake_recon)));
}

Tensor recons_dis_loss(const Tensor& features_real, const Tensor& features_recon) {
  if (features_real.shape() != features_recon.shape()) {
    throw ShapeError("recons_dis_loss", features_real.shape(), features_recon.shape());
  }
  return recons_loss(features_real, features_recon);
}

Tensor dis_loss(const Network& net, const Tensor& x, const Tensor& x_prior_fake, const Tensor& x_recon_fake,
                const Condition& cond, GroupMask frozen) {
  return dis_loss(net.discriminate(x, cond, frozen), net.discriminate(x_prior_fake.detach(), cond, frozen),
                  net.discriminate(x_recon_fake.detach(), cond, frozen));
}

Tensor gen_adv_loss(const Network& net, const Tensor& x_prior_fake, const Tensor& x_recon_fake,
                    const Condition& cond) {
  const GroupMask frozen = kShared | kEnc | kDis;
  return gen_adv_loss(net.discriminate(x_prior_fake, cond, frozen), net.discriminate(x_recon_fake, cond, frozen));
}

Tensor recons_dis_loss(const Network& net, const Tensor& x, const Tensor& x_tilde, const Condition& cond) {
  const GroupMask frozen = kShared | kEnc | kDis;
  const Tensor target = net.trunk_features(x, cond, TrunkSide::discriminator, kAllGroups).detach();
  return recons_dis_loss(target, net.trunk_features(x_tilde, cond, TrunkSide::discriminator, frozen));
}

std::vector<std::string> LossComponents::names() {
  return {"recons", "prior", "recons_dis", "gan", "dis_real", "dis_fake_prior", "dis_fake_recon"};
}

std::vector<real> LossComponents::values() const {
  return {recons, prior, recons_dis, gan, dis_real, dis_fake_prior, dis_fake_recon};
}

LossBundle assemble(const Network& net, const LossWeights& weights, const LossInputs& in, unsigned terms,
                    GroupMask frozen) {
  weights.validate();
  LossBundle out;
  auto& c = out.components;
  const Condition& cond = in.cond;
  const bool want_enc = terms & kEncTerm;
  const bool want_dis = terms & kDisTerm;
  const bool want_dec = terms & kDecTerm;

  // Paths that feed only detached fakes are evaluated fully frozen.
  const GroupMask encode_frozen = want_enc ? frozen : kAllGroups;
  const GroupMask decode_frozen = (want_enc || want_dec) ? frozen : kAllGroups;

  const Tensor enc_features = net.trunk_features(in.x, cond, TrunkSide::encoder, encode_frozen);
  const LatentCode code = net.latent_from_features(enc_features, in.noise, encode_frozen);
  const Tensor x_tilde = net.decode(code.sample, cond, decode_frozen);

  const Tensor recons = recons_loss(in.x, x_tilde);
  const Tensor prior = prior_kl(code.mu, code.log_var);
  c.recons = recons.item();
  c.prior = prior.item();
  if (want_enc) out.l_enc = add(scale(recons, weights.alpha), scale(prior, weights.beta));

  if (!want_dis && !want_dec) return out;
  const Tensor x_prior = net.decode(in.prior_z, cond, want_dec ? frozen : kAllGroups);

  if (want_dis) {
    const bool reuse = !net.spec().no_sharing && encode_frozen == frozen;
    const Tensor real_features =
        reuse ? enc_features : net.trunk_features(in.x, cond, TrunkSide::discriminator, frozen);
    const Tensor p_real = net.prob_from_features(real_features, frozen);
    const Tensor p_fake_prior = net.discriminate(x_prior.detach(), cond, frozen);
    const Tensor p_fake_recon = net.discriminate(x_tilde.detach(), cond, frozen);
    out.l_dis = dis_loss(p_real, p_fake_prior, p_fake_recon);
    c.dis_real = -log_prob(p_real).item();
    c.dis_fake_prior = -log_one_minus(p_fake_prior).item();
    c.dis_fake_recon = -log_one_minus(p_fake_recon).item();
  }

  if (want_dec) {
    const GroupMask adversary = frozen | kShared | kEnc | kDis;
    const Tensor recon_features = net.trunk_features(x_tilde, cond, TrunkSide::discriminator, adversary);
    const Tensor real_features = net.trunk_features(in.x, cond, TrunkSide::discriminator, kAllGroups);
    const Tensor gan = gen_adv_loss(net.discriminate(x_prior, cond, adversary),
                                    net.prob_from_features(recon_features, adversary));
    const Tensor recons_dis = recons_dis_loss(real_features.detach(), recon_features);
    c.gan = gan.item();
    c.recons_dis = recons_dis.item();
    Tensor l_dec = add(scale(gan, weights.omega), scale(recons_dis, weights.lambda));
    if (weights.gamma > 0.0f) l_dec = add(l_dec, scale(recons, weights.gamma));
    out.l_dec = l_dec;
  }
  return out;
}

}  // namespace idvae
