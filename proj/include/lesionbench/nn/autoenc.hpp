#pragma once

#include "lesionbench/nn/layers.hpp"
#include "lesionbench/nn/losses.hpp"
#include "lesionbench/nn/mlp.hpp"

namespace lesionbench::nn {

/// Shared convolutional auto-encoder shape: stride-2 stages down to a latent
/// that stays spatial (last stage channels) or is flattened through a dense
/// layer (flat_latent > 0).
struct ArchSpec {
  int input_size = 64;
  std::vector<int> channels = {32, 64, 128, 64};
  int flat_latent = 0;
  Act activation = Act::LeakyReLU;

  int stages() const { return static_cast<int>(channels.size()); }
  int latent_extent() const { return input_size >> stages(); }

  std::vector<int> latent_shape() const {
    if (flat_latent > 0) return {flat_latent};
    return {channels.back(), latent_extent(), latent_extent()};
  }

  int64_t latent_numel() const {
    return flat_latent > 0 ? flat_latent
                           : static_cast<int64_t>(channels.back()) * latent_extent() * latent_extent();
  }

  void validate() const {
    if (channels.empty()) throw ConfigError("architecture needs at least one stage");
    if (input_size % (1 << stages()) != 0 || latent_extent() < 1)
      throw ConfigError("input size " + std::to_string(input_size) + " does not support " +
                        std::to_string(stages()) + " stride-2 stages");
    for (int c : channels)
      if (c < 1) throw ConfigError("channel counts must be positive");
    if (flat_latent < 0) throw ConfigError("flat latent must be >= 0");
  }
};

/// Per-input-size defaults that land on the published latent shapes
/// ((2,2,64) at 128, (4,4,64) at 256) and scale down for desk sizes.
inline std::vector<int> default_channels(int input_size) {
  switch (input_size) {
    case 32: return {32, 64, 64};
    case 64: return {32, 64, 128, 64};
    case 128: return {32, 64, 128, 128, 128, 64};
    case 256: return {32, 64, 128, 128, 128, 64};
    default: throw ConfigError("no default channel schedule for size " + std::to_string(input_size));
  }
}

template <class S>
struct AutoencoderNet {
  ArchSpec arch;
  bool stochastic = false;  // mean + logvar heads (VAE family)
  Sequential<S> trunk;      // all but the last encoder stage
  Sequential<S> mean_head;  // last stage (plus dense projection when flat)
  Sequential<S> logvar_head;
  Sequential<S> decoder;

  void build(const ArchSpec& a, bool stoch, ParamStore<S>& store, Pcg32& rng) {
    a.validate();
    if (stoch && a.flat_latent > 0)
      throw ConfigError("stochastic latent is only supported in spatial form");
    arch = a;
    stochastic = stoch;
    const auto& ch = a.channels;
    const int n = a.stages();
    const int ext = a.latent_extent();

    int in_c = 1;
    for (int s = 0; s + 1 < n; ++s) {
      trunk.layers.push_back(
          std::make_unique<Conv2d<S>>(store, "enc.conv" + std::to_string(s), in_c, ch[s], 4, 2, 1, rng));
      trunk.layers.push_back(std::make_unique<Activation<S>>(a.activation));
      in_c = ch[s];
    }

    auto build_head = [&](Sequential<S>& head, const std::string& name) {
      head.layers.push_back(
          std::make_unique<Conv2d<S>>(store, name + ".conv", in_c, ch[n - 1], 4, 2, 1, rng));
      if (a.flat_latent > 0) {
        head.layers.push_back(std::make_unique<Activation<S>>(a.activation));
        head.layers.push_back(std::make_unique<Reshape<S>>(
            std::vector<int>{ch[n - 1], ext, ext}, std::vector<int>{ch[n - 1] * ext * ext}));
        head.layers.push_back(std::make_unique<Linear<S>>(store, name + ".proj",
                                                          ch[n - 1] * ext * ext, a.flat_latent, rng));
      }
    };
    build_head(mean_head, "mean");
    if (stochastic) build_head(logvar_head, "logvar");

    if (a.flat_latent > 0) {
      decoder.layers.push_back(std::make_unique<Linear<S>>(store, "dec.proj", a.flat_latent,
                                                           ch[n - 1] * ext * ext, rng));
      decoder.layers.push_back(std::make_unique<Activation<S>>(a.activation));
      decoder.layers.push_back(std::make_unique<Reshape<S>>(
          std::vector<int>{ch[n - 1] * ext * ext}, std::vector<int>{ch[n - 1], ext, ext}));
    }
    for (int s = n - 1; s >= 1; --s) {
      decoder.layers.push_back(std::make_unique<ConvT2d<S>>(
          store, "dec.convt" + std::to_string(s), ch[s], ch[s - 1], 4, 2, 1, rng));
      decoder.layers.push_back(std::make_unique<Activation<S>>(a.activation));
    }
    decoder.layers.push_back(std::make_unique<ConvT2d<S>>(store, "dec.convt0", ch[0], 1, 4, 2, 1, rng));
  }

  struct EncodeOut {
    Tensor<S> trunk_out, mean, logvar;
    Trace<S> t_trunk, t_mean, t_logvar;
  };

  EncodeOut encode(std::span<const S> theta, const Tensor<S>& x) const {
    EncodeOut out;
    out.trunk_out = trunk.forward(theta, x, out.t_trunk);
    out.mean = mean_head.forward(theta, out.trunk_out, out.t_mean);
    if (stochastic) out.logvar = logvar_head.forward(theta, out.trunk_out, out.t_logvar);
    return out;
  }

  Tensor<S> decode(std::span<const S> theta, const Tensor<S>& z, Trace<S>& tr) const {
    return decoder.forward(theta, z, tr);
  }

  /// dmean (and dlogvar for stochastic nets) back to the input; parameter
  /// gradients accumulate into dtheta.
  Tensor<S> encode_backward(std::span<const S> theta, const EncodeOut& enc, const Tensor<S>& dmean,
                            const Tensor<S>* dlogvar, std::span<S> dtheta) const {
    TraceReader<S> rm(enc.t_mean);
    Tensor<S> dtrunk = mean_head.backward(theta, dmean, rm, dtheta);
    if (dlogvar) {
      TraceReader<S> rl(enc.t_logvar);
      Tensor<S> d2 = logvar_head.backward(theta, *dlogvar, rl, dtheta);
      for (size_t i = 0; i < dtrunk.v.size(); ++i) dtrunk.v[i] += d2.v[i];
    }
    TraceReader<S> rt(enc.t_trunk);
    return trunk.backward(theta, dtrunk, rt, dtheta);
  }
};

// ---------------------------------------------------------------------------
// Loss assemblies. All report batch totals divided by the batch size, so the
// scalars are directly comparable across batch sizes; gradients accumulate
// scaled by `scale` (callers pass 1 for training steps).
// ---------------------------------------------------------------------------

template <class S>
struct ElboParts {
  S total, recon, kl;
};

/// Single-sample ELBO surrogate with frozen reparameterization noise:
/// recon = 0.5 * masked SSE, kl = KL(q(z|x) || N(0,I)), total = recon + beta*kl.
template <class S>
ElboParts<S> vae_elbo(const AutoencoderNet<S>& net, std::span<const S> theta, const Tensor<S>& x,
                      const Tensor<S>& mask, const Tensor<S>& eps, S beta, std::span<S> dtheta,
                      S scale = S(1)) {
  if (!net.stochastic) throw ContractError("vae_elbo requires a stochastic net");
  const S invn = S(1) / static_cast<S>(x.dim(0));
  auto enc = net.encode(theta, x);
  if (eps.v.size() != enc.mean.v.size()) throw ContractError("vae_elbo: eps shape mismatch");

  Tensor<S> z = enc.mean;
  std::vector<S> sd(z.v.size());
  for (size_t i = 0; i < z.v.size(); ++i) {
    sd[i] = std::exp(S(0.5) * enc.logvar.v[i]);
    z.v[i] += sd[i] * eps.v[i];
  }

  Trace<S> td;
  Tensor<S> xp = net.decode(theta, z, td);

  const bool grads = !dtheta.empty();
  Tensor<S> dxp;
  if (grads) dxp = Tensor<S>(xp.shape);
  const S recon = masked_sse_half(xp, x, mask, grads ? &dxp : nullptr, scale * invn) * invn;

  Tensor<S> dmean_kl(enc.mean.shape), dlogvar_kl(enc.logvar.shape);
  const S kl = kl_diag_gaussian(enc.mean, enc.logvar, grads ? &dmean_kl : nullptr,
                                grads ? &dlogvar_kl : nullptr, scale * beta * invn) *
               invn;

  if (grads) {
    TraceReader<S> rd(td);
    Tensor<S> dz = net.decoder.backward(theta, dxp, rd, dtheta);
    Tensor<S> dmean = dmean_kl;
    Tensor<S> dlogvar = dlogvar_kl;
    for (size_t i = 0; i < dz.v.size(); ++i) {
      dmean.v[i] += dz.v[i];
      dlogvar.v[i] += dz.v[i] * eps.v[i] * sd[i] * S(0.5);
    }
    net.encode_backward(theta, enc, dmean, &dlogvar, dtheta);
  }
  return {recon + beta * kl, recon, kl};
}

/// Deterministic auto-encoder reconstruction objective (AE, DAE, AAE path):
/// 0.5 * masked SSE of decode(encode(x_in)) against target, batch-averaged.
template <class S>
S ae_recon_loss(const AutoencoderNet<S>& net, std::span<const S> theta, const Tensor<S>& x_in,
                const Tensor<S>& target, const Tensor<S>& mask, std::span<S> dtheta,
                S scale = S(1), Tensor<S>* z_out = nullptr, Tensor<S>* dz_extra = nullptr) {
  const S invn = S(1) / static_cast<S>(x_in.dim(0));
  auto enc = net.encode(theta, x_in);
  Trace<S> td;
  Tensor<S> xp = net.decode(theta, enc.mean, td);
  const bool grads = !dtheta.empty();
  Tensor<S> dxp;
  if (grads) dxp = Tensor<S>(xp.shape);
  const S loss = masked_sse_half(xp, target, mask, grads ? &dxp : nullptr, scale * invn) * invn;
  if (grads) {
    TraceReader<S> rd(td);
    Tensor<S> dz = net.decoder.backward(theta, dxp, rd, dtheta);
    if (dz_extra) {
      if (dz_extra->v.size() != dz.v.size()) throw ContractError("dz_extra shape mismatch");
      for (size_t i = 0; i < dz.v.size(); ++i) dz.v[i] += dz_extra->v[i];
    }
    net.encode_backward(theta, enc, dz, nullptr, dtheta);
  }
  if (z_out) *z_out = std::move(enc.mean);
  return loss;
}

template <class S>
struct AlphaGanLosses {
  S encoder_loss, generator_loss, latent_critic_loss, recon_critic_loss;
};

/// One alpha-GAN evaluation: the encoder fights the latent critic, the decoder
/// fights the reconstruction critic, both share the reconstruction term.
/// Gradient routing: encoder <- recon + latent adversarial term,
/// decoder <- recon + reconstruction adversarial term, critics <- their own
/// WGAN-GP losses with fakes held constant.
template <class S>
AlphaGanLosses<S> alpha_gan_losses(
    const AutoencoderNet<S>& net, std::span<const S> theta_ae, const Mlp<S>& latent_critic,
    std::span<const S> theta_lc, const Mlp<S>& recon_critic, std::span<const S> theta_rc,
    const Tensor<S>& x, const Tensor<S>& mask, const Tensor<S>& z_prior,
    const std::vector<S>& u_latent, const std::vector<S>& u_recon, S gp_coeff,
    std::span<S> dtheta_ae, std::span<S> dtheta_lc, std::span<S> dtheta_rc) {
  const int n = x.dim(0);
  const S invn = S(1) / static_cast<S>(n);
  const bool grads = !dtheta_ae.empty();

  auto enc = net.encode(theta_ae, x);
  Trace<S> td;
  Tensor<S> xp = net.decode(theta_ae, enc.mean, td);

  const int zdim = static_cast<int>(enc.mean.v.size()) / n;
  Tensor<S> z_flat = enc.mean.reshaped({n, zdim});
  const int xdim = static_cast<int>(x.v.size()) / n;
  Tensor<S> x_flat = x.reshaped({n, xdim});
  Tensor<S> xp_flat = xp.reshaped({n, xdim});

  // reconstruction term, shared by encoder and generator losses
  Tensor<S> dxp(xp.shape);
  const S recon =
      masked_sse_half(xp, x, mask, grads ? &dxp : nullptr, invn) * invn;

  // adversarial terms against frozen critics
  Tensor<S> dz_adv({n, zdim});
  const S adv_latent = adversarial_fool_term(latent_critic, theta_lc, z_flat,
                                             grads ? &dz_adv : nullptr, S(1));
  Tensor<S> dxp_adv({n, xdim});
  const S adv_recon = adversarial_fool_term(recon_critic, theta_rc, xp_flat,
                                            grads ? &dxp_adv : nullptr, S(1));

  AlphaGanLosses<S> out;
  out.encoder_loss = recon + adv_latent;
  out.generator_loss = recon + adv_recon;

  if (grads) {
    // decoder: two backward passes over the same trace keep the encoder free
    // of the reconstruction critic's gradient
    TraceReader<S> r1(td);
    Tensor<S> dz_recon = net.decoder.backward(theta_ae, dxp, r1, dtheta_ae);
    TraceReader<S> r2(td);
    net.decoder.backward(theta_ae, dxp_adv.reshaped(xp.shape), r2, dtheta_ae);

    Tensor<S> dz = dz_recon;
    for (size_t i = 0; i < dz.v.size(); ++i) dz.v[i] += dz_adv.v[i];
    net.encode_backward(theta_ae, enc, dz, nullptr, dtheta_ae);
  }

  const auto lc = wgan_gp_critic_loss(latent_critic, theta_lc, z_prior, z_flat, u_latent,
                                      gp_coeff, dtheta_lc);
  const auto rc = wgan_gp_critic_loss(recon_critic, theta_rc, x_flat, xp_flat, u_recon, gp_coeff,
                                      dtheta_rc);
  out.latent_critic_loss = lc.total;
  out.recon_critic_loss = rc.total;
  return out;
}

// ---------------------------------------------------------------------------
// Bayes-by-backprop: factorized Gaussian posterior per weight.
// ---------------------------------------------------------------------------

template <class S>
void bbb_sample_weights(const std::vector<S>& mu, const std::vector<S>& logsigma,
                        const std::vector<S>& eps, std::vector<S>& w) {
  w.resize(mu.size());
  for (size_t i = 0; i < mu.size(); ++i) w[i] = mu[i] + std::exp(logsigma[i]) * eps[i];
}

/// KL of the weight posterior from N(0, I): sum 0.5*(sigma^2 + mu^2 - 1) - log sigma.
template <class S>
S bbb_weight_kl(const std::vector<S>& mu, const std::vector<S>& logsigma, std::vector<S>* dmu,
                std::vector<S>* dlogsigma, S scale = S(1)) {
  S kl = S(0);
  for (size_t i = 0; i < mu.size(); ++i) {
    const S sigma2 = std::exp(S(2) * logsigma[i]);
    kl += S(0.5) * (sigma2 + mu[i] * mu[i] - S(1)) - logsigma[i];
    if (dmu) (*dmu)[i] += scale * mu[i];
    if (dlogsigma) (*dlogsigma)[i] += scale * (sigma2 - S(1));
  }
  return kl;
}

/// Chain rule from a gradient in sampled-weight space back to (mu, logsigma).
template <class S>
void bbb_chain(const std::vector<S>& grad_w, const std::vector<S>& logsigma,
               const std::vector<S>& eps, std::vector<S>& dmu, std::vector<S>& dlogsigma) {
  for (size_t i = 0; i < grad_w.size(); ++i) {
    dmu[i] += grad_w[i];
    dlogsigma[i] += grad_w[i] * eps[i] * std::exp(logsigma[i]);
  }
}

}  // namespace lesionbench::nn
