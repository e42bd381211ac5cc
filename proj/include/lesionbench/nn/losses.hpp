#pragma once

#include <cmath>

#include "lesionbench/nn/tensor.hpp"

namespace lesionbench::nn {

/// 0.5 * sum over masked elements of (x - target)^2. When dx is non-null it
/// receives scale * d/dx. mask entries are 0/1 and broadcast is the caller's
/// job (shapes must match here).
template <class S>
S masked_sse_half(const Tensor<S>& x, const Tensor<S>& target, const Tensor<S>& mask,
                  Tensor<S>* dx = nullptr, S scale = S(1)) {
  if (x.v.size() != target.v.size() || x.v.size() != mask.v.size())
    throw ContractError("masked_sse_half shape mismatch");
  if (dx && dx->v.size() != x.v.size()) throw ContractError("masked_sse_half grad shape mismatch");
  S loss = S(0);
  for (size_t i = 0; i < x.v.size(); ++i) {
    const S d = (x.v[i] - target.v[i]) * mask.v[i];
    loss += S(0.5) * d * d;
    if (dx) dx->v[i] += scale * d;
  }
  return loss;
}

/// Paper-style reconstruction loss metric: the L2 norm of the in-mask
/// pixel-wise difference.
template <class S>
S recon_l2_norm(const Tensor<S>& x, const Tensor<S>& target, const Tensor<S>& mask) {
  if (x.v.size() != target.v.size() || x.v.size() != mask.v.size())
    throw ContractError("recon_l2_norm shape mismatch");
  S ss = S(0);
  for (size_t i = 0; i < x.v.size(); ++i) {
    const S d = (x.v[i] - target.v[i]) * mask.v[i];
    ss += d * d;
  }
  return std::sqrt(ss);
}

/// KL(N(mean, exp(logvar)) || N(0, I)) summed over all entries:
/// sum 0.5 * (exp(logvar) + mean^2 - 1 - logvar).
template <class S>
S kl_diag_gaussian(const Tensor<S>& mean, const Tensor<S>& logvar, Tensor<S>* dmean = nullptr,
                   Tensor<S>* dlogvar = nullptr, S scale = S(1)) {
  if (mean.v.size() != logvar.v.size()) throw ContractError("kl shape mismatch");
  S kl = S(0);
  for (size_t i = 0; i < mean.v.size(); ++i) {
    const S ev = std::exp(logvar.v[i]);
    kl += S(0.5) * (ev + mean.v[i] * mean.v[i] - S(1) - logvar.v[i]);
    if (dmean) dmean->v[i] += scale * mean.v[i];
    if (dlogvar) dlogvar->v[i] += scale * S(0.5) * (ev - S(1));
  }
  return kl;
}

/// Pixel-wise binary cross-entropy on logits, averaged over in-mask pixels.
template <class S>
S bce_with_logits_masked(const Tensor<S>& logits, const Tensor<S>& targets, const Tensor<S>& mask,
                         Tensor<S>* dlogits = nullptr, S scale = S(1)) {
  if (logits.v.size() != targets.v.size() || logits.v.size() != mask.v.size())
    throw ContractError("bce shape mismatch");
  S n = S(0);
  for (size_t i = 0; i < mask.v.size(); ++i) n += mask.v[i];
  if (n <= S(0)) throw ContractError("bce over an empty mask");
  S loss = S(0);
  for (size_t i = 0; i < logits.v.size(); ++i) {
    if (mask.v[i] == S(0)) continue;
    const S l = logits.v[i], y = targets.v[i];
    // stable form: max(l,0) - l*y + log(1 + exp(-|l|))
    loss += std::max(l, S(0)) - l * y + std::log1p(std::exp(-std::fabs(l)));
    if (dlogits) {
      const S sig = S(1) / (S(1) + std::exp(-l));
      dlogits->v[i] += scale * (sig - y) / n;
    }
  }
  return loss / n;
}

}  // namespace lesionbench::nn
