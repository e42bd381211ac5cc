#pragma once

#include <Eigen/Dense>

#include "lesionbench/nn/tensor.hpp"

namespace lesionbench::nn {

/// Fully-connected critic with tanh hidden units and a scalar linear output.
/// tanh keeps the gradient penalty twice differentiable, which the
/// reverse-over-forward pass below relies on.
template <class S>
class Mlp {
 public:
  /// Activations of one forward pass: h[0] is the input, h[l] the post-tanh
  /// activation of layer l. tanh' and tanh'' are recovered from h directly.
  struct Pass {
    std::vector<Tensor<S>> h;
    Tensor<S> y;  // [N,1]
  };

  Mlp(ParamStore<S>& store, const std::string& name, std::vector<int> dims, Pcg32& rng)
      : dims_(std::move(dims)) {
    if (dims_.size() < 2 || dims_.back() != 1)
      throw ContractError("critic needs dims {in, ..., 1}");
    for (size_t l = 1; l < dims_.size(); ++l) {
      w_off_.push_back(store.add(name + ".w" + std::to_string(l), {dims_[l], dims_[l - 1]}));
      b_off_.push_back(store.add(name + ".b" + std::to_string(l), {dims_[l]}));
      const double std = std::sqrt(1.0 / dims_[l - 1]);
      for (int i = 0; i < dims_[l] * dims_[l - 1]; ++i)
        store.values[w_off_.back() + i] = static_cast<S>(std * rng.normal());
    }
  }

  int input_dim() const { return dims_.front(); }
  int layers() const { return static_cast<int>(dims_.size()) - 1; }

  Tensor<S> forward(std::span<const S> theta, const Tensor<S>& x, Pass* pass = nullptr) const {
    const int n = x.dim(0);
    if (static_cast<int64_t>(x.v.size()) != static_cast<int64_t>(n) * dims_.front())
      throw ContractError("critic input width mismatch");
    if (pass) {
      pass->h.clear();
      pass->h.push_back(x);
    }
    Tensor<S> h = x;
    const int L = layers();
    for (int l = 1; l <= L; ++l) {
      Tensor<S> u({n, dims_[l]});
      MapC<S> H(h.v.data(), n, dims_[l - 1]);
      MapC<S> W(theta.data() + w_off_[l - 1], dims_[l], dims_[l - 1]);
      MapM<S> U(u.v.data(), n, dims_[l]);
      U.noalias() = H * W.transpose();
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < dims_[l]; ++o) u.v[static_cast<size_t>(i) * dims_[l] + o] += theta[b_off_[l - 1] + o];
      if (l < L) {
        for (auto& e : u.v) e = std::tanh(e);
        if (pass) pass->h.push_back(u);
      } else if (pass) {
        pass->y = u;
      }
      h = std::move(u);
    }
    return h;
  }

  /// dy [N,1] -> dx [N,in]; parameter gradients skipped when dtheta is empty.
  Tensor<S> backward(std::span<const S> theta, const Tensor<S>& dy, const Pass& pass,
                     std::span<S> dtheta) const {
    const int n = dy.dim(0);
    const int L = layers();
    Tensor<S> d = dy;
    for (int l = L; l >= 1; --l) {
      const Tensor<S>& hin = pass.h[l - 1];
      MapC<S> D(d.v.data(), n, dims_[l]);
      MapC<S> H(hin.v.data(), n, dims_[l - 1]);
      MapC<S> W(theta.data() + w_off_[l - 1], dims_[l], dims_[l - 1]);
      if (!dtheta.empty()) {
        MapM<S> DW(dtheta.data() + w_off_[l - 1], dims_[l], dims_[l - 1]);
        DW.noalias() += D.transpose() * H;
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < dims_[l]; ++o)
            dtheta[b_off_[l - 1] + o] += d.v[static_cast<size_t>(i) * dims_[l] + o];
      }
      Tensor<S> dprev({n, dims_[l - 1]});
      MapM<S> DP(dprev.v.data(), n, dims_[l - 1]);
      DP.noalias() = D * W;
      if (l - 1 >= 1) {
        const Tensor<S>& hl = pass.h[l - 1];  // post-tanh of layer l-1
        for (size_t i = 0; i < dprev.v.size(); ++i)
          dprev.v[i] *= (S(1) - hl.v[i] * hl.v[i]);
      }
      d = std::move(dprev);
    }
    return d;
  }

  /// Per-sample gradient of the scalar output with respect to the input.
  Tensor<S> input_gradient(std::span<const S> theta, const Pass& pass) const {
    Tensor<S> ones({pass.h[0].dim(0), 1});
    ones.fill(S(1));
    return backward(theta, ones, pass, {});
  }

  /// Mean over the batch of (||grad_x D(x)|| - 1)^2, with parameter gradients
  /// of that mean accumulated into dtheta scaled by `scale`. This is double
  /// backprop: a forward tangent pass along v = grad_x D, then a reverse pass
  /// over both the primal and tangent streams with v held constant.
  S gradient_penalty(std::span<const S> theta, const Pass& pass, std::span<S> dtheta,
                     S scale) const {
    const int n = pass.h[0].dim(0);
    const int L = layers();

    Tensor<S> g = input_gradient(theta, pass);
    std::vector<S> nrm(n, S(0));
    for (int i = 0; i < n; ++i) {
      S ss = S(0);
      for (int j = 0; j < dims_[0]; ++j) {
        const S e = g.v[static_cast<size_t>(i) * dims_[0] + j];
        ss += e * e;
      }
      nrm[i] = std::sqrt(ss);
    }
    S penalty = S(0);
    for (int i = 0; i < n; ++i) penalty += (nrm[i] - S(1)) * (nrm[i] - S(1));
    penalty /= static_cast<S>(n);
    if (dtheta.empty()) return penalty;

    // tangent pass: hdot[0] = g, udot_l = hdot_{l-1} W^T, hdot_l = tanh'(u_l) . udot_l
    std::vector<Tensor<S>> hdot(L), udot(L + 1);
    hdot[0] = g;
    for (int l = 1; l <= L; ++l) {
      Tensor<S> ud({n, dims_[l]});
      MapC<S> HD(hdot[l - 1].v.data(), n, dims_[l - 1]);
      MapC<S> W(theta.data() + w_off_[l - 1], dims_[l], dims_[l - 1]);
      MapM<S> UD(ud.v.data(), n, dims_[l]);
      UD.noalias() = HD * W.transpose();
      udot[l] = ud;
      if (l < L) {
        Tensor<S> hd = ud;
        const Tensor<S>& hl = pass.h[l];
        for (size_t i = 0; i < hd.v.size(); ++i) hd.v[i] *= (S(1) - hl.v[i] * hl.v[i]);
        hdot[l] = std::move(hd);
      }
    }

    // seed: d(mean penalty)/d(udot_L) per sample, with v frozen the chain rule
    // gives d/dtheta (g . v) = 1/2 d/dtheta ||g||^2
    Tensor<S> A({n, 1});
    for (int i = 0; i < n; ++i)
      A.v[i] = nrm[i] > S(1e-12) ? scale * S(2) * (nrm[i] - S(1)) / (nrm[i] * static_cast<S>(n))
                                 : S(0);
    Tensor<S> C({n, 1});  // adjoint of u_L, starts at zero

    for (int l = L; l >= 1; --l) {
      MapC<S> Am(A.v.data(), n, dims_[l]);
      MapC<S> Cm(C.v.data(), n, dims_[l]);
      MapC<S> W(theta.data() + w_off_[l - 1], dims_[l], dims_[l - 1]);
      MapC<S> HD(hdot[l - 1].v.data(), n, dims_[l - 1]);
      MapC<S> H(pass.h[l - 1].v.data(), n, dims_[l - 1]);

      MapM<S> DW(dtheta.data() + w_off_[l - 1], dims_[l], dims_[l - 1]);
      DW.noalias() += Am.transpose() * HD;     // from udot_l = hdot_{l-1} W^T
      DW.noalias() += Cm.transpose() * H;      // from u_l = h_{l-1} W^T + b
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < dims_[l]; ++o)
          dtheta[b_off_[l - 1] + o] += C.v[static_cast<size_t>(i) * dims_[l] + o];

      if (l - 1 < 1) break;
      Tensor<S> B({n, dims_[l - 1]}), D({n, dims_[l - 1]});
      MapM<S> Bm(B.v.data(), n, dims_[l - 1]);
      MapM<S> Dm(D.v.data(), n, dims_[l - 1]);
      Bm.noalias() = Am * W;
      Dm.noalias() = Cm * W;

      const Tensor<S>& hl = pass.h[l - 1];
      const Tensor<S>& ud = udot[l - 1];
      Tensor<S> An({n, dims_[l - 1]}), Cn({n, dims_[l - 1]});
      for (size_t i = 0; i < An.v.size(); ++i) {
        const S t = hl.v[i];
        const S tp = S(1) - t * t;        // tanh'
        const S tpp = S(-2) * t * tp;     // tanh''
        An.v[i] = B.v[i] * tp;
        Cn.v[i] = D.v[i] * tp + B.v[i] * tpp * ud.v[i];
      }
      A = std::move(An);
      C = std::move(Cn);
    }
    return penalty;
  }

 private:
  std::vector<int> dims_;
  std::vector<size_t> w_off_, b_off_;
};

template <class S>
struct CriticLoss {
  S total, wasserstein, penalty;
};

/// mean D(fake) - mean D(real) + gp_coeff * mean (||grad D(interp)|| - 1)^2.
/// interp_u holds one uniform draw per pair. Gradients go to the critic only;
/// fake samples are treated as constants.
template <class S>
CriticLoss<S> wgan_gp_critic_loss(const Mlp<S>& critic, std::span<const S> theta,
                                  const Tensor<S>& z_real, const Tensor<S>& z_fake,
                                  const std::vector<S>& interp_u, S gp_coeff,
                                  std::span<S> dtheta) {
  if (z_real.shape != z_fake.shape) throw ContractError("wgan_gp: real/fake shapes differ");
  const int n = z_real.dim(0);
  if (static_cast<int>(interp_u.size()) != n)
    throw ContractError("wgan_gp: need one interpolation draw per pair");
  const int d = static_cast<int>(z_real.v.size()) / n;

  typename Mlp<S>::Pass pf, pr, pi;
  Tensor<S> yf = critic.forward(theta, z_fake, &pf);
  Tensor<S> yr = critic.forward(theta, z_real, &pr);

  S wass = S(0);
  for (int i = 0; i < n; ++i) wass += (yf.v[i] - yr.v[i]) / static_cast<S>(n);

  if (!dtheta.empty()) {
    Tensor<S> seed({n, 1});
    seed.fill(S(1) / static_cast<S>(n));
    critic.backward(theta, seed, pf, dtheta);
    seed.fill(S(-1) / static_cast<S>(n));
    critic.backward(theta, seed, pr, dtheta);
  }

  Tensor<S> zi({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const size_t idx = static_cast<size_t>(i) * d + j;
      zi.v[idx] = interp_u[i] * z_real.v[idx] + (S(1) - interp_u[i]) * z_fake.v[idx];
    }
  critic.forward(theta, zi, &pi);
  const S penalty = critic.gradient_penalty(theta, pi, dtheta, gp_coeff);

  return {wass + gp_coeff * penalty, wass, penalty};
}

/// Generator-side adversarial term -mean D(z_fake); writes scale * d/dz into
/// dz_accum and leaves the critic untouched (frozen critic).
template <class S>
S adversarial_fool_term(const Mlp<S>& critic, std::span<const S> theta, const Tensor<S>& z_fake,
                        Tensor<S>* dz_accum, S scale) {
  const int n = z_fake.dim(0);
  typename Mlp<S>::Pass pass;
  Tensor<S> y = critic.forward(theta, z_fake, &pass);
  S loss = S(0);
  for (int i = 0; i < n; ++i) loss -= y.v[i] / static_cast<S>(n);
  if (dz_accum) {
    Tensor<S> seed({n, 1});
    seed.fill(-scale / static_cast<S>(n));
    Tensor<S> dz = critic.backward(theta, seed, pass, {});
    if (dz_accum->v.size() != dz.v.size()) throw ContractError("adversarial term grad mismatch");
    for (size_t i = 0; i < dz.v.size(); ++i) dz_accum->v[i] += dz.v[i];
  }
  return loss;
}

}  // namespace lesionbench::nn
