#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "lesionbench/nn/tensor.hpp"

namespace lesionbench::nn {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatRM<S>>;
template <class S>
using MapC = Eigen::Map<const MatRM<S>>;

/// Layers are immutable after construction; parameters and activations travel
/// through the call, so one layer object can serve several threads.
template <class S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<S> forward(std::span<const S> theta, const Tensor<S>& x, Trace<S>& tr) const = 0;
  /// dy -> dx, accumulating parameter gradients into dtheta.
  virtual Tensor<S> backward(std::span<const S> theta, const Tensor<S>& dy, TraceReader<S>& tr,
                             std::span<S> dtheta) const = 0;
};

// ---------------------------------------------------------------------------
// im2col / col2im for [C,H,W] rasters
// ---------------------------------------------------------------------------

template <class S>
void im2col(const S* src, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
            S* cols) {
  for (int ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        S* row = cols + (static_cast<size_t>(ch) * k * k + ki * k + kj) * oh * ow;
        for (int oi = 0; oi < oh; ++oi) {
          const int si = oi * stride - pad + ki;
          for (int oj = 0; oj < ow; ++oj) {
            const int sj = oj * stride - pad + kj;
            row[oi * ow + oj] = (si >= 0 && si < h && sj >= 0 && sj < w)
                                    ? src[(static_cast<size_t>(ch) * h + si) * w + sj]
                                    : S(0);
          }
        }
      }
}

template <class S>
void col2im_add(const S* cols, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
                S* dst) {
  for (int ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const S* row = cols + (static_cast<size_t>(ch) * k * k + ki * k + kj) * oh * ow;
        for (int oi = 0; oi < oh; ++oi) {
          const int si = oi * stride - pad + ki;
          if (si < 0 || si >= h) continue;
          for (int oj = 0; oj < ow; ++oj) {
            const int sj = oj * stride - pad + kj;
            if (sj >= 0 && sj < w) dst[(static_cast<size_t>(ch) * h + si) * w + sj] += row[oi * ow + oj];
          }
        }
      }
}

// ---------------------------------------------------------------------------

template <class S>
class Linear : public Layer<S> {
 public:
  Linear(ParamStore<S>& store, const std::string& name, int in, int out, Pcg32& rng)
      : in_(in), out_(out) {
    w_off_ = store.add(name + ".w", {out, in});
    b_off_ = store.add(name + ".b", {out});
    const double std = std::sqrt(2.0 / in);
    for (int i = 0; i < in * out; ++i) store.values[w_off_ + i] = static_cast<S>(std * rng.normal());
  }

  Tensor<S> forward(std::span<const S> theta, const Tensor<S>& x, Trace<S>& tr) const override {
    const int n = x.dim(0);
    Tensor<S> y({n, out_});
    MapC<S> X(x.v.data(), n, in_);
    MapC<S> W(theta.data() + w_off_, out_, in_);
    MapM<S> Y(y.v.data(), n, out_);
    Y.noalias() = X * W.transpose();
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_; ++o) y.v[static_cast<size_t>(i) * out_ + o] += theta[b_off_ + o];
    tr.push(x);
    return y;
  }

  Tensor<S> backward(std::span<const S> theta, const Tensor<S>& dy, TraceReader<S>& tr,
                     std::span<S> dtheta) const override {
    const Tensor<S>& x = tr.pop();
    const int n = x.dim(0);
    MapC<S> X(x.v.data(), n, in_);
    MapC<S> DY(dy.v.data(), n, out_);
    MapC<S> W(theta.data() + w_off_, out_, in_);
    MapM<S> DW(dtheta.data() + w_off_, out_, in_);
    DW.noalias() += DY.transpose() * X;
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_; ++o) dtheta[b_off_ + o] += dy.v[static_cast<size_t>(i) * out_ + o];
    Tensor<S> dx({n, in_});
    MapM<S> DX(dx.v.data(), n, in_);
    DX.noalias() = DY * W;
    return dx;
  }

 private:
  int in_, out_;
  size_t w_off_, b_off_;
};

template <class S>
class Conv2d : public Layer<S> {
 public:
  Conv2d(ParamStore<S>& store, const std::string& name, int in_c, int out_c, int k, int stride,
         int pad, Pcg32& rng)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {
    w_off_ = store.add(name + ".w", {out_c, in_c * k * k});
    b_off_ = store.add(name + ".b", {out_c});
    const double std = std::sqrt(2.0 / (in_c * k * k));
    for (int i = 0; i < out_c * in_c * k * k; ++i)
      store.values[w_off_ + i] = static_cast<S>(std * rng.normal());
  }

  int out_extent(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<S> forward(std::span<const S> theta, const Tensor<S>& x, Trace<S>& tr) const override {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_extent(h), ow = out_extent(w);
    Tensor<S> y({n, out_c_, oh, ow});
    const int ick2 = in_c_ * k_ * k_;
    std::vector<S> cols(static_cast<size_t>(ick2) * oh * ow);
    MapC<S> W(theta.data() + w_off_, out_c_, ick2);
    for (int i = 0; i < n; ++i) {
      im2col(x.v.data() + static_cast<size_t>(i) * in_c_ * h * w, in_c_, h, w, k_, stride_, pad_,
             oh, ow, cols.data());
      MapC<S> C(cols.data(), ick2, oh * ow);
      MapM<S> Y(y.v.data() + static_cast<size_t>(i) * out_c_ * oh * ow, out_c_, oh * ow);
      Y.noalias() = W * C;
      for (int oc = 0; oc < out_c_; ++oc) Y.row(oc).array() += theta[b_off_ + oc];
    }
    tr.push(x);
    return y;
  }

  Tensor<S> backward(std::span<const S> theta, const Tensor<S>& dy, TraceReader<S>& tr,
                     std::span<S> dtheta) const override {
    const Tensor<S>& x = tr.pop();
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_extent(h), ow = out_extent(w);
    const int ick2 = in_c_ * k_ * k_;
    std::vector<S> cols(static_cast<size_t>(ick2) * oh * ow);
    std::vector<S> dcols(cols.size());
    MapC<S> W(theta.data() + w_off_, out_c_, ick2);
    MapM<S> DW(dtheta.data() + w_off_, out_c_, ick2);
    Tensor<S> dx({n, in_c_, h, w});
    for (int i = 0; i < n; ++i) {
      im2col(x.v.data() + static_cast<size_t>(i) * in_c_ * h * w, in_c_, h, w, k_, stride_, pad_,
             oh, ow, cols.data());
      MapC<S> C(cols.data(), ick2, oh * ow);
      MapC<S> DY(dy.v.data() + static_cast<size_t>(i) * out_c_ * oh * ow, out_c_, oh * ow);
      DW.noalias() += DY * C.transpose();
      for (int oc = 0; oc < out_c_; ++oc) dtheta[b_off_ + oc] += DY.row(oc).sum();
      MapM<S> DC(dcols.data(), ick2, oh * ow);
      DC.noalias() = W.transpose() * DY;
      col2im_add(dcols.data(), in_c_, h, w, k_, stride_, pad_, oh, ow,
                 dx.v.data() + static_cast<size_t>(i) * in_c_ * h * w);
    }
    return dx;
  }

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  size_t w_off_, b_off_;
};

/// Transposed convolution, the exact adjoint of Conv2d's spatial map.
template <class S>
class ConvT2d : public Layer<S> {
 public:
  ConvT2d(ParamStore<S>& store, const std::string& name, int in_c, int out_c, int k, int stride,
          int pad, Pcg32& rng)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {
    w_off_ = store.add(name + ".w", {in_c, out_c * k * k});
    b_off_ = store.add(name + ".b", {out_c});
    const double std = std::sqrt(2.0 / (in_c * k * k));
    for (int i = 0; i < in_c * out_c * k * k; ++i)
      store.values[w_off_ + i] = static_cast<S>(std * rng.normal());
  }

  int out_extent(int in) const { return (in - 1) * stride_ - 2 * pad_ + k_; }

  Tensor<S> forward(std::span<const S> theta, const Tensor<S>& x, Trace<S>& tr) const override {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_extent(h), ow = out_extent(w);
    const int ock2 = out_c_ * k_ * k_;
    Tensor<S> y({n, out_c_, oh, ow});
    std::vector<S> cols(static_cast<size_t>(ock2) * h * w);
    MapC<S> W(theta.data() + w_off_, in_c_, ock2);
    for (int i = 0; i < n; ++i) {
      MapC<S> X(x.v.data() + static_cast<size_t>(i) * in_c_ * h * w, in_c_, h * w);
      MapM<S> C(cols.data(), ock2, h * w);
      C.noalias() = W.transpose() * X;
      S* dst = y.v.data() + static_cast<size_t>(i) * out_c_ * oh * ow;
      col2im_add(cols.data(), out_c_, oh, ow, k_, stride_, pad_, h, w, dst);
      for (int oc = 0; oc < out_c_; ++oc) {
        S* plane = dst + static_cast<size_t>(oc) * oh * ow;
        for (int p = 0; p < oh * ow; ++p) plane[p] += theta[b_off_ + oc];
      }
    }
    tr.push(x);
    return y;
  }

  Tensor<S> backward(std::span<const S> theta, const Tensor<S>& dy, TraceReader<S>& tr,
                     std::span<S> dtheta) const override {
    const Tensor<S>& x = tr.pop();
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_extent(h), ow = out_extent(w);
    const int ock2 = out_c_ * k_ * k_;
    std::vector<S> dcols(static_cast<size_t>(ock2) * h * w);
    MapC<S> W(theta.data() + w_off_, in_c_, ock2);
    MapM<S> DW(dtheta.data() + w_off_, in_c_, ock2);
    Tensor<S> dx({n, in_c_, h, w});
    for (int i = 0; i < n; ++i) {
      const S* dys = dy.v.data() + static_cast<size_t>(i) * out_c_ * oh * ow;
      im2col(dys, out_c_, oh, ow, k_, stride_, pad_, h, w, dcols.data());
      MapC<S> DC(dcols.data(), ock2, h * w);
      MapC<S> X(x.v.data() + static_cast<size_t>(i) * in_c_ * h * w, in_c_, h * w);
      DW.noalias() += X * DC.transpose();
      MapM<S> DX(dx.v.data() + static_cast<size_t>(i) * in_c_ * h * w, in_c_, h * w);
      DX.noalias() = W * DC;
      for (int oc = 0; oc < out_c_; ++oc) {
        const S* plane = dys + static_cast<size_t>(oc) * oh * ow;
        S acc = S(0);
        for (int p = 0; p < oh * ow; ++p) acc += plane[p];
        dtheta[b_off_ + oc] += acc;
      }
    }
    return dx;
  }

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  size_t w_off_, b_off_;
};

enum class Act { ReLU, LeakyReLU, Tanh, Sigmoid, Softplus };

template <class S>
class Activation : public Layer<S> {
 public:
  explicit Activation(Act kind, S leak = S(0.2)) : kind_(kind), leak_(leak) {}

  static S eval(Act kind, S x, S leak) {
    switch (kind) {
      case Act::ReLU: return x > S(0) ? x : S(0);
      case Act::LeakyReLU: return x > S(0) ? x : leak * x;
      case Act::Tanh: return std::tanh(x);
      case Act::Sigmoid: return S(1) / (S(1) + std::exp(-x));
      default: {  // softplus, overflow-safe
        if (x > S(30)) return x;
        return std::log1p(std::exp(x));
      }
    }
  }

  static S deriv(Act kind, S x, S leak) {
    switch (kind) {
      case Act::ReLU: return x > S(0) ? S(1) : S(0);
      case Act::LeakyReLU: return x > S(0) ? S(1) : leak;
      case Act::Tanh: {
        const S t = std::tanh(x);
        return S(1) - t * t;
      }
      case Act::Sigmoid: {
        const S s = S(1) / (S(1) + std::exp(-x));
        return s * (S(1) - s);
      }
      default: return S(1) / (S(1) + std::exp(-x));
    }
  }

  Tensor<S> forward(std::span<const S>, const Tensor<S>& x, Trace<S>& tr) const override {
    Tensor<S> y = x;
    for (auto& e : y.v) e = eval(kind_, e, leak_);
    tr.push(x);
    return y;
  }

  Tensor<S> backward(std::span<const S>, const Tensor<S>& dy, TraceReader<S>& tr,
                     std::span<S>) const override {
    const Tensor<S>& x = tr.pop();
    Tensor<S> dx = dy;
    for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= deriv(kind_, x.v[i], leak_);
    return dx;
  }

 private:
  Act kind_;
  S leak_;
};

template <class S>
class MaxPool2 : public Layer<S> {
 public:
  Tensor<S> forward(std::span<const S>, const Tensor<S>& x, Trace<S>& tr) const override {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h / 2, ow = w / 2;
    Tensor<S> y({n, c, oh, ow});
    Tensor<S> arg({n, c, oh, ow});  // flat input index, exactly representable
    for (int i = 0; i < n * c; ++i) {
      const S* src = x.v.data() + static_cast<size_t>(i) * h * w;
      S* dst = y.v.data() + static_cast<size_t>(i) * oh * ow;
      S* am = arg.v.data() + static_cast<size_t>(i) * oh * ow;
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj) {
          int best = (2 * oi) * w + 2 * oj;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const int idx = (2 * oi + di) * w + 2 * oj + dj;
              if (src[idx] > src[best]) best = idx;
            }
          dst[oi * ow + oj] = src[best];
          am[oi * ow + oj] = static_cast<S>(best);
        }
    }
    tr.push(std::move(arg));
    Tensor<S> meta({4});
    meta.v = {static_cast<S>(n), static_cast<S>(c), static_cast<S>(h), static_cast<S>(w)};
    tr.push(std::move(meta));
    return y;
  }

  Tensor<S> backward(std::span<const S>, const Tensor<S>& dy, TraceReader<S>& tr,
                     std::span<S>) const override {
    const Tensor<S>& meta = tr.pop();
    const Tensor<S>& arg = tr.pop();
    const int n = static_cast<int>(meta.v[0]), c = static_cast<int>(meta.v[1]),
              h = static_cast<int>(meta.v[2]), w = static_cast<int>(meta.v[3]);
    const int oh = h / 2, ow = w / 2;
    Tensor<S> dx({n, c, h, w});
    for (int i = 0; i < n * c; ++i) {
      const S* dsrc = dy.v.data() + static_cast<size_t>(i) * oh * ow;
      const S* am = arg.v.data() + static_cast<size_t>(i) * oh * ow;
      S* dst = dx.v.data() + static_cast<size_t>(i) * h * w;
      for (int p = 0; p < oh * ow; ++p) dst[static_cast<int>(am[p])] += dsrc[p];
    }
    return dx;
  }
};

/// Shape change only; batch dimension is preserved.
template <class S>
class Reshape : public Layer<S> {
 public:
  Reshape(std::vector<int> in_per_sample, std::vector<int> out_per_sample)
      : in_(std::move(in_per_sample)), out_(std::move(out_per_sample)) {}

  Tensor<S> forward(std::span<const S>, const Tensor<S>& x, Trace<S>& tr) const override {
    (void)tr;
    std::vector<int> sh{x.dim(0)};
    sh.insert(sh.end(), out_.begin(), out_.end());
    return x.reshaped(std::move(sh));
  }

  Tensor<S> backward(std::span<const S>, const Tensor<S>& dy, TraceReader<S>&,
                     std::span<S>) const override {
    std::vector<int> sh{dy.dim(0)};
    sh.insert(sh.end(), in_.begin(), in_.end());
    return dy.reshaped(std::move(sh));
  }

 private:
  std::vector<int> in_, out_;
};

template <class S>
class Sequential {
 public:
  std::vector<std::unique_ptr<Layer<S>>> layers;

  Tensor<S> forward(std::span<const S> theta, Tensor<S> x, Trace<S>& tr) const {
    for (const auto& l : layers) x = l->forward(theta, x, tr);
    return x;
  }

  Tensor<S> backward(std::span<const S> theta, Tensor<S> dy, TraceReader<S>& tr,
                     std::span<S> dtheta) const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
      dy = (*it)->backward(theta, dy, tr, dtheta);
    return dy;
  }
};

}  // namespace lesionbench::nn
