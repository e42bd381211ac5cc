#include "lesionbench/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace lesionbench::models {

using nlohmann::json;
namespace fs = std::filesystem;
using nn::Tensor;

const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::AE: return "AE";
    case ModelKind::DAE: return "DAE";
    case ModelKind::VAE: return "VAE";
    case ModelKind::VAE_BBB: return "VAE_BBB";
    case ModelKind::AAE: return "AAE";
    default: return "ALPHA_GAN";
  }
}

ModelKind parse_kind(const std::string& s) {
  if (s == "AE") return ModelKind::AE;
  if (s == "DAE") return ModelKind::DAE;
  if (s == "VAE") return ModelKind::VAE;
  if (s == "VAE_BBB") return ModelKind::VAE_BBB;
  if (s == "AAE") return ModelKind::AAE;
  if (s == "ALPHA_GAN") return ModelKind::ALPHA_GAN;
  throw ConfigError("unknown model kind: " + s);
}

namespace {

// purpose tags for the per-sample stochastic streams; every draw is keyed by
// (seed, purpose, logical index) so results do not depend on thread count.
constexpr uint64_t kStreamInit = 0x11;
constexpr uint64_t kStreamShuffle = 0x22;
constexpr uint64_t kStreamVaeEps = 0x33;
constexpr uint64_t kStreamDaeNoise = 0x44;
constexpr uint64_t kStreamPrior = 0x55;
constexpr uint64_t kStreamInterp = 0x66;
constexpr uint64_t kStreamBbb = 0x77;

Pcg32 stream(uint64_t seed, uint64_t purpose, uint64_t index) {
  return Pcg32(seed ^ (purpose * 0x9E3779B97F4A7C15ULL), index);
}

bool is_stochastic(ModelKind k) { return k == ModelKind::VAE || k == ModelKind::VAE_BBB; }

const char* act_name(nn::Act a) {
  switch (a) {
    case nn::Act::ReLU: return "relu";
    case nn::Act::LeakyReLU: return "lrelu";
    case nn::Act::Tanh: return "tanh";
    case nn::Act::Sigmoid: return "sigmoid";
    default: return "softplus";
  }
}

nn::Act parse_act(const std::string& s) {
  if (s == "relu") return nn::Act::ReLU;
  if (s == "lrelu") return nn::Act::LeakyReLU;
  if (s == "tanh") return nn::Act::Tanh;
  if (s == "sigmoid") return nn::Act::Sigmoid;
  if (s == "softplus") return nn::Act::Softplus;
  throw ConfigError("unknown activation: " + s);
}

}  // namespace

TrainedModel build_model(ModelKind kind, const nn::ArchSpec& arch, const TrainingConfig& config) {
  TrainedModel m;
  m.kind = kind;
  m.arch = arch;
  m.config = config;
  if (kind == ModelKind::ALPHA_GAN && arch.flat_latent <= 0)
    throw ConfigError("ALPHA_GAN uses a flat latent; set flat_latent > 0");

  Pcg32 rng = stream(config.seed, kStreamInit, 0);
  m.net.build(arch, is_stochastic(kind), m.params, rng);
  if (kind == ModelKind::VAE_BBB)
    m.bbb_logsigma.assign(m.params.size(), static_cast<float>(config.bbb_logsigma_init));

  const int h = config.critic_hidden;
  if (kind == ModelKind::AAE || kind == ModelKind::ALPHA_GAN) {
    const int zdim = static_cast<int>(arch.latent_numel());
    m.latent_critic = std::make_unique<nn::Mlp<float>>(m.critic_params, "lat_critic",
                                                       std::vector<int>{zdim, h, h, 1}, rng);
  }
  if (kind == ModelKind::ALPHA_GAN) {
    const int xdim = arch.input_size * arch.input_size;
    m.recon_critic = std::make_unique<nn::Mlp<float>>(m.critic_params, "rec_critic",
                                                      std::vector<int>{xdim, h, h, 1}, rng);
  }
  return m;
}

Tensor<float> slice_to_tensor(const Slice& slice) {
  Tensor<float> t({1, 1, slice.pixels.rows, slice.pixels.cols});
  std::copy(slice.pixels.v.begin(), slice.pixels.v.end(), t.v.begin());
  return t;
}

Tensor<float> mask_to_tensor(const Slice& slice) {
  Tensor<float> t({1, 1, slice.mask.rows, slice.mask.cols});
  for (size_t i = 0; i < slice.mask.v.size(); ++i) t.v[i] = slice.mask.v[i] ? 1.f : 0.f;
  return t;
}

namespace {

void check_input(const TrainedModel& m, const Slice& slice) {
  if (slice.pixels.rows != m.arch.input_size || slice.pixels.cols != m.arch.input_size)
    throw ValidationError("slice size " + std::to_string(slice.pixels.rows) +
                          " does not match model input size " + std::to_string(m.arch.input_size));
}

Slice tensor_to_slice(const Tensor<float>& t, const Slice& like) {
  Slice out = like;
  for (size_t i = 0; i < out.pixels.v.size(); ++i)
    out.pixels.v[i] = like.mask.v[i] ? t.v[i] : 0.f;
  return out;
}

}  // namespace

LatentCode encode(const TrainedModel& model, const Slice& slice, Pcg32& rng) {
  check_input(model, slice);
  const Tensor<float> x = slice_to_tensor(slice);
  auto enc = model.net.encode(model.params.values, x);
  LatentCode code;
  code.mean = enc.mean;
  code.has_logvar = model.net.stochastic;
  if (code.has_logvar) {
    code.logvar = enc.logvar;
    code.eps = Tensor<float>(enc.mean.shape);
    code.sample = enc.mean;
    for (size_t i = 0; i < code.sample.v.size(); ++i) {
      code.eps.v[i] = static_cast<float>(rng.normal());
      code.sample.v[i] += std::exp(0.5f * code.logvar.v[i]) * code.eps.v[i];
    }
  } else {
    code.sample = enc.mean;
  }
  return code;
}

Slice reconstruct(const TrainedModel& model, const Slice& slice, int samples) {
  check_input(model, slice);
  const Tensor<float> x = slice_to_tensor(slice);

  if (model.kind != ModelKind::VAE_BBB) {
    auto enc = model.net.encode(model.params.values, x);
    nn::Trace<float> td;
    Tensor<float> xp = model.net.decode(model.params.values, enc.mean, td);
    return tensor_to_slice(xp, slice);
  }

  const int m_samples = samples > 0 ? samples : model.config.bbb_samples;
  Tensor<float> acc({1, 1, slice.pixels.rows, slice.pixels.cols});
  std::vector<float> eps(model.params.size()), w;
  for (int m = 0; m < m_samples; ++m) {
    Pcg32 rng = stream(model.config.seed, kStreamBbb, 0xB0000000ULL + m);
    for (auto& e : eps) e = static_cast<float>(rng.normal());
    nn::bbb_sample_weights(model.params.values, model.bbb_logsigma, eps, w);
    auto enc = model.net.encode(w, x);
    nn::Trace<float> td;
    Tensor<float> xp = model.net.decode(w, enc.mean, td);
    for (size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += xp.v[i] / m_samples;
  }
  return tensor_to_slice(acc, slice);
}

double recon_loss(const Slice& x, const Slice& x_prime) {
  if (!x.pixels.same_shape(x_prime.pixels)) throw ValidationError("recon_loss: shapes differ");
  double ss = 0.0;
  for (size_t i = 0; i < x.pixels.v.size(); ++i) {
    if (!x.mask.v[i]) continue;
    const double d = static_cast<double>(x.pixels.v[i]) - x_prime.pixels.v[i];
    ss += d * d;
  }
  return std::sqrt(ss);
}

ElboBreakdown elbo_loss(const TrainedModel& model, const Slice& slice, Pcg32& rng) {
  if (!is_stochastic(model.kind))
    throw ContractError("elbo_loss requires a VAE or VAE_BBB model");
  check_input(model, slice);
  const Tensor<float> x = slice_to_tensor(slice);
  const Tensor<float> mask = mask_to_tensor(slice);
  Tensor<float> eps({1});
  {
    auto enc = model.net.encode(model.params.values, x);
    eps = Tensor<float>(enc.mean.shape);
    for (auto& e : eps.v) e = static_cast<float>(rng.normal());
  }
  auto parts = nn::vae_elbo<float>(model.net, model.params.values, x, mask, eps,
                                   static_cast<float>(model.config.beta), std::span<float>{}, 1.f);
  ElboBreakdown out{parts.total, parts.recon, parts.kl};
  if (model.kind == ModelKind::VAE_BBB) {
    const double n = std::max<size_t>(model.trained_on, 1);
    const double wkl = nn::bbb_weight_kl<float>(model.params.values, model.bbb_logsigma, nullptr,
                                                nullptr, 1.f);
    out.total += wkl / n;
  }
  return out;
}

Slice corrupt(const Slice& slice, double sigma, Pcg32& rng) {
  if (sigma < 0.0) throw ConfigError("corruption sigma must be >= 0");
  Slice out = slice;
  if (sigma == 0.0) return out;
  for (size_t i = 0; i < out.pixels.v.size(); ++i)
    if (out.mask.v[i]) out.pixels.v[i] += static_cast<float>(sigma * rng.normal());
  return out;
}

eval::DifferenceMap anomaly_map(const TrainedModel& model, const Slice& slice) {
  const Slice rec = reconstruct(model, slice);
  eval::DifferenceMap map;
  map.scores = Grid<float>(slice.pixels.rows, slice.pixels.cols, 0.f);
  map.mask = slice.mask;
  map.source = to_string(model.kind);
  for (size_t i = 0; i < map.scores.v.size(); ++i)
    if (slice.mask.v[i]) map.scores.v[i] = std::fabs(slice.pixels.v[i] - rec.pixels.v[i]);
  return map;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct Dataset {
  std::vector<Tensor<float>> x, mask;  // per-slice [1,1,H,W]
};

Dataset to_dataset(const std::vector<Slice>& slices, int input_size) {
  Dataset d;
  d.x.reserve(slices.size());
  d.mask.reserve(slices.size());
  for (const auto& s : slices) {
    if (s.pixels.rows != input_size || s.pixels.cols != input_size)
      throw ValidationError("training slice does not match the architecture input size");
    d.x.push_back(slice_to_tensor(s));
    d.mask.push_back(mask_to_tensor(s));
  }
  return d;
}

struct BatchTensors {
  Tensor<float> x, mask;
};

BatchTensors gather(const Dataset& d, const std::vector<int>& idx, int lo, int hi) {
  const auto& first = d.x[idx[lo]];
  const int hw = first.dim(2) * first.dim(3);
  BatchTensors b{Tensor<float>({hi - lo, 1, first.dim(2), first.dim(3)}),
                 Tensor<float>({hi - lo, 1, first.dim(2), first.dim(3)})};
  for (int i = lo; i < hi; ++i) {
    std::copy(d.x[idx[i]].v.begin(), d.x[idx[i]].v.end(), b.x.v.begin() + (i - lo) * hw);
    std::copy(d.mask[idx[i]].v.begin(), d.mask[idx[i]].v.end(), b.mask.v.begin() + (i - lo) * hw);
  }
  return b;
}

/// Fills a [n, dim] tensor with per-sample normal draws keyed by logical index.
Tensor<float> keyed_normals(uint64_t seed, uint64_t purpose, uint64_t base, int lo, int n, int dim) {
  Tensor<float> t({n, dim});
  for (int i = 0; i < n; ++i) {
    Pcg32 rng = stream(seed, purpose, base + lo + i);
    for (int j = 0; j < dim; ++j) t.v[static_cast<size_t>(i) * dim + j] = static_cast<float>(rng.normal());
  }
  return t;
}

std::vector<float> keyed_uniforms(uint64_t seed, uint64_t base, int lo, int n) {
  std::vector<float> u(n);
  for (int i = 0; i < n; ++i) {
    Pcg32 rng = stream(seed, kStreamInterp, base + lo + i);
    u[i] = static_cast<float>(rng.next_double());
  }
  return u;
}

class Trainer {
 public:
  Trainer(TrainedModel& m, const Dataset& train, const Dataset& val)
      : m_(m), cfg_(m.config), train_(train), val_(val) {
    const int threads = std::max(1, cfg_.threads);
    grad_ae_.assign(threads, m_.params.zeros_like());
    grad_ls_.assign(threads, std::vector<float>(m_.bbb_logsigma.size(), 0.f));
    grad_critic_.assign(threads, m_.critic_params.zeros_like());
    loss_.assign(threads, 0.0);
    adam_ae_ = std::make_unique<nn::Adam<float>>(m_.params.size(), cfg_.lr);
    if (!m_.bbb_logsigma.empty())
      adam_ls_ = std::make_unique<nn::Adam<float>>(m_.bbb_logsigma.size(), cfg_.lr);
    if (m_.critic_params.size() > 0)
      adam_critic_ = std::make_unique<nn::Adam<float>>(m_.critic_params.size(), cfg_.lr);
  }

  void run() {
    std::vector<int> idx(train_.x.size());
    std::iota(idx.begin(), idx.end(), 0);
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
      Pcg32 shuffle_rng = stream(cfg_.seed, kStreamShuffle, epoch);
      for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[shuffle_rng.next_below(static_cast<uint32_t>(i))]);

      double epoch_loss = 0.0;
      int epoch_count = 0;
      for (size_t lo = 0; lo < idx.size(); lo += cfg_.batch_size) {
        const int hi = static_cast<int>(std::min(lo + cfg_.batch_size, idx.size()));
        const std::vector<int> bidx(idx.begin() + lo, idx.begin() + hi);
        const double loss = step(bidx);
        if (!std::isfinite(loss)) {
          if (!cfg_.diagnostics_dir.empty()) save_checkpoint(cfg_.diagnostics_dir, m_);
          throw TrainingDiverged("loss became non-finite at epoch " + std::to_string(epoch));
        }
        epoch_loss += loss * bidx.size();
        epoch_count += static_cast<int>(bidx.size());
        ++step_;
      }
      m_.loss_history.push_back(epoch_loss / std::max(epoch_count, 1));

      const double val = validation_metric();
      m_.val_history.push_back(val);
      if (val < best_val * (1.0 - cfg_.converge_rel)) {
        best_val = val;
        best_epoch = epoch;
      }
      if (best_epoch >= 0 && epoch - best_epoch >= cfg_.converge_window) break;
    }
  }

 private:
  double validation_metric() {
    const Dataset& d = val_.x.empty() ? train_ : val_;
    const size_t limit = std::min<size_t>(d.x.size(), 128);  // capped probe, stays cheap
    double total = 0.0;
    for (size_t i = 0; i < limit; ++i) {
      auto enc = m_.net.encode(m_.params.values, d.x[i]);
      nn::Trace<float> td;
      Tensor<float> xp = m_.net.decode(m_.params.values, enc.mean, td);
      total += nn::recon_l2_norm(xp, d.x[i], d.mask[i]);
    }
    return total / std::max<size_t>(limit, 1);
  }

  void zero_buffers() {
    for (auto& g : grad_ae_) std::fill(g.begin(), g.end(), 0.f);
    for (auto& g : grad_ls_) std::fill(g.begin(), g.end(), 0.f);
    for (auto& g : grad_critic_) std::fill(g.begin(), g.end(), 0.f);
    std::fill(loss_.begin(), loss_.end(), 0.0);
  }

  /// Deterministic reduction: thread 0 buffer accumulates others in order.
  template <class V>
  static void reduce(std::vector<V>& bufs) {
    for (size_t t = 1; t < bufs.size(); ++t)
      for (size_t i = 0; i < bufs[0].size(); ++i) bufs[0][i] += bufs[t][i];
  }

  double step(const std::vector<int>& bidx) {
    switch (m_.kind) {
      case ModelKind::AE: return step_plain(bidx, false);
      case ModelKind::DAE: return step_plain(bidx, true);
      case ModelKind::VAE: return step_vae(bidx);
      case ModelKind::VAE_BBB: return step_bbb(bidx);
      case ModelKind::AAE: return step_adversarial(bidx, false);
      default: return step_adversarial(bidx, true);
    }
  }

  double step_plain(const std::vector<int>& bidx, bool denoise) {
    zero_buffers();
    const int n = static_cast<int>(bidx.size());
    const uint64_t base = step_ * (1ull << 20);
    parallel_chunks(n, cfg_.threads, [&](int t, int lo, int hi) {
      if (lo >= hi) return;
      BatchTensors b = gather(train_, bidx, lo, hi);
      Tensor<float> input = b.x;
      if (denoise && cfg_.dae_sigma > 0) {
        const int hw = input.dim(2) * input.dim(3);
        for (int i = 0; i < hi - lo; ++i) {
          Pcg32 rng = stream(cfg_.seed, kStreamDaeNoise, base + lo + i);
          for (int p = 0; p < hw; ++p) {
            const size_t at = static_cast<size_t>(i) * hw + p;
            if (b.mask.v[at] > 0)
              input.v[at] += static_cast<float>(cfg_.dae_sigma * rng.normal());
          }
        }
      }
      const float w = static_cast<float>(hi - lo) / n;
      loss_[t] = w * nn::ae_recon_loss<float>(m_.net, m_.params.values, input, b.x, b.mask,
                                              grad_ae_[t], w);
    });
    reduce(grad_ae_);
    adam_ae_->step(m_.params.values, grad_ae_[0]);
    double total = 0;
    for (double l : loss_) total += l;
    return total;
  }

  double step_vae(const std::vector<int>& bidx) {
    zero_buffers();
    const int n = static_cast<int>(bidx.size());
    const int zdim = static_cast<int>(m_.arch.latent_numel());
    const uint64_t base = step_ * (1ull << 20);
    parallel_chunks(n, cfg_.threads, [&](int t, int lo, int hi) {
      if (lo >= hi) return;
      BatchTensors b = gather(train_, bidx, lo, hi);
      Tensor<float> eps = keyed_normals(cfg_.seed, kStreamVaeEps, base, lo, hi - lo, zdim);
      auto lat = m_.arch.latent_shape();
      std::vector<int> sh{hi - lo};
      sh.insert(sh.end(), lat.begin(), lat.end());
      eps = eps.reshaped(sh);
      const float w = static_cast<float>(hi - lo) / n;
      auto parts = nn::vae_elbo<float>(m_.net, m_.params.values, b.x, b.mask, eps,
                                       static_cast<float>(cfg_.beta), grad_ae_[t], w);
      loss_[t] = w * parts.total;
    });
    reduce(grad_ae_);
    adam_ae_->step(m_.params.values, grad_ae_[0]);
    double total = 0;
    for (double l : loss_) total += l;
    return total;
  }

  double step_bbb(const std::vector<int>& bidx) {
    zero_buffers();
    const int n = static_cast<int>(bidx.size());
    const int zdim = static_cast<int>(m_.arch.latent_numel());
    const uint64_t base = step_ * (1ull << 20);

    // one weight draw per step, shared across the batch
    std::vector<float> eps_w(m_.params.size());
    Pcg32 wrng = stream(cfg_.seed, kStreamBbb, step_);
    for (auto& e : eps_w) e = static_cast<float>(wrng.normal());
    std::vector<float> w_sample;
    nn::bbb_sample_weights(m_.params.values, m_.bbb_logsigma, eps_w, w_sample);

    parallel_chunks(n, cfg_.threads, [&](int t, int lo, int hi) {
      if (lo >= hi) return;
      BatchTensors b = gather(train_, bidx, lo, hi);
      Tensor<float> eps = keyed_normals(cfg_.seed, kStreamVaeEps, base, lo, hi - lo, zdim);
      auto lat = m_.arch.latent_shape();
      std::vector<int> sh{hi - lo};
      sh.insert(sh.end(), lat.begin(), lat.end());
      eps = eps.reshaped(sh);
      const float w = static_cast<float>(hi - lo) / n;
      auto parts = nn::vae_elbo<float>(m_.net, w_sample, b.x, b.mask, eps,
                                       static_cast<float>(cfg_.beta), grad_ae_[t], w);
      loss_[t] = w * parts.total;
    });
    reduce(grad_ae_);  // gradient in sampled-weight space

    // chain to posterior parameters, then add the weight-KL term
    std::vector<float> dmu(m_.params.size(), 0.f), dls(m_.params.size(), 0.f);
    nn::bbb_chain(grad_ae_[0], m_.bbb_logsigma, eps_w, dmu, dls);
    const float kl_scale = 1.f / static_cast<float>(std::max<size_t>(m_.trained_on, 1));
    const double wkl =
        nn::bbb_weight_kl<float>(m_.params.values, m_.bbb_logsigma, &dmu, &dls, kl_scale);

    adam_ae_->step(m_.params.values, dmu);
    adam_ls_->step(m_.bbb_logsigma, dls);
    double total = wkl * kl_scale;
    for (double l : loss_) total += l;
    return total;
  }

  double step_adversarial(const std::vector<int>& bidx, bool alpha_gan) {
    const int n = static_cast<int>(bidx.size());
    const int zdim = static_cast<int>(m_.arch.latent_numel());
    const int xdim = m_.arch.input_size * m_.arch.input_size;

    // critic phase
    for (int iter = 0; iter < cfg_.n_critic; ++iter) {
      zero_buffers();
      const uint64_t base = (step_ * 8 + iter) * (1ull << 20);
      parallel_chunks(n, cfg_.threads, [&](int t, int lo, int hi) {
        if (lo >= hi) return;
        BatchTensors b = gather(train_, bidx, lo, hi);
        auto enc = m_.net.encode(m_.params.values, b.x);
        Tensor<float> z_fake = enc.mean.reshaped({hi - lo, zdim});
        Tensor<float> z_prior = keyed_normals(cfg_.seed, kStreamPrior, base, lo, hi - lo, zdim);
        std::vector<float> u = keyed_uniforms(cfg_.seed, base, lo, hi - lo);
        const float w = static_cast<float>(hi - lo) / n;
        // losses are chunk means; weight both the value and the gradient by w
        std::vector<float> local(m_.critic_params.size(), 0.f);
        auto cl = nn::wgan_gp_critic_loss<float>(*m_.latent_critic, m_.critic_params.values,
                                                 z_prior, z_fake, u,
                                                 static_cast<float>(cfg_.gp_coeff), local);
        loss_[t] += w * cl.total;
        if (alpha_gan) {
          nn::Trace<float> td;
          Tensor<float> xp = m_.net.decode(m_.params.values, enc.mean, td);
          Tensor<float> x_flat = b.x.reshaped({hi - lo, xdim});
          Tensor<float> xp_flat = xp.reshaped({hi - lo, xdim});
          std::vector<float> u2 = keyed_uniforms(cfg_.seed, base + (1ull << 18), lo, hi - lo);
          auto rl = nn::wgan_gp_critic_loss<float>(*m_.recon_critic, m_.critic_params.values,
                                                   x_flat, xp_flat, u2,
                                                   static_cast<float>(cfg_.gp_coeff), local);
          loss_[t] += w * rl.total;
        }
        for (size_t i = 0; i < local.size(); ++i) grad_critic_[t][i] += w * local[i];
      });
      reduce(grad_critic_);
      adam_critic_->step(m_.critic_params.values, grad_critic_[0]);
    }

    // generator phase: reconstruction plus adversarial terms against frozen critics
    zero_buffers();
    parallel_chunks(n, cfg_.threads, [&](int t, int lo, int hi) {
      if (lo >= hi) return;
      BatchTensors b = gather(train_, bidx, lo, hi);
      const float w = static_cast<float>(hi - lo) / n;
      auto enc = m_.net.encode(m_.params.values, b.x);
      Tensor<float> z_flat = enc.mean.reshaped({hi - lo, zdim});

      Tensor<float> dz_adv({hi - lo, zdim});
      const float adv_w = static_cast<float>(cfg_.adv_weight);
      double adv = nn::adversarial_fool_term<float>(*m_.latent_critic, m_.critic_params.values,
                                                    z_flat, &dz_adv, w * adv_w);

      nn::Trace<float> td;
      Tensor<float> xp = m_.net.decode(m_.params.values, enc.mean, td);
      Tensor<float> dxp(xp.shape);
      const float invc = 1.f / (hi - lo);
      const double recon =
          nn::masked_sse_half<float>(xp, b.x, b.mask, &dxp, w * invc) * invc;

      double adv_rec = 0.0;
      if (alpha_gan) {
        Tensor<float> xp_flat = xp.reshaped({hi - lo, xdim});
        Tensor<float> dxp_adv({hi - lo, xdim});
        adv_rec = nn::adversarial_fool_term<float>(*m_.recon_critic, m_.critic_params.values,
                                                   xp_flat, &dxp_adv, w * adv_w);
        Tensor<float> dxp_adv_img = dxp_adv.reshaped(xp.shape);
        for (size_t i = 0; i < dxp.v.size(); ++i) dxp.v[i] += dxp_adv_img.v[i];
      }

      nn::TraceReader<float> rd(td);
      Tensor<float> dz = m_.net.decoder.backward(m_.params.values, dxp, rd, grad_ae_[t]);
      Tensor<float> dz_adv_shaped = dz_adv.reshaped(dz.shape);
      for (size_t i = 0; i < dz.v.size(); ++i) dz.v[i] += dz_adv_shaped.v[i];
      m_.net.encode_backward(m_.params.values, enc, dz, nullptr, grad_ae_[t]);

      loss_[t] = w * (recon + adv_w * adv + (alpha_gan ? adv_w * adv_rec : 0.0));
    });
    reduce(grad_ae_);
    adam_ae_->step(m_.params.values, grad_ae_[0]);
    double total = 0;
    for (double l : loss_) total += l;
    return total;
  }

  TrainedModel& m_;
  const TrainingConfig& cfg_;
  const Dataset& train_;
  const Dataset& val_;
  std::vector<std::vector<float>> grad_ae_, grad_ls_, grad_critic_;
  std::vector<double> loss_;
  std::unique_ptr<nn::Adam<float>> adam_ae_, adam_ls_, adam_critic_;
  uint64_t step_ = 0;
};

}  // namespace

TrainedModel train(ModelKind kind, const nn::ArchSpec& arch, const std::vector<Slice>& train_set,
                   const std::vector<Slice>& val_set, const TrainingConfig& config) {
  if (train_set.empty()) throw DegenerateDataError("training set is empty");
  TrainedModel m = build_model(kind, arch, config);
  m.trained_on = train_set.size();
  const Dataset train_d = to_dataset(train_set, arch.input_size);
  const Dataset val_d = to_dataset(val_set, arch.input_size);
  Trainer trainer(m, train_d, val_d);
  trainer.run();
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_raster(const fs::path& p, const float* data, size_t n) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_raster(const fs::path& p, float* data, size_t n) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot read " + p.string());
  if (static_cast<size_t>(f.tellg()) != n * sizeof(float))
    throw IntegrityError("parameter raster size mismatch: " + p.string());
  f.seekg(0);
  f.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

json params_manifest(const nn::ParamStore<float>& store) {
  json arr = json::array();
  for (const auto& nm : store.names) {
    arr.push_back({{"name", nm.name},
                   {"shape", nm.shape},
                   {"file", "params/" + nm.name + ".f32"}});
  }
  return arr;
}

void save_store(const fs::path& dir, const nn::ParamStore<float>& store) {
  for (const auto& nm : store.names) {
    const size_t n = static_cast<size_t>(Tensor<float>::numel(nm.shape));
    write_raster(dir / (nm.name + ".f32"), store.values.data() + nm.offset, n);
  }
}

void load_store(const fs::path& dir, nn::ParamStore<float>& store) {
  for (const auto& nm : store.names) {
    const size_t n = static_cast<size_t>(Tensor<float>::numel(nm.shape));
    read_raster(dir / (nm.name + ".f32"), store.values.data() + nm.offset, n);
  }
}

json config_to_json(const TrainingConfig& c) {
  return {{"seed", c.seed},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"beta", c.beta},
          {"dae_sigma", c.dae_sigma},
          {"n_critic", c.n_critic},
          {"gp_coeff", c.gp_coeff},
          {"adv_weight", c.adv_weight},
          {"critic_hidden", c.critic_hidden},
          {"bbb_samples", c.bbb_samples},
          {"bbb_logsigma_init", c.bbb_logsigma_init},
          {"threads", c.threads},
          {"converge_rel", c.converge_rel},
          {"converge_window", c.converge_window}};
}

TrainingConfig config_from_json(const json& j) {
  TrainingConfig c;
  c.seed = j.at("seed").get<uint64_t>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.beta = j.at("beta").get<double>();
  c.dae_sigma = j.at("dae_sigma").get<double>();
  c.n_critic = j.at("n_critic").get<int>();
  c.gp_coeff = j.at("gp_coeff").get<double>();
  c.adv_weight = j.at("adv_weight").get<double>();
  c.critic_hidden = j.at("critic_hidden").get<int>();
  c.bbb_samples = j.at("bbb_samples").get<int>();
  c.bbb_logsigma_init = j.at("bbb_logsigma_init").get<double>();
  c.threads = j.at("threads").get<int>();
  c.converge_rel = j.at("converge_rel").get<double>();
  c.converge_window = j.at("converge_window").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const TrainedModel& model) {
  fs::create_directories(dir / "params");
  json doc = {
      {"kind", to_string(model.kind)},
      {"arch",
       {{"input_size", model.arch.input_size},
        {"channels", model.arch.channels},
        {"flat_latent", model.arch.flat_latent},
        {"activation", act_name(model.arch.activation)}}},
      {"training_config", config_to_json(model.config)},
      {"trained_on", model.trained_on},
      {"loss_history", model.loss_history},
      {"val_history", model.val_history},
      {"params", params_manifest(model.params)},
      {"critic_params", params_manifest(model.critic_params)},
  };
  if (!model.bbb_logsigma.empty()) doc["bbb_logsigma_file"] = "params/bbb_logsigma.f32";
  save_store(dir / "params", model.params);
  save_store(dir / "params", model.critic_params);
  if (!model.bbb_logsigma.empty())
    write_raster(dir / "params/bbb_logsigma.f32", model.bbb_logsigma.data(),
                 model.bbb_logsigma.size());
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint manifest in " + dir.string());
  f << doc.dump(2) << "\n";
}

TrainedModel load_checkpoint(const fs::path& dir) {
  json doc;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("no checkpoint manifest in " + dir.string());
    try {
      f >> doc;
    } catch (const json::exception& e) {
      throw IntegrityError("corrupt checkpoint manifest: " + std::string(e.what()));
    }
  }
  const ModelKind kind = parse_kind(doc.at("kind").get<std::string>());
  nn::ArchSpec arch;
  arch.input_size = doc.at("arch").at("input_size").get<int>();
  arch.channels = doc.at("arch").at("channels").get<std::vector<int>>();
  arch.flat_latent = doc.at("arch").at("flat_latent").get<int>();
  arch.activation = parse_act(doc.at("arch").at("activation").get<std::string>());
  const TrainingConfig cfg = config_from_json(doc.at("training_config"));

  TrainedModel m = build_model(kind, arch, cfg);
  m.trained_on = doc.value("trained_on", size_t{0});
  m.loss_history = doc.value("loss_history", std::vector<double>{});
  m.val_history = doc.value("val_history", std::vector<double>{});
  load_store(dir / "params", m.params);
  load_store(dir / "params", m.critic_params);
  if (doc.contains("bbb_logsigma_file"))
    read_raster(dir / doc.at("bbb_logsigma_file").get<std::string>(), m.bbb_logsigma.data(),
                m.bbb_logsigma.size());
  return m;
}

std::string checkpoint_key(ModelKind kind, const nn::ArchSpec& arch, const TrainingConfig& config,
                           const std::string& data_fingerprint) {
  json doc = {{"kind", to_string(kind)},
              {"arch",
               {{"input_size", arch.input_size},
                {"channels", arch.channels},
                {"flat_latent", arch.flat_latent},
                {"activation", act_name(arch.activation)}}},
              {"training_config", config_to_json(config)},
              {"data", data_fingerprint}};
  return hex64(fnv1a64(doc.dump()));
}

}  // namespace lesionbench::models
