#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "lesionbench/eval.hpp"
#include "lesionbench/nn/adam.hpp"
#include "lesionbench/nn/autoenc.hpp"
#include "lesionbench/slice.hpp"

namespace lesionbench::models {

enum class ModelKind { AE, DAE, VAE, VAE_BBB, AAE, ALPHA_GAN };

const char* to_string(ModelKind k);
ModelKind parse_kind(const std::string& s);

struct TrainingConfig {
  uint64_t seed = 1;
  int max_epochs = 40;
  int batch_size = 32;
  double lr = 1e-4;
  double beta = 1.0;        // ELBO KL weight
  double dae_sigma = 0.5;   // corruption noise for DAE
  int n_critic = 5;
  double gp_coeff = 10.0;
  double adv_weight = 1.0;
  int critic_hidden = 64;
  int bbb_samples = 16;     // weight samples averaged at inference
  double bbb_logsigma_init = -5.0;
  int threads = 1;
  double converge_rel = 1e-3;  // stop when val improves less than this ...
  int converge_window = 10;    // ... over this many epochs
  std::string diagnostics_dir;  // checkpoint destination on divergence
};

struct LatentCode {
  nn::Tensor<float> mean;
  nn::Tensor<float> logvar;  // empty for deterministic kinds
  nn::Tensor<float> sample;
  nn::Tensor<float> eps;  // the recorded reparameterization draw
  bool has_logvar = false;
};

/// A trained detector: the autoencoder parameters plus (for adversarial
/// kinds) critic parameters and (for VAE_BBB) per-parameter posterior
/// log-stds parallel to the mean store.
struct TrainedModel {
  ModelKind kind = ModelKind::AE;
  nn::ArchSpec arch;
  TrainingConfig config;
  size_t trained_on = 0;  // training slices, scales the BBB weight KL

  nn::AutoencoderNet<float> net;
  nn::ParamStore<float> params;
  std::vector<float> bbb_logsigma;

  std::unique_ptr<nn::Mlp<float>> latent_critic, recon_critic;
  nn::ParamStore<float> critic_params;

  std::vector<double> loss_history;  // per-epoch mean training objective
  std::vector<double> val_history;   // per-epoch mean validation recon L2 norm

  TrainedModel() = default;
  TrainedModel(TrainedModel&&) = default;
  TrainedModel& operator=(TrainedModel&&) = default;
};

/// Fresh model with seeded initialization; critics are created for the
/// adversarial kinds, the posterior log-std vector for VAE_BBB.
TrainedModel build_model(ModelKind kind, const nn::ArchSpec& arch, const TrainingConfig& config);

nn::Tensor<float> slice_to_tensor(const Slice& slice);
nn::Tensor<float> mask_to_tensor(const Slice& slice);

/// Deterministic mean/log-variance; the sample uses the caller's rng and is
/// recorded in the returned code.
LatentCode encode(const TrainedModel& model, const Slice& slice, Pcg32& rng);

/// Deterministic reconstruction. VAE kinds decode the posterior mean;
/// VAE_BBB averages over `samples` weight draws (default config.bbb_samples)
/// with draw m coming from a stream keyed by (seed, m), so the M-sample
/// output is exactly the average of the single-sample outputs.
Slice reconstruct(const TrainedModel& model, const Slice& slice, int samples = 0);

/// Paper metric ||x - x'||_2 over in-mask pixels.
double recon_loss(const Slice& x, const Slice& x_prime);

struct ElboBreakdown {
  double total, recon, kl;
};

/// Single-slice ELBO surrogate with the given reparameterization draw.
ElboBreakdown elbo_loss(const TrainedModel& model, const Slice& slice, Pcg32& rng);

/// Adds N(0, sigma^2) noise to in-mask pixels.
Slice corrupt(const Slice& slice, double sigma, Pcg32& rng);

TrainedModel train(ModelKind kind, const nn::ArchSpec& arch, const std::vector<Slice>& train_set,
                   const std::vector<Slice>& val_set, const TrainingConfig& config);

/// |x - x'| inside the mask; BBB reconstructions are M-sample averages.
eval::DifferenceMap anomaly_map(const TrainedModel& model, const Slice& slice);

void save_checkpoint(const std::filesystem::path& dir, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& dir);

/// Content hash over kind, architecture, training config and data
/// fingerprint; keys checkpoint reuse.
std::string checkpoint_key(ModelKind kind, const nn::ArchSpec& arch, const TrainingConfig& config,
                           const std::string& data_fingerprint);

}  // namespace lesionbench::models
