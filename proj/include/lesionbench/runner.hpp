#pragma once

#include <filesystem>
#include <optional>

#include "lesionbench/baselines.hpp"
#include "lesionbench/models.hpp"
#include "lesionbench/preprocess.hpp"
#include "lesionbench/render.hpp"
#include "lesionbench/supervised.hpp"

namespace lesionbench::runner {

struct DetectorSpec {
  std::string name;
  std::string kind;  // mean | gmm | ae | dae | vae | vae_bbb | aae | alpha_gan | unet
  int input_size = 0;  // 0: use the preprocess target size
  std::vector<int> channels;  // empty: per-size default schedule
  int flat_latent = 0;
  double lambda_out = 0.01;
  int components = 3;
  bool sigma_map = false;
  int base_channels = 16;
  models::TrainingConfig train;
};

struct TaskSpec {
  std::string name;
  // synthetic source
  Modality modality = Modality::T2like;
  int image_size = 64;
  int train_count = 200;
  int val_count = 32;
  int test_count = 50;
  int supervised_count = 0;  // labeled lesioned slices for the U-Net
  LesionSpec lesion;
  // real source (used when manifests are set)
  bool real = false;
  std::string train_manifest, val_manifest, test_manifest, supervised_manifest;
};

struct ExperimentConfig {
  std::string name = "experiment";
  uint64_t seed = 1;
  int threads = 1;
  preprocess::PreprocessConfig prep;
  std::vector<TaskSpec> tasks;
  std::vector<DetectorSpec> detectors;
  int plot_slices = 8;

  static ExperimentConfig load(const std::filesystem::path& path,
                               std::optional<uint64_t> seed_override = std::nullopt);
  std::string canonical() const;  // stable JSON string, hashed for traceability
};

struct MetricRow {
  std::string detector, dataset;
  double auc = 0.0, mdsc = 0.0, t_star = 0.0;
  std::string checkpoint;  // content key, empty for closed-form detectors
  bool failed = false;
  std::string error;
};

struct TaskPlots {
  std::string task;
  std::vector<render::RocSeries> roc;
  std::vector<Slice> slices;          // native-resolution test slices
  std::vector<GroundTruth> gts;
  std::vector<std::string> detector_names;
  std::vector<std::vector<eval::DifferenceMap>> maps;  // [slice][detector]
};

struct Report {
  std::vector<MetricRow> rows;
  std::string config_hash;
  std::string environment;
  std::vector<TaskPlots> plots;
  bool any_failure = false;
};

struct RunOptions {
  bool train_only = false;    // stop after checkpoints exist
  bool persist_maps = false;  // write raw difference maps under out/maps
  bool do_metrics = true;
  bool do_plots = true;
};

/// Full pipeline: stage data, preprocess, train or load checkpoints, score,
/// evaluate and persist metrics + plots under out_dir. Reuses checkpoints by
/// content key, so a rerun with the same config is a cheap replay.
Report run(const ExperimentConfig& config, const std::filesystem::path& out_dir,
           const RunOptions& options = {});

/// Metrics recomputed from maps previously written by `run` with
/// persist_maps; an independent on-disk route to the same numbers.
Report eval_from_disk(const ExperimentConfig& config, const std::filesystem::path& out_dir);

void write_metrics(const Report& report, const std::filesystem::path& out_dir);
void emit_plots(const Report& report, const std::filesystem::path& out_dir);

}  // namespace lesionbench::runner
