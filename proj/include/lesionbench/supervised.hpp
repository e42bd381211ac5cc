#pragma once

#include <filesystem>

#include "lesionbench/eval.hpp"
#include "lesionbench/models.hpp"
#include "lesionbench/slice.hpp"

namespace lesionbench::supervised {

/// Three-level U-Net (two poolings) with skip connections; the reference
/// upper bound for the unsupervised detectors.
struct UNetModel {
  int base_channels = 16;
  int input_size = 64;
  nn::ParamStore<float> params;
  models::TrainingConfig config;
  std::vector<double> loss_history;

  // layer stacks are rebuilt from (base_channels) on load
  struct Net;
  std::shared_ptr<const Net> net;
};

UNetModel build_unet(int input_size, int base_channels, const models::TrainingConfig& config);

/// Pixel-wise masked binary cross-entropy; throws DegenerateDataError when the
/// training set has no positive pixels.
UNetModel train_unet(const std::vector<Slice>& slices, const std::vector<GroundTruth>& labels,
                     const models::TrainingConfig& config, int base_channels = 16);

/// Per-pixel foreground probability in [0,1].
Grid<float> predict(const UNetModel& model, const Slice& slice);

/// Probability map wrapped as a DifferenceMap for the shared eval path.
eval::DifferenceMap probability_map(const UNetModel& model, const Slice& slice);

void save_checkpoint(const std::filesystem::path& dir, const UNetModel& model);
UNetModel load_checkpoint(const std::filesystem::path& dir);

std::string checkpoint_key(int input_size, int base_channels, const models::TrainingConfig& config,
                           const std::string& data_fingerprint);

}  // namespace lesionbench::supervised
