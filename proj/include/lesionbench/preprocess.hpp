#pragma once

#include <string>
#include <vector>

#include "lesionbench/slice.hpp"

namespace lesionbench::preprocess {

/// Half-open pixel box [row_min, row_max) x [col_min, col_max).
struct BoundingBox {
  int row_min = 0, row_max = 0, col_min = 0, col_max = 0;
  int height() const { return row_max - row_min; }
  int width() const { return col_max - col_min; }
  bool operator==(const BoundingBox&) const = default;
};

struct PreprocessConfig {
  int target_size = 64;
  int min_mask_pixels = 1;
};

/// Keeps slices whose mask population reaches the threshold, in order.
std::vector<Slice> remove_empty(const std::vector<Slice>& slices, int min_mask_pixels);

/// Smallest box containing the union of all masks in the dataset.
BoundingBox max_bounding_box(const std::vector<Slice>& slices);

Slice crop(const Slice& slice, const BoundingBox& box);
Grid<uint8_t> crop(const Grid<uint8_t>& grid, const BoundingBox& box);

/// In-mask z-scoring with population variance; background is zeroed.
Slice normalize(const Slice& slice);

/// Nearest-neighbour resize with the pinned index rule
/// out(i,j) = in(floor(i*h_in/h_out), floor(j*w_in/w_out)).
Slice resize_nearest(const Slice& slice, int target);
Grid<uint8_t> resize_nearest(const Grid<uint8_t>& grid, int target);

struct PipelineResult {
  std::vector<Slice> slices;
  BoundingBox box;
  std::string fingerprint;  // hash of config + box
};

/// remove_empty -> crop(max_bounding_box) -> normalize -> resize, in that order.
PipelineResult run_pipeline(const std::vector<Slice>& slices, const PreprocessConfig& cfg);

/// Same crop/normalize/resize chain against an externally supplied box, so a
/// test set can be aligned with the box derived from training data.
std::vector<Slice> apply_pipeline(const std::vector<Slice>& slices, const PreprocessConfig& cfg,
                                  const BoundingBox& box);

std::string fingerprint(const PreprocessConfig& cfg, const BoundingBox& box);

}  // namespace lesionbench::preprocess
