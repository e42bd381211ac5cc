#include "lesionbench/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace lesionbench::preprocess {

std::vector<Slice> remove_empty(const std::vector<Slice>& slices, int min_mask_pixels) {
  std::vector<Slice> kept;
  for (const auto& s : slices)
    if (mask_population(s) >= min_mask_pixels) kept.push_back(s);
  if (kept.empty() && !slices.empty())
    throw DegenerateDataError("empty-slice removal dropped every slice");
  return kept;
}

BoundingBox max_bounding_box(const std::vector<Slice>& slices) {
  if (slices.empty()) throw DegenerateDataError("max_bounding_box over an empty dataset");
  const int h = slices.front().pixels.rows, w = slices.front().pixels.cols;
  int rmin = h, rmax = 0, cmin = w, cmax = 0;
  for (const auto& s : slices) {
    if (!s.pixels.same_shape(h, w))
      throw ValidationError("max_bounding_box requires a uniform slice shape");
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (s.mask(r, c)) {
          rmin = std::min(rmin, r);
          rmax = std::max(rmax, r + 1);
          cmin = std::min(cmin, c);
          cmax = std::max(cmax, c + 1);
        }
  }
  if (rmax <= rmin) throw DegenerateDataError("no mask pixels anywhere in the dataset");
  return {rmin, rmax, cmin, cmax};
}

Slice crop(const Slice& slice, const BoundingBox& box) {
  if (box.row_min < 0 || box.col_min < 0 || box.row_max > slice.pixels.rows ||
      box.col_max > slice.pixels.cols || box.height() <= 0 || box.width() <= 0)
    throw ValidationError("crop box does not fit the slice");
  Slice out = slice;
  out.pixels = Grid<float>(box.height(), box.width());
  out.mask = Grid<uint8_t>(box.height(), box.width());
  for (int r = 0; r < box.height(); ++r)
    for (int c = 0; c < box.width(); ++c) {
      out.pixels(r, c) = slice.pixels(box.row_min + r, box.col_min + c);
      out.mask(r, c) = slice.mask(box.row_min + r, box.col_min + c);
    }
  return out;
}

Grid<uint8_t> crop(const Grid<uint8_t>& grid, const BoundingBox& box) {
  if (box.row_min < 0 || box.col_min < 0 || box.row_max > grid.rows || box.col_max > grid.cols)
    throw ValidationError("crop box does not fit the grid");
  Grid<uint8_t> out(box.height(), box.width());
  for (int r = 0; r < box.height(); ++r)
    for (int c = 0; c < box.width(); ++c) out(r, c) = grid(box.row_min + r, box.col_min + c);
  return out;
}

Slice normalize(const Slice& slice) {
  const int n = mask_population(slice);
  if (n < 2) throw DegenerateDataError("normalize needs at least 2 in-mask pixels");

  double sum = 0.0;
  for (int r = 0; r < slice.pixels.rows; ++r)
    for (int c = 0; c < slice.pixels.cols; ++c)
      if (slice.mask(r, c)) sum += slice.pixels(r, c);
  const double mean = sum / n;

  double ss = 0.0;
  for (int r = 0; r < slice.pixels.rows; ++r)
    for (int c = 0; c < slice.pixels.cols; ++c)
      if (slice.mask(r, c)) {
        const double d = slice.pixels(r, c) - mean;
        ss += d * d;
      }
  const double var = ss / n;  // population variance
  if (var <= 0.0)
    throw DegenerateDataError("zero in-mask variance, slice cannot be normalized (subject " +
                              slice.subject_id + ")");
  const double inv_std = 1.0 / std::sqrt(var);

  Slice out = slice;
  for (int r = 0; r < out.pixels.rows; ++r)
    for (int c = 0; c < out.pixels.cols; ++c)
      out.pixels(r, c) =
          out.mask(r, c) ? static_cast<float>((slice.pixels(r, c) - mean) * inv_std) : 0.f;
  return out;
}

namespace {

template <typename T>
Grid<T> resize_grid(const Grid<T>& in, int target) {
  if (target <= 0) throw ConfigError("resize target must be positive");
  Grid<T> out(target, target);
  for (int i = 0; i < target; ++i) {
    const int si = static_cast<int>(static_cast<int64_t>(i) * in.rows / target);
    for (int j = 0; j < target; ++j) {
      const int sj = static_cast<int>(static_cast<int64_t>(j) * in.cols / target);
      out(i, j) = in(si, sj);
    }
  }
  return out;
}

}  // namespace

Slice resize_nearest(const Slice& slice, int target) {
  Slice out = slice;
  out.pixels = resize_grid(slice.pixels, target);
  out.mask = resize_grid(slice.mask, target);
  return out;
}

Grid<uint8_t> resize_nearest(const Grid<uint8_t>& grid, int target) {
  return resize_grid(grid, target);
}

std::string fingerprint(const PreprocessConfig& cfg, const BoundingBox& box) {
  const std::string key = "target=" + std::to_string(cfg.target_size) +
                          ";min_mask=" + std::to_string(cfg.min_mask_pixels) +
                          ";box=" + std::to_string(box.row_min) + "," + std::to_string(box.row_max) +
                          "," + std::to_string(box.col_min) + "," + std::to_string(box.col_max);
  return hex64(fnv1a64(key));
}

std::vector<Slice> apply_pipeline(const std::vector<Slice>& slices, const PreprocessConfig& cfg,
                                  const BoundingBox& box) {
  std::vector<Slice> out = remove_empty(slices, cfg.min_mask_pixels);
  for (auto& s : out) s = resize_nearest(normalize(crop(s, box)), cfg.target_size);
  return out;
}

PipelineResult run_pipeline(const std::vector<Slice>& slices, const PreprocessConfig& cfg) {
  PipelineResult res;
  auto kept = remove_empty(slices, cfg.min_mask_pixels);
  res.box = max_bounding_box(kept);
  for (auto& s : kept) s = resize_nearest(normalize(crop(s, res.box)), cfg.target_size);
  res.slices = std::move(kept);
  res.fingerprint = fingerprint(cfg, res.box);
  return res;
}

}  // namespace lesionbench::preprocess
