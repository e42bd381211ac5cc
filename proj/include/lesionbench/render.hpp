#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lesionbench/eval.hpp"
#include "lesionbench/slice.hpp"

namespace lesionbench::render {

/// Minimal RGB raster canvas with the drawing ops the report plots need.
struct Canvas {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;  // 3 bytes per pixel, row-major

  Canvas(int w, int h, uint8_t r = 255, uint8_t g = 255, uint8_t b = 255);
  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b);
  void fill_rect(int x0, int y0, int w, int h, uint8_t r, uint8_t g, uint8_t b);
  void line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b, int dash = 0);
  /// 5x7 bitmap font, uppercase letters, digits and basic punctuation.
  void text(int x, int y, const std::string& s, uint8_t r, uint8_t g, uint8_t b, int scale = 1);
};

void write_png(const std::filesystem::path& path, const Canvas& canvas);

/// Reads width/height from a PNG IHDR; used by tests to check panel layout.
std::pair<int, int> png_dimensions(const std::filesystem::path& path);

struct PanelLayout {
  int tile_scale = 2;  // nearest-neighbour upscale per tile
  int pad = 2;
  int panel_width(int tile_px, int n_columns) const {
    return n_columns * tile_px * tile_scale + (n_columns + 1) * pad;
  }
  int panel_height(int tile_px) const { return tile_px * tile_scale + 2 * pad + 12; }
};

/// One row per slice: input | ground truth | one difference map per detector.
/// Input is windowed to its min/max, maps are windowed to [0, max] each.
void slice_panel(const std::filesystem::path& path, const Slice& slice, const GroundTruth& gt,
                 const std::vector<eval::DifferenceMap>& maps,
                 const std::vector<std::string>& map_names, const PanelLayout& layout = {});

struct RocSeries {
  std::string name;
  std::vector<double> fpr, tpr;
};

/// ROC overlay with the chance diagonal dashed in black.
void roc_overlay(const std::filesystem::path& path, const std::string& title,
                 const std::vector<RocSeries>& series);

}  // namespace lesionbench::render
