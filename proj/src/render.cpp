#include "lesionbench/render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace lesionbench::render {

Canvas::Canvas(int w, int h, uint8_t r, uint8_t g, uint8_t b) : width(w), height(h) {
  rgb.resize(static_cast<size_t>(w) * h * 3);
  for (size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }
}

void Canvas::set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const size_t i = (static_cast<size_t>(y) * width + x) * 3;
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

void Canvas::fill_rect(int x0, int y0, int w, int h, uint8_t r, uint8_t g, uint8_t b) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) set(x, y, r, g, b);
}

void Canvas::line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b, int dash) {
  // Bresenham with an optional on/off dash period
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy, count = 0;
  for (;;) {
    if (dash == 0 || (count / dash) % 2 == 0) set(x0, y0, r, g, b);
    ++count;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

namespace {

// 5x7 bitmap glyphs, bit 4 = leftmost column.
struct Glyph {
  char ch;
  uint8_t rows[7];
};

const Glyph kFont[] = {
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x0A, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F}},
    {'3', {0x1E, 0x01, 0x01, 0x0E, 0x01, 0x01, 0x1E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'=', {0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
    {'/', {0x01, 0x02, 0x04, 0x04, 0x08, 0x10, 0x00}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'*', {0x04, 0x15, 0x0E, 0x04, 0x0E, 0x15, 0x04}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const uint8_t* glyph(char c) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont)
    if (g.ch == u) return g.rows;
  return nullptr;
}

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
  put_u32_be(out, static_cast<uint32_t>(data.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  const auto crc = crc32(0L, body.data(), static_cast<uInt>(body.size()));
  put_u32_be(out, static_cast<uint32_t>(crc));
}

}  // namespace

void Canvas::text(int x, int y, const std::string& s, uint8_t r, uint8_t g, uint8_t b, int scale) {
  int cx = x;
  for (char c : s) {
    const uint8_t* rows = glyph(c);
    if (rows) {
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (rows[row] & (1 << (4 - col)))
            for (int sy = 0; sy < scale; ++sy)
              for (int sx = 0; sx < scale; ++sx)
                set(cx + col * scale + sx, y + row * scale + sy, r, g, b);
    }
    cx += 6 * scale;
  }
}

void write_png(const std::filesystem::path& path, const Canvas& canvas) {
  std::vector<uint8_t> png = {137, 80, 78, 71, 13, 10, 26, 10};

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(canvas.width));
  put_u32_be(ihdr, static_cast<uint32_t>(canvas.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(png, "IHDR", ihdr);

  // filter byte 0 per scanline, then one zlib stream
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(canvas.height) * (canvas.width * 3 + 1));
  for (int y = 0; y < canvas.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = canvas.rgb.data() + static_cast<size_t>(y) * canvas.width * 3;
    raw.insert(raw.end(), row, row + canvas.width * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png deflate failed");
  compressed.resize(bound);
  append_chunk(png, "IDAT", compressed);
  append_chunk(png, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
}

std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  uint8_t head[24];
  f.read(reinterpret_cast<char*>(head), 24);
  if (!f || head[0] != 137 || head[1] != 'P') throw IoError("not a png: " + path.string());
  auto be32 = [&](int off) {
    return (head[off] << 24) | (head[off + 1] << 16) | (head[off + 2] << 8) | head[off + 3];
  };
  return {be32(16), be32(20)};
}

namespace {

void hot_color(double t, uint8_t& r, uint8_t& g, uint8_t& b) {
  t = std::clamp(t, 0.0, 1.0);
  r = static_cast<uint8_t>(std::clamp(3.0 * t, 0.0, 1.0) * 255);
  g = static_cast<uint8_t>(std::clamp(3.0 * t - 1.0, 0.0, 1.0) * 255);
  b = static_cast<uint8_t>(std::clamp(3.0 * t - 2.0, 0.0, 1.0) * 255);
}

void draw_tile_gray(Canvas& cv, int x0, int y0, const Grid<float>& img, int scale) {
  float lo = img.v.empty() ? 0.f : img.v[0], hi = lo;
  for (float v : img.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = (hi > lo) ? hi - lo : 1.f;
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      const auto v = static_cast<uint8_t>(255.f * (img(r, c) - lo) / range);
      cv.fill_rect(x0 + c * scale, y0 + r * scale, scale, scale, v, v, v);
    }
}

void draw_tile_binary(Canvas& cv, int x0, int y0, const Grid<uint8_t>& bits, int scale) {
  for (int r = 0; r < bits.rows; ++r)
    for (int c = 0; c < bits.cols; ++c) {
      const uint8_t v = bits(r, c) ? 255 : 0;
      cv.fill_rect(x0 + c * scale, y0 + r * scale, scale, scale, v, v, v);
    }
}

/// Difference maps use the documented [0, max] window per map.
void draw_tile_hot(Canvas& cv, int x0, int y0, const Grid<float>& scores, int scale) {
  float hi = 0.f;
  for (float v : scores.v) hi = std::max(hi, v);
  if (hi <= 0.f) hi = 1.f;
  for (int r = 0; r < scores.rows; ++r)
    for (int c = 0; c < scores.cols; ++c) {
      uint8_t rr, gg, bb;
      hot_color(scores(r, c) / hi, rr, gg, bb);
      cv.fill_rect(x0 + c * scale, y0 + r * scale, scale, scale, rr, gg, bb);
    }
}

struct Color {
  uint8_t r, g, b;
};

const Color kPalette[] = {
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},  {148, 103, 189},
    {140, 86, 75},  {227, 119, 194}, {127, 127, 127}, {188, 189, 34}, {23, 190, 207},
    {64, 0, 128},   {0, 128, 96},
};

}  // namespace

void slice_panel(const std::filesystem::path& path, const Slice& slice, const GroundTruth& gt,
                 const std::vector<eval::DifferenceMap>& maps,
                 const std::vector<std::string>& map_names, const PanelLayout& layout) {
  const int tile = slice.pixels.rows;
  const int cols = 2 + static_cast<int>(maps.size());
  Canvas cv(layout.panel_width(tile, cols), layout.panel_height(tile), 24, 24, 24);

  const int s = layout.tile_scale;
  auto tile_x = [&](int c) { return layout.pad + c * (tile * s + layout.pad); };
  const int y0 = layout.pad;
  const int label_y = layout.pad + tile * s + 3;

  draw_tile_gray(cv, tile_x(0), y0, slice.pixels, s);
  cv.text(tile_x(0), label_y, "INPUT", 220, 220, 220);
  draw_tile_binary(cv, tile_x(1), y0, gt.labels, s);
  cv.text(tile_x(1), label_y, "TRUTH", 220, 220, 220);
  for (size_t i = 0; i < maps.size(); ++i) {
    // maps may come at a detector-specific resolution; show them at tile size
    Grid<float> shown = maps[i].scores;
    if (shown.rows != tile) {
      Grid<float> up(tile, tile);
      for (int r = 0; r < tile; ++r)
        for (int c = 0; c < tile; ++c)
          up(r, c) = shown(static_cast<int>(static_cast<int64_t>(r) * shown.rows / tile),
                           static_cast<int>(static_cast<int64_t>(c) * shown.cols / tile));
      shown = std::move(up);
    }
    draw_tile_hot(cv, tile_x(2 + static_cast<int>(i)), y0, shown, s);
    std::string label = i < map_names.size() ? map_names[i] : maps[i].source;
    if (static_cast<int>(label.size()) * 6 > tile * s) label.resize(std::max(1, tile * s / 6));
    cv.text(tile_x(2 + static_cast<int>(i)), label_y, label, 220, 220, 220);
  }
  write_png(path, cv);
}

void roc_overlay(const std::filesystem::path& path, const std::string& title,
                 const std::vector<RocSeries>& series) {
  const int W = 640, H = 440;
  const int left = 52, right = 170, top = 34, bottom = 40;
  const int pw = W - left - right, ph = H - top - bottom;
  Canvas cv(W, H);

  cv.text(left, 12, title, 0, 0, 0);
  cv.line(left, top, left, top + ph, 0, 0, 0);
  cv.line(left, top + ph, left + pw, top + ph, 0, 0, 0);
  for (int tick = 0; tick <= 2; ++tick) {
    const double f = tick / 2.0;
    const int x = left + static_cast<int>(f * pw);
    const int y = top + ph - static_cast<int>(f * ph);
    cv.line(x, top + ph, x, top + ph + 4, 0, 0, 0);
    cv.line(left - 4, y, left, y, 0, 0, 0);
    char buf[8];
    std::snprintf(buf, sizeof buf, "%.1f", f);
    cv.text(x - 8, top + ph + 8, buf, 0, 0, 0);
    cv.text(left - 30, y - 3, buf, 0, 0, 0);
  }
  cv.text(left + pw / 2 - 9, H - 12, "FPR", 0, 0, 0);
  cv.text(8, top + ph / 2 - 3, "TPR", 0, 0, 0);

  // chance diagonal
  cv.line(left, top + ph, left + pw, top, 0, 0, 0, 4);

  for (size_t si = 0; si < series.size(); ++si) {
    const Color c = kPalette[si % (sizeof kPalette / sizeof kPalette[0])];
    const auto& s = series[si];
    int px = left, py = top + ph;
    for (size_t i = 0; i < s.fpr.size(); ++i) {
      const int x = left + static_cast<int>(s.fpr[i] * pw);
      const int y = top + ph - static_cast<int>(s.tpr[i] * ph);
      cv.line(px, py, x, y, c.r, c.g, c.b);
      px = x;
      py = y;
    }
    const int ly = top + 8 + static_cast<int>(si) * 14;
    cv.fill_rect(left + pw + 12, ly, 10, 8, c.r, c.g, c.b);
    std::string label = s.name;
    if (label.size() > 16) label.resize(16);
    cv.text(left + pw + 28, ly, label, 0, 0, 0);
  }
  write_png(path, cv);
}

}  // namespace lesionbench::render
