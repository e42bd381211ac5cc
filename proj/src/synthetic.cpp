#include "lesionbench/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace lesionbench::synth {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// Low-order angular modulation of a region boundary; per-subject deformation.
struct BoundaryModes {
  std::array<double, 3> amp{};    // harmonics k = 2, 3, 4
  std::array<double, 3> phase{};

  double at(double theta) const {
    double m = 0.0;
    for (int k = 0; k < 3; ++k) m += amp[k] * std::cos((k + 2) * theta + phase[k]);
    return m;
  }
};

BoundaryModes draw_modes(Pcg32& rng, double max_amp) {
  BoundaryModes b;
  for (int k = 0; k < 3; ++k) {
    b.amp[k] = rng.uniform(0.0, max_amp);
    b.phase[k] = rng.uniform(0.0, kTwoPi);
  }
  return b;
}

struct SmoothField {
  std::array<double, 4> amp{}, fx{}, fy{}, phase{};

  double at(double ux, double uy) const {
    double s = 0.0;
    for (int j = 0; j < 4; ++j)
      s += amp[j] * std::cos(kTwoPi * (fx[j] * ux + fy[j] * uy) + phase[j]);
    return s;
  }
};

constexpr double kJitterStd = 0.05;   // per-slice spread of each region mean
constexpr double kPixelNoise = 0.03;  // fine additive noise

}  // namespace

std::array<float, 3> component_means(Modality m) {
  // outer tissue, middle ring, inner core
  if (m == Modality::T2like) return {1.0f, 1.9f, 3.0f};  // fluid-like core brightest
  return {3.0f, 2.1f, 1.0f};                             // T1-like: core darkest
}

std::vector<LabeledSlice> generate_healthy_labeled(uint64_t seed, int n, int size,
                                                   Modality modality) {
  if (size != 32 && size != 64 && size != 128 && size != 256)
    throw ConfigError("unsupported synthetic image size " + std::to_string(size));
  if (n < 1) throw ConfigError("synthetic slice count must be >= 1");

  const auto means = component_means(modality);
  std::vector<LabeledSlice> out;
  out.reserve(n);

  for (int i = 0; i < n; ++i) {
    Pcg32 rng(seed, 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(i));

    const double scale = rng.uniform(0.92, 1.05);
    const double cx = size * (0.5 + rng.uniform(-0.02, 0.02));
    const double cy = size * (0.5 + rng.uniform(-0.02, 0.02));
    const double rot = rng.uniform(-0.3, 0.3);
    const double ax = 0.38 * size * scale;
    const double ay = 0.44 * size * scale;

    const BoundaryModes brain = draw_modes(rng, 0.03);
    const BoundaryModes mid = draw_modes(rng, 0.05);
    const BoundaryModes core = draw_modes(rng, 0.05);

    std::array<double, 3> region_mean{};
    for (int r = 0; r < 3; ++r) region_mean[r] = means[r] + kJitterStd * rng.normal();

    SmoothField field;
    for (int j = 0; j < 4; ++j) {
      field.amp[j] = rng.uniform(0.0, 0.05);
      field.fx[j] = rng.uniform(0.5, 2.5);
      field.fy[j] = rng.uniform(0.5, 2.5);
      field.phase[j] = rng.uniform(0.0, kTwoPi);
    }

    LabeledSlice ls;
    ls.slice.pixels = Grid<float>(size, size, 0.f);
    ls.slice.mask = Grid<uint8_t>(size, size, 0);
    ls.regions = Grid<uint8_t>(size, size, 0);
    ls.slice.modality = modality;
    char buf[32];
    std::snprintf(buf, sizeof buf, "syn%06d", i);
    ls.slice.subject_id = buf;
    ls.slice.slice_index = 0;

    const double cr = std::cos(rot), sr = std::sin(rot);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const double noise = kPixelNoise * rng.normal();  // drawn for every pixel: keeps the
                                                          // stream independent of geometry
        const double dx = (c + 0.5) - cx;
        const double dy = (r + 0.5) - cy;
        const double ex = (cr * dx + sr * dy) / ax;
        const double ey = (-sr * dx + cr * dy) / ay;
        const double rho = std::sqrt(ex * ex + ey * ey);
        const double theta = std::atan2(ey, ex);
        if (rho > 1.0 + brain.at(theta)) continue;

        int region;
        if (rho <= 0.28 * (1.0 + core.at(theta)))
          region = 3;
        else if (rho <= 0.55 * (1.0 + mid.at(theta)))
          region = 2;
        else
          region = 1;

        const double val =
            region_mean[region - 1] + field.at((c + 0.5) / size, (r + 0.5) / size) + noise;
        ls.slice.pixels(r, c) = static_cast<float>(val);
        ls.slice.mask(r, c) = 1;
        ls.regions(r, c) = static_cast<uint8_t>(region);
      }
    }
    validate_slice(ls.slice);
    out.push_back(std::move(ls));
  }
  return out;
}

std::vector<Slice> generate_healthy(uint64_t seed, int n, int size, Modality modality) {
  auto labeled = generate_healthy_labeled(seed, n, size, modality);
  std::vector<Slice> out;
  out.reserve(labeled.size());
  for (auto& ls : labeled) out.push_back(std::move(ls.slice));
  return out;
}

std::pair<Slice, GroundTruth> inject_lesion(const Slice& slice, const LesionSpec& spec,
                                            uint64_t seed) {
  validate_slice(slice);
  validate_lesion_spec(spec);

  const int h = slice.pixels.rows, w = slice.pixels.cols;
  Slice out = slice;
  GroundTruth gt;
  gt.labels = Grid<uint8_t>(h, w, 0);

  Pcg32 rng(seed, 0xa02bdbf7bb3c0a7ULL);
  const int radius = spec.radius_px;
  const double ramp = std::max(static_cast<double>(spec.softness) * radius, 1e-6);

  for (int lesion = 0; lesion < spec.count; ++lesion) {
    int cr = -1, cc = -1;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      cr = static_cast<int>(rng.next_below(static_cast<uint32_t>(h)));
      cc = static_cast<int>(rng.next_below(static_cast<uint32_t>(w)));
      if (!slice.mask(cr, cc)) continue;
      placed = true;
      for (int r = std::max(0, cr - radius); r <= std::min(h - 1, cr + radius) && placed; ++r) {
        for (int c = std::max(0, cc - radius); c <= std::min(w - 1, cc + radius); ++c) {
          const double d = std::hypot(r - cr, c - cc);
          if (d < radius && !slice.mask(r, c)) {
            placed = false;
            break;
          }
        }
      }
      // the whole footprint must also fit inside the image
      if (placed && (cr - radius < 0 || cr + radius >= h || cc - radius < 0 || cc + radius >= w))
        placed = false;
    }
    if (!placed)
      throw PlacementError("could not place lesion of radius " + std::to_string(radius) +
                           " inside the mask after 1000 attempts");

    for (int r = cr - radius; r <= cr + radius; ++r) {
      for (int c = cc - radius; c <= cc + radius; ++c) {
        const double d = std::hypot(r - cr, c - cc);
        const double profile = std::clamp((radius - d) / ramp, 0.0, 1.0);
        if (profile <= 0.0) continue;
        out.pixels(r, c) += static_cast<float>(spec.intensity_offset * profile);
        if (profile > 0.5) gt.labels(r, c) = 1;
      }
    }
  }
  return {std::move(out), std::move(gt)};
}

}  // namespace lesionbench::synth
