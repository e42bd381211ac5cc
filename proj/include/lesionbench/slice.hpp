#pragma once

#include <array>
#include <string>
#include <vector>

#include "lesionbench/common.hpp"

namespace lesionbench {

enum class Modality { T1like, T2like };

inline const char* to_string(Modality m) { return m == Modality::T1like ? "T1like" : "T2like"; }

inline Modality parse_modality(const std::string& s) {
  if (s == "T1like") return Modality::T1like;
  if (s == "T2like") return Modality::T2like;
  throw ConfigError("unknown modality: " + s);
}

/// One 2D image plus its brain mask. Everything downstream consumes slices.
struct Slice {
  Grid<float> pixels;
  Grid<uint8_t> mask;  // 1 = inside brain
  Modality modality = Modality::T2like;
  std::string subject_id;
  int slice_index = 0;
};

struct GroundTruth {
  Grid<uint8_t> labels;  // 1 = abnormal pixel
};

/// Ordered axial slices of one scan; affine is the 3x4 voxel-to-world map.
struct Volume {
  std::vector<Slice> slices;
  std::array<double, 12> affine{};
};

struct LesionSpec {
  enum class Polarity { bright, dark };
  Polarity polarity = Polarity::bright;
  int radius_px = 5;
  float intensity_offset = 2.5f;  // signed to match polarity
  float softness = 0.4f;          // edge ramp as a fraction of the radius
  int count = 1;
};

inline int mask_population(const Slice& s) {
  int n = 0;
  for (uint8_t m : s.mask.v) n += (m != 0);
  return n;
}

inline void validate_slice(const Slice& s) {
  if (!s.pixels.same_shape(s.mask))
    throw ValidationError("slice pixels and mask shapes differ for subject " + s.subject_id);
  if (s.pixels.rows <= 0 || s.pixels.cols <= 0)
    throw ValidationError("slice has empty shape");
  if (mask_population(s) < 1)
    throw ValidationError("slice mask has no true pixels (subject " + s.subject_id + ")");
  for (float p : s.pixels.v)
    if (!std::isfinite(p)) throw ValidationError("slice contains non-finite pixels");
}

inline void validate_lesion_spec(const LesionSpec& spec) {
  if (spec.radius_px <= 0) throw ValidationError("lesion radius must be > 0");
  if (spec.count < 1) throw ValidationError("lesion count must be >= 1");
  if (spec.softness < 0.f || spec.softness > 1.f)
    throw ValidationError("lesion softness must lie in [0, 1]");
  if (spec.polarity == LesionSpec::Polarity::bright && !(spec.intensity_offset > 0.f) &&
      spec.intensity_offset != 0.f)
    throw ValidationError("bright lesion requires positive intensity offset");
  if (spec.polarity == LesionSpec::Polarity::dark && !(spec.intensity_offset < 0.f) &&
      spec.intensity_offset != 0.f)
    throw ValidationError("dark lesion requires negative intensity offset");
}

}  // namespace lesionbench
