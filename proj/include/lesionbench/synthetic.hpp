#pragma once

#include <array>
#include <utility>
#include <vector>

#include "lesionbench/slice.hpp"

namespace lesionbench::synth {

/// Per-modality means of the three tissue regions (outer, middle, inner).
/// These are the components the GMM baseline is expected to recover.
std::array<float, 3> component_means(Modality m);

struct LabeledSlice {
  Slice slice;
  Grid<uint8_t> regions;  // 0 = background, 1..3 = tissue region
};

/// Procedural pseudo-anatomy: deformed elliptical brain with three nested
/// intensity regions, a per-subject smooth intensity field and fine noise.
/// Bit-deterministic in (seed, n, size, modality).
std::vector<LabeledSlice> generate_healthy_labeled(uint64_t seed, int n, int size, Modality modality);

std::vector<Slice> generate_healthy(uint64_t seed, int n, int size, Modality modality);

/// Adds `spec.count` soft-edged disks inside the mask. Ground truth marks
/// pixels where the soft profile exceeds 0.5; pixels outside the mask are
/// never touched.
std::pair<Slice, GroundTruth> inject_lesion(const Slice& slice, const LesionSpec& spec, uint64_t seed);

}  // namespace lesionbench::synth
