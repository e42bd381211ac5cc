#pragma once

#include <filesystem>
#include <optional>

#include "lesionbench/slice.hpp"

namespace lesionbench::nifti {

/// Reads a NIfTI-1 volume (.nii or .nii.gz) into axial slices, ordered by
/// the third voxel dimension. When no mask volume is supplied, each slice
/// mask defaults to its nonzero-intensity support. Voxels are mapped
/// through scl_slope/scl_inter when set.
Volume load_volume(const std::filesystem::path& path, Modality modality,
                   const std::optional<std::filesystem::path>& mask_path = std::nullopt);

}  // namespace lesionbench::nifti
