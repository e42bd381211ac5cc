#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lesionbench/slice.hpp"

namespace lesionbench::store {

/// On-disk layout per slice id:
///   <id>.f32      little-endian float32 raster, row-major
///   <id>.mask.u8  one byte per pixel, 0/1
///   <id>.gt.u8    optional ground-truth raster, 0/1
///   <id>.json     sidecar {shape:[h,w], modality, subject_id, slice_index, mask_file[, gt_file]}
/// Returns the sidecar path.
std::filesystem::path store_slice(const std::filesystem::path& dir, const std::string& id,
                                  const Slice& slice, const GroundTruth* gt = nullptr);

struct StoredSlice {
  Slice slice;
  std::optional<GroundTruth> gt;
};

StoredSlice read_slice(const std::filesystem::path& sidecar_path);

enum class Split { train, val, test };
const char* to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string subject_id;
  std::string file;  // sidecar path, relative to the manifest
  Modality modality = Modality::T2like;
  bool has_ground_truth = false;
};

struct DatasetManifest {
  Split split = Split::train;
  std::string preprocessing_fingerprint;  // empty until preprocessed
  std::vector<ManifestEntry> entries;
};

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Loads every entry; throws IoError if a reference does not resolve and
/// ValidationError if entries mix modalities.
std::vector<StoredSlice> load_entries(const std::filesystem::path& manifest_path);

/// Convenience: store a whole set of slices and write a manifest next to them.
DatasetManifest store_dataset(const std::filesystem::path& dir, Split split,
                              const std::vector<Slice>& slices,
                              const std::vector<GroundTruth>* gts = nullptr,
                              const std::string& fingerprint = "");

}  // namespace lesionbench::store
