#include "lesionbench/slice_store.hpp"

#include <bit>
#include <fstream>

#include <json.hpp>

namespace lesionbench::store {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "slice store assumes a little-endian host");

namespace {

void write_bytes(const fs::path& p, const void* data, size_t n) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + p.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw IoError("short write: " + p.string());
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open: " + p.string());
  auto n = static_cast<size_t>(f.tellg());
  f.seekg(0);
  std::vector<char> buf(n);
  f.read(buf.data(), static_cast<std::streamsize>(n));
  if (!f) throw IoError("short read: " + p.string());
  return buf;
}

}  // namespace

fs::path store_slice(const fs::path& dir, const std::string& id, const Slice& slice,
                     const GroundTruth* gt) {
  validate_slice(slice);
  fs::create_directories(dir);

  const std::string raster = id + ".f32";
  const std::string maskf = id + ".mask.u8";
  write_bytes(dir / raster, slice.pixels.v.data(), slice.pixels.size() * sizeof(float));

  std::vector<uint8_t> mb(slice.mask.v.begin(), slice.mask.v.end());
  write_bytes(dir / maskf, mb.data(), mb.size());

  json sidecar = {
      {"shape", {slice.pixels.rows, slice.pixels.cols}},
      {"modality", to_string(slice.modality)},
      {"subject_id", slice.subject_id},
      {"slice_index", slice.slice_index},
      {"mask_file", maskf},
  };
  if (gt) {
    if (!gt->labels.same_shape(slice.pixels))
      throw ValidationError("ground truth shape differs from slice: " + id);
    const std::string gtf = id + ".gt.u8";
    write_bytes(dir / gtf, gt->labels.v.data(), gt->labels.size());
    sidecar["gt_file"] = gtf;
  }

  const fs::path sp = dir / (id + ".json");
  std::ofstream f(sp, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + sp.string());
  f << sidecar.dump(2) << "\n";
  return sp;
}

StoredSlice read_slice(const fs::path& sidecar_path) {
  json sidecar;
  try {
    std::ifstream f(sidecar_path);
    if (!f) throw IoError("cannot open: " + sidecar_path.string());
    f >> sidecar;
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt sidecar " + sidecar_path.string() + ": " + e.what());
  }

  StoredSlice out;
  try {
    const int h = sidecar.at("shape").at(0).get<int>();
    const int w = sidecar.at("shape").at(1).get<int>();
    if (h <= 0 || w <= 0) throw IntegrityError("bad shape in " + sidecar_path.string());
    out.slice.modality = parse_modality(sidecar.at("modality").get<std::string>());
    out.slice.subject_id = sidecar.at("subject_id").get<std::string>();
    out.slice.slice_index = sidecar.at("slice_index").get<int>();

    const fs::path dir = sidecar_path.parent_path();
    const fs::path raster = dir / (sidecar_path.stem().string() + ".f32");
    auto px = read_bytes(raster);
    if (px.size() != static_cast<size_t>(h) * w * sizeof(float))
      throw IntegrityError("raster size does not match sidecar shape: " + raster.string());
    out.slice.pixels = Grid<float>(h, w);
    std::memcpy(out.slice.pixels.v.data(), px.data(), px.size());

    const fs::path maskp = dir / sidecar.at("mask_file").get<std::string>();
    auto mk = read_bytes(maskp);
    if (mk.size() != static_cast<size_t>(h) * w)
      throw IntegrityError("mask size does not match sidecar shape: " + maskp.string());
    out.slice.mask = Grid<uint8_t>(h, w);
    std::memcpy(out.slice.mask.v.data(), mk.data(), mk.size());

    if (sidecar.contains("gt_file")) {
      const fs::path gtp = dir / sidecar.at("gt_file").get<std::string>();
      auto gb = read_bytes(gtp);
      if (gb.size() != static_cast<size_t>(h) * w)
        throw IntegrityError("ground truth size does not match sidecar shape: " + gtp.string());
      GroundTruth gt;
      gt.labels = Grid<uint8_t>(h, w);
      std::memcpy(gt.labels.v.data(), gb.data(), gb.size());
      out.gt = std::move(gt);
    }
  } catch (const json::exception& e) {
    throw IntegrityError("sidecar missing fields " + sidecar_path.string() + ": " + e.what());
  }
  validate_slice(out.slice);
  return out;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split: " + s);
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"subject_id", e.subject_id},
                       {"file", e.file},
                       {"modality", to_string(e.modality)},
                       {"has_ground_truth", e.has_ground_truth}});
  json doc = {{"split", to_string(m.split)},
              {"preprocessing_fingerprint", m.preprocessing_fingerprint},
              {"entries", entries}};
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << doc.dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
  json doc;
  try {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path.string());
    f >> doc;
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.split = parse_split(doc.at("split").get<std::string>());
    m.preprocessing_fingerprint = doc.value("preprocessing_fingerprint", "");
    for (const auto& e : doc.at("entries")) {
      ManifestEntry me;
      me.subject_id = e.at("subject_id").get<std::string>();
      me.file = e.at("file").get<std::string>();
      me.modality = parse_modality(e.at("modality").get<std::string>());
      me.has_ground_truth = e.at("has_ground_truth").get<bool>();
      m.entries.push_back(std::move(me));
    }
  } catch (const json::exception& e) {
    throw IntegrityError("manifest missing fields " + path.string() + ": " + e.what());
  }
  return m;
}

std::vector<StoredSlice> load_entries(const fs::path& manifest_path) {
  const DatasetManifest m = load_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  std::vector<StoredSlice> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    auto s = read_slice(dir / e.file);
    if (!m.entries.empty() && s.slice.modality != m.entries.front().modality)
      throw ValidationError("manifest mixes modalities: " + e.file);
    out.push_back(std::move(s));
  }
  return out;
}

DatasetManifest store_dataset(const fs::path& dir, Split split, const std::vector<Slice>& slices,
                              const std::vector<GroundTruth>* gts, const std::string& fingerprint) {
  if (gts && gts->size() != slices.size())
    throw ValidationError("ground truth count differs from slice count");
  DatasetManifest m;
  m.split = split;
  m.preprocessing_fingerprint = fingerprint;
  for (size_t i = 0; i < slices.size(); ++i) {
    char idbuf[64];
    std::snprintf(idbuf, sizeof idbuf, "%s_%04d_%03d", slices[i].subject_id.c_str(),
                  static_cast<int>(i), slices[i].slice_index);
    const GroundTruth* gt = gts ? &(*gts)[i] : nullptr;
    store_slice(dir, idbuf, slices[i], gt);
    m.entries.push_back({slices[i].subject_id, std::string(idbuf) + ".json", slices[i].modality,
                         gt != nullptr});
  }
  save_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace lesionbench::store
