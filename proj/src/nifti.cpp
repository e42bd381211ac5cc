#include "lesionbench/nifti.hpp"

#include <cstring>
#include <vector>

#include <zlib.h>

namespace lesionbench::nifti {

namespace {

// NIfTI-1 datatype codes we accept.
enum : int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
  DT_UINT16 = 512,
};

struct Header {
  int nx = 0, ny = 0, nz = 0;
  int16_t datatype = 0;
  float scl_slope = 0.f, scl_inter = 0.f;
  float vox_offset = 0.f;
  std::array<double, 12> affine{};
};

// gzread handles both gzip and plain streams, so one path covers .nii and .nii.gz.
std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open volume: " + path.string());
  std::vector<unsigned char> buf;
  unsigned char chunk[1 << 16];
  int n;
  while ((n = gzread(f, chunk, sizeof chunk)) > 0) buf.insert(buf.end(), chunk, chunk + n);
  bool bad = n < 0;
  gzclose(f);
  if (bad) throw IoError("decompression failed: " + path.string());
  return buf;
}

template <typename T>
T at(const std::vector<unsigned char>& b, size_t off) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  return v;
}

Header parse_header(const std::vector<unsigned char>& raw, const std::filesystem::path& path) {
  if (raw.size() < 352) throw IoError("file too short for a NIfTI-1 header: " + path.string());
  if (at<int32_t>(raw, 0) != 348)
    throw IoError("not a little-endian NIfTI-1 file (sizeof_hdr != 348): " + path.string());
  const char* magic = reinterpret_cast<const char*>(raw.data() + 344);
  if (std::strncmp(magic, "n+1", 3) != 0)
    throw IoError("only single-file NIfTI (magic n+1) is supported: " + path.string());

  Header h;
  const int16_t ndim = at<int16_t>(raw, 40);
  if (ndim < 3) throw IoError("volume must be 3D: " + path.string());
  h.nx = at<int16_t>(raw, 42);
  h.ny = at<int16_t>(raw, 44);
  h.nz = at<int16_t>(raw, 46);
  for (int d = 4; d <= ndim; ++d)
    if (at<int16_t>(raw, 40 + 2 * d) > 1)
      throw IoError("4D+ volumes are not supported: " + path.string());
  if (h.nx <= 0 || h.ny <= 0 || h.nz <= 0) throw IoError("bad dimensions: " + path.string());

  h.datatype = at<int16_t>(raw, 70);
  h.scl_slope = at<float>(raw, 112);
  h.scl_inter = at<float>(raw, 116);
  h.vox_offset = at<float>(raw, 108);

  const int16_t sform = at<int16_t>(raw, 254);
  if (sform > 0) {
    for (int i = 0; i < 4; ++i) {
      h.affine[i] = at<float>(raw, 280 + 4 * i);       // srow_x
      h.affine[4 + i] = at<float>(raw, 296 + 4 * i);   // srow_y
      h.affine[8 + i] = at<float>(raw, 312 + 4 * i);   // srow_z
    }
  } else {
    h.affine[0] = at<float>(raw, 80);   // pixdim[1]
    h.affine[5] = at<float>(raw, 84);   // pixdim[2]
    h.affine[10] = at<float>(raw, 88);  // pixdim[3]
  }
  return h;
}

size_t dtype_size(int16_t dt, const std::filesystem::path& path) {
  switch (dt) {
    case DT_UINT8: return 1;
    case DT_INT16: case DT_UINT16: return 2;
    case DT_INT32: case DT_FLOAT32: return 4;
    case DT_FLOAT64: return 8;
    default:
      throw IoError("unsupported NIfTI datatype " + std::to_string(dt) + ": " + path.string());
  }
}

double voxel(const std::vector<unsigned char>& raw, size_t base, size_t idx, int16_t dt) {
  switch (dt) {
    case DT_UINT8: return at<uint8_t>(raw, base + idx);
    case DT_INT16: return at<int16_t>(raw, base + idx * 2);
    case DT_UINT16: return at<uint16_t>(raw, base + idx * 2);
    case DT_INT32: return at<int32_t>(raw, base + idx * 4);
    case DT_FLOAT32: return at<float>(raw, base + idx * 4);
    default: return at<double>(raw, base + idx * 8);
  }
}

std::vector<Grid<float>> load_planes(const std::filesystem::path& path, Header* hdr_out) {
  auto raw = read_all(path);
  Header h = parse_header(raw, path);

  const size_t base = static_cast<size_t>(h.vox_offset);
  const size_t nvox = static_cast<size_t>(h.nx) * h.ny * h.nz;
  if (raw.size() < base + nvox * dtype_size(h.datatype, path))
    throw IoError("truncated voxel data: " + path.string());

  const double slope = (h.scl_slope == 0.f) ? 1.0 : h.scl_slope;
  const double inter = (h.scl_slope == 0.f) ? 0.0 : h.scl_inter;

  std::vector<Grid<float>> planes;
  planes.reserve(h.nz);
  for (int k = 0; k < h.nz; ++k) {
    Grid<float> g(h.ny, h.nx);
    for (int y = 0; y < h.ny; ++y)
      for (int x = 0; x < h.nx; ++x) {
        const size_t idx = static_cast<size_t>(k) * h.nx * h.ny + static_cast<size_t>(y) * h.nx + x;
        g(y, x) = static_cast<float>(voxel(raw, base, idx, h.datatype) * slope + inter);
      }
    planes.push_back(std::move(g));
  }
  if (hdr_out) *hdr_out = h;
  return planes;
}

}  // namespace

Volume load_volume(const std::filesystem::path& path, Modality modality,
                   const std::optional<std::filesystem::path>& mask_path) {
  Header h;
  auto planes = load_planes(path, &h);

  std::vector<Grid<float>> mask_planes;
  if (mask_path) {
    Header mh;
    mask_planes = load_planes(*mask_path, &mh);
    if (mh.nx != h.nx || mh.ny != h.ny || mh.nz != h.nz)
      throw ValidationError("mask dimensions differ from volume: " + mask_path->string());
  }

  Volume vol;
  vol.affine = h.affine;
  const std::string subject = path.stem().stem().string();  // strips .nii and .gz
  for (size_t k = 0; k < planes.size(); ++k) {
    Slice s;
    s.pixels = std::move(planes[k]);
    s.mask = Grid<uint8_t>(s.pixels.rows, s.pixels.cols, 0);
    if (mask_path) {
      const auto& mp = mask_planes[k];
      for (size_t i = 0; i < mp.v.size(); ++i) s.mask.v[i] = mp.v[i] != 0.f;
    } else {
      for (size_t i = 0; i < s.pixels.v.size(); ++i) s.mask.v[i] = s.pixels.v[i] != 0.f;
    }
    s.modality = modality;
    s.subject_id = subject;
    s.slice_index = static_cast<int>(k);
    for (float p : s.pixels.v)
      if (!std::isfinite(p)) throw ValidationError("non-finite voxels in " + path.string());
    vol.slices.push_back(std::move(s));
  }
  return vol;
}

}  // namespace lesionbench::nifti
