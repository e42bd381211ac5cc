#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <numeric>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "lesionbench/nifti.hpp"
#include "lesionbench/slice_store.hpp"
#include "lesionbench/synthetic.hpp"

using namespace lesionbench;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("lesionbench_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Slice random_slice(Pcg32& rng, int size = 16) {
  Slice s;
  s.pixels = Grid<float>(size, size);
  s.mask = Grid<uint8_t>(size, size, 0);
  for (int r = 2; r < size - 2; ++r)
    for (int c = 2; c < size - 2; ++c) s.mask(r, c) = 1;
  for (auto& p : s.pixels.v) p = static_cast<float>(rng.normal());
  s.subject_id = "rs";
  s.modality = Modality::T2like;
  return s;
}

// Independent 1D EM oracle for the recoverability check; deliberately not the
// production fitter.
struct Oracle1dEm {
  std::vector<double> means, stds, weights;

  void fit(const std::vector<float>& data, int k, int iters) {
    const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
    means.resize(k);
    stds.assign(k, 0.5);
    weights.assign(k, 1.0 / k);
    // evenly spaced over the data range so imbalanced modes each get a seed
    for (int i = 0; i < k; ++i) means[i] = *lo + (*hi - *lo) * (2 * i + 1) / (2.0 * k);
    std::vector<double> r(data.size() * k);
    for (int it = 0; it < iters; ++it) {
      for (size_t j = 0; j < data.size(); ++j) {
        double z = 0;
        for (int i = 0; i < k; ++i) {
          const double d = (data[j] - means[i]) / stds[i];
          r[j * k + i] = weights[i] / stds[i] * std::exp(-0.5 * d * d);
          z += r[j * k + i];
        }
        for (int i = 0; i < k; ++i) r[j * k + i] /= std::max(z, 1e-300);
      }
      for (int i = 0; i < k; ++i) {
        double nk = 0, mk = 0;
        for (size_t j = 0; j < data.size(); ++j) {
          nk += r[j * k + i];
          mk += r[j * k + i] * data[j];
        }
        means[i] = mk / std::max(nk, 1e-12);
        double vk = 0;
        for (size_t j = 0; j < data.size(); ++j)
          vk += r[j * k + i] * (data[j] - means[i]) * (data[j] - means[i]);
        stds[i] = std::max(std::sqrt(vk / std::max(nk, 1e-12)), 1e-3);
        weights[i] = nk / data.size();
      }
    }
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return means[a] < means[b]; });
    std::vector<double> m2, s2, w2;
    for (int i : order) {
      m2.push_back(means[i]);
      s2.push_back(stds[i]);
      w2.push_back(weights[i]);
    }
    means = m2;
    stds = s2;
    weights = w2;
  }
};

// minimal NIfTI-1 writer for ingestion tests
void write_nifti(const fs::path& path, int nx, int ny, int nz, const std::vector<float>& vox,
                 bool gzipped = false) {
  std::vector<unsigned char> buf(352, 0);
  auto put32 = [&](size_t off, int32_t v) { std::memcpy(buf.data() + off, &v, 4); };
  auto put16 = [&](size_t off, int16_t v) { std::memcpy(buf.data() + off, &v, 2); };
  auto putf = [&](size_t off, float v) { std::memcpy(buf.data() + off, &v, 4); };
  put32(0, 348);
  put16(40, 3);
  put16(42, static_cast<int16_t>(nx));
  put16(44, static_cast<int16_t>(ny));
  put16(46, static_cast<int16_t>(nz));
  put16(70, 16);  // float32
  put16(72, 32);
  putf(76 + 4, 1.f);
  putf(76 + 8, 1.f);
  putf(76 + 12, 1.f);
  putf(108, 352.f);
  std::memcpy(buf.data() + 344, "n+1", 4);
  buf.insert(buf.end(), reinterpret_cast<const unsigned char*>(vox.data()),
             reinterpret_cast<const unsigned char*>(vox.data()) + vox.size() * 4);
  if (gzipped) {
    gzFile f = gzopen(path.string().c_str(), "wb");
    REQUIRE(f != nullptr);
    gzwrite(f, buf.data(), static_cast<unsigned>(buf.size()));
    gzclose(f);
  } else {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
}

}  // namespace

TEST_CASE("generator is bit-deterministic in (seed, n, size, modality)") {
  auto a = synth::generate_healthy(7, 5, 64, Modality::T2like);
  auto b = synth::generate_healthy(7, 5, 64, Modality::T2like);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels == b[i].pixels);
    CHECK(a[i].mask == b[i].mask);
  }
  auto c = synth::generate_healthy(8, 5, 64, Modality::T2like);
  CHECK_FALSE(a[0].pixels == c[0].pixels);
}

TEST_CASE("generator rejects unsupported sizes") {
  CHECK_THROWS_AS(synth::generate_healthy(1, 1, 48, Modality::T2like), ConfigError);
  CHECK_THROWS_AS(synth::generate_healthy(1, 0, 64, Modality::T2like), ConfigError);
}

TEST_CASE("mask fraction stays within the documented bounds") {
  // measured on the reference run (seed 11, 300 slices, 64px): [0.408, 0.593]
  auto slices = synth::generate_healthy(11, 300, 64, Modality::T2like);
  double lo = 1.0, hi = 0.0;
  for (const auto& s : slices) {
    const double frac = static_cast<double>(mask_population(s)) / (64.0 * 64.0);
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
  }
  CHECK(lo >= 0.3);
  CHECK(hi <= 0.8);
  CHECK(lo >= 0.38);  // measured bound with margin
  CHECK(hi <= 0.62);
}

TEST_CASE("per-region intensities match the configured component means") {
  const auto means = synth::component_means(Modality::T2like);
  auto labeled = synth::generate_healthy_labeled(3, 1000, 32, Modality::T2like);
  std::array<double, 3> sum{}, count{};
  for (const auto& ls : labeled)
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        const int region = ls.regions(r, c);
        if (region == 0) continue;
        sum[region - 1] += ls.slice.pixels(r, c);
        count[region - 1] += 1;
      }
  for (int k = 0; k < 3; ++k) {
    REQUIRE(count[k] > 0);
    CHECK(std::fabs(sum[k] / count[k] - means[k]) < 0.1);
  }
}

TEST_CASE("pooled intensities are recoverable by an independent 1D mixture oracle") {
  const auto means = synth::component_means(Modality::T2like);
  auto slices = synth::generate_healthy(5, 1000, 32, Modality::T2like);
  std::vector<float> pool;
  for (const auto& s : slices)
    for (size_t i = 0; i < s.pixels.v.size(); ++i)
      if (s.mask.v[i]) pool.push_back(s.pixels.v[i]);
  // thin the pool to keep the oracle quick; the distribution is unchanged
  std::vector<float> thin;
  for (size_t i = 0; i < pool.size(); i += 4) thin.push_back(pool[i]);
  Oracle1dEm em;
  em.fit(thin, 3, 60);
  for (int k = 0; k < 3; ++k) CHECK(std::fabs(em.means[k] - means[k]) < 0.1);
}

TEST_CASE("lesion injection contracts") {
  auto slices = synth::generate_healthy(21, 4, 64, Modality::T2like);

  SUBCASE("zero offset leaves pixels untouched but still marks geometry") {
    LesionSpec spec;
    spec.intensity_offset = 0.f;
    auto [lesioned, gt] = synth::inject_lesion(slices[0], spec, 99);
    CHECK(lesioned.pixels == slices[0].pixels);
    int marked = 0;
    for (auto b : gt.labels.v) marked += b;
    CHECK(marked > 0);
  }

  SUBCASE("bright lesion raises the mean inside the ground truth") {
    LesionSpec spec;
    spec.intensity_offset = 2.0f;
    auto [lesioned, gt] = synth::inject_lesion(slices[1], spec, 7);
    double before = 0, after = 0;
    int n = 0;
    for (size_t i = 0; i < gt.labels.v.size(); ++i)
      if (gt.labels.v[i]) {
        before += slices[1].pixels.v[i];
        after += lesioned.pixels.v[i];
        ++n;
      }
    REQUIRE(n > 0);
    CHECK(after / n > before / n);
  }

  SUBCASE("ground-truth area tracks pi r^2 at the 0.5 profile threshold") {
    LesionSpec spec;
    spec.radius_px = 5;
    spec.count = 1;
    auto [lesioned, gt] = synth::inject_lesion(slices[2], spec, 3);
    int area = 0;
    for (auto b : gt.labels.v) area += b;
    const double disk = 3.14159265 * 25.0;
    CHECK(area >= 0.5 * disk);
    CHECK(area <= 1.5 * disk);
  }

  SUBCASE("lesions stay inside the mask") {
    LesionSpec spec;
    spec.count = 3;
    spec.radius_px = 4;
    for (int i = 0; i < 4; ++i) {
      auto [lesioned, gt] = synth::inject_lesion(slices[i], spec, 1000 + i);
      for (size_t p = 0; p < gt.labels.v.size(); ++p)
        if (gt.labels.v[p]) CHECK(slices[i].mask.v[p] == 1);
    }
  }

  SUBCASE("impossible placement raises a placement error") {
    LesionSpec spec;
    spec.radius_px = 40;  // cannot fit inside a 64px brain
    CHECK_THROWS_AS(synth::inject_lesion(slices[0], spec, 1), PlacementError);
  }
}

TEST_CASE("slice store round-trips bit-exactly") {
  auto dir = temp_dir("store");
  Pcg32 rng(123);
  for (int i = 0; i < 100; ++i) {
    Slice s = random_slice(rng);
    s.slice_index = i;
    auto sidecar = store::store_slice(dir, "s" + std::to_string(i), s);
    auto loaded = store::read_slice(sidecar);
    CHECK(loaded.slice.pixels == s.pixels);
    CHECK(loaded.slice.mask == s.mask);
    CHECK(loaded.slice.subject_id == s.subject_id);
    CHECK(loaded.slice.slice_index == s.slice_index);
    CHECK(loaded.slice.modality == s.modality);
  }
}

TEST_CASE("slice store integrity checks") {
  auto dir = temp_dir("store_bad");
  Pcg32 rng(5);
  Slice s = random_slice(rng);
  auto sidecar = store::store_slice(dir, "bad", s);

  SUBCASE("raster size mismatch") {
    std::ofstream f(dir / "bad.f32", std::ios::binary | std::ios::trunc);
    f << "too-short";
    f.close();
    CHECK_THROWS_AS(store::read_slice(sidecar), IntegrityError);
  }
  SUBCASE("corrupt sidecar") {
    std::ofstream f(sidecar, std::ios::trunc);
    f << "{not json";
    f.close();
    CHECK_THROWS_AS(store::read_slice(sidecar), IntegrityError);
  }
}

TEST_CASE("manifest over stored slices resolves and loads") {
  auto dir = temp_dir("manifest");
  Pcg32 rng(9);
  std::vector<Slice> slices;
  for (int i = 0; i < 10; ++i) {
    Slice s = random_slice(rng);
    s.subject_id = "subj" + std::to_string(i);
    slices.push_back(std::move(s));
  }
  auto manifest = store::store_dataset(dir, store::Split::train, slices);
  CHECK(manifest.entries.size() == 10);
  auto loaded = store::load_entries(dir / "manifest.json");
  REQUIRE(loaded.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(loaded[i].slice.pixels == slices[i].pixels);

  auto reloaded = store::load_manifest(dir / "manifest.json");
  CHECK(reloaded.split == store::Split::train);
  CHECK(reloaded.entries.size() == 10);
}

TEST_CASE("nifti ingestion") {
  auto dir = temp_dir("nifti");
  const int nx = 6, ny = 5, nz = 4;
  std::vector<float> vox(nx * ny * nz, 0.f);
  // voxel (x,y,k) = 100k + 10y + x, zero at x==0 to exercise the mask default
  for (int k = 0; k < nz; ++k)
    for (int y = 0; y < ny; ++y)
      for (int x = 1; x < nx; ++x)
        vox[k * nx * ny + y * nx + x] = static_cast<float>(100 * k + 10 * y + x);

  SUBCASE("volume with explicit mask file") {
    write_nifti(dir / "vol.nii", nx, ny, nz, vox);
    std::vector<float> maskvox(nx * ny * nz, 0.f);
    for (int k = 0; k < nz; ++k) maskvox[k * nx * ny + 2 * nx + 3] = 1.f;
    write_nifti(dir / "mask.nii", nx, ny, nz, maskvox);
    auto vol = nifti::load_volume(dir / "vol.nii", Modality::T2like, dir / "mask.nii");
    REQUIRE(vol.slices.size() == 4);
    for (int k = 0; k < nz; ++k) {
      CHECK(vol.slices[k].pixels(2, 3) == doctest::Approx(100 * k + 23));
      CHECK(mask_population(vol.slices[k]) == 1);
      CHECK(vol.slices[k].mask(2, 3) == 1);
    }
  }

  SUBCASE("mask defaults to nonzero support") {
    write_nifti(dir / "vol2.nii", nx, ny, nz, vox);
    auto vol = nifti::load_volume(dir / "vol2.nii", Modality::T1like);
    REQUIRE(vol.slices.size() == 4);
    CHECK(vol.slices[1].mask(0, 0) == 0);
    CHECK(vol.slices[1].mask(0, 1) == 1);
  }

  SUBCASE("gzipped volume reads identically") {
    write_nifti(dir / "vol3.nii.gz", nx, ny, nz, vox, true);
    auto vol = nifti::load_volume(dir / "vol3.nii.gz", Modality::T2like);
    REQUIRE(vol.slices.size() == 4);
    CHECK(vol.slices[3].pixels(4, 5) == doctest::Approx(300 + 45));
  }

  SUBCASE("shape mismatch between volume and mask") {
    write_nifti(dir / "vol4.nii", nx, ny, nz, vox);
    std::vector<float> short_mask(nx * ny * (nz - 1), 1.f);
    write_nifti(dir / "mask4.nii", nx, ny, nz - 1, short_mask);
    CHECK_THROWS_AS(nifti::load_volume(dir / "vol4.nii", Modality::T2like, dir / "mask4.nii"),
                    ValidationError);
  }

  SUBCASE("unreadable path raises an ingestion error") {
    CHECK_THROWS_AS(nifti::load_volume(dir / "missing.nii", Modality::T2like), IoError);
  }
}
