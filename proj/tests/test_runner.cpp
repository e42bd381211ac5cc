#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "lesionbench/runner.hpp"
#include "lesionbench/slice_store.hpp"

using namespace lesionbench;
using namespace lesionbench::runner;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("lesionbench_runner_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_config(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc);
  f << body;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

const char* kSmallConfig = R"({
  "name": "small",
  "seed": 77,
  "threads": 2,
  "plot_slices": 3,
  "preprocess": {"target_size": 32, "min_mask_pixels": 1},
  "tasks": [
    {"name": "toy-bright",
     "synthetic": {"modality": "T2like", "image_size": 32,
                   "train_count": 40, "val_count": 6, "test_count": 6,
                   "supervised_train_count": 0,
                   "lesion": {"polarity": "bright", "radius_px": 4,
                              "intensity_offset": 3.0, "softness": 0.4, "count": 1}}}
  ],
  "detectors": [
    {"name": "mean", "kind": "mean"},
    {"name": "GMM-0.01", "kind": "gmm", "lambda_out": 0.01, "components": 3}
  ]
})";

}  // namespace

TEST_CASE("config loading, seed override and canonical form") {
  auto dir = temp_dir("config");
  write_config(dir / "c.json", kSmallConfig);
  auto cfg = ExperimentConfig::load(dir / "c.json");
  CHECK(cfg.seed == 77);
  CHECK(cfg.tasks.size() == 1);
  CHECK(cfg.detectors.size() == 2);
  CHECK(cfg.detectors[0].train.threads == 2);
  // detector seeds are derived from the experiment seed and the name
  CHECK(cfg.detectors[0].train.seed != cfg.detectors[1].train.seed);

  auto cfg2 = ExperimentConfig::load(dir / "c.json", 99);
  CHECK(cfg2.seed == 99);
  CHECK(cfg2.detectors[0].train.seed != cfg.detectors[0].train.seed);

  CHECK(cfg.canonical() == ExperimentConfig::load(dir / "c.json").canonical());
  CHECK(cfg.canonical() != cfg2.canonical());

  CHECK_THROWS_AS(ExperimentConfig::load(dir / "missing.json"), IoError);
  write_config(dir / "broken.json", "{\"name\": }");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "broken.json"), ConfigError);
  write_config(dir / "empty.json", "{\"tasks\": []}");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "empty.json"), ConfigError);
}

TEST_CASE("end-to-end run with closed-form detectors") {
  auto dir = temp_dir("run");
  write_config(dir / "c.json", kSmallConfig);
  auto cfg = ExperimentConfig::load(dir / "c.json");
  auto out = dir / "out";

  auto rep = run(cfg, out);
  CHECK_FALSE(rep.any_failure);
  REQUIRE(rep.rows.size() == 2);
  for (const auto& r : rep.rows) {
    CHECK_FALSE(r.failed);
    CHECK(r.auc > 0.0);
    CHECK(r.auc <= 1.0);
    CHECK(r.mdsc >= 0.0);
  }

  SUBCASE("metrics files and roc csvs exist") {
    CHECK(fs::exists(out / "metrics.csv"));
    CHECK(fs::exists(out / "metrics.json"));
    CHECK(fs::exists(out / "roc" / "toy-bright_mean.csv"));
    CHECK(fs::exists(out / "roc" / "toy-bright_GMM-0.01.csv"));
    const std::string csv = read_file(out / "metrics.csv");
    CHECK(csv.find("detector,dataset,auc,mdsc,t_star") == 0);
    CHECK(csv.find("mean,toy-bright") != std::string::npos);
  }

  SUBCASE("rerun reproduces metrics byte-identically") {
    const std::string first = read_file(out / "metrics.csv");
    run(cfg, out);
    CHECK(read_file(out / "metrics.csv") == first);

    // a fresh output directory also reproduces them (no cache in play)
    auto out2 = dir / "out2";
    run(cfg, out2);
    CHECK(read_file(out2 / "metrics.csv") == first);
  }

  SUBCASE("panels follow the documented layout: 3 slices, 2+2 columns") {
    int tile = rep.plots[0].slices[0].pixels.rows;
    render::PanelLayout layout;
    for (int i = 0; i < 3; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "panel_toy-bright_%03d.png", i);
      auto [w, h] = render::png_dimensions(out / "plots" / name);
      CHECK(w == layout.panel_width(tile, 4));
      CHECK(h == layout.panel_height(tile));
    }
    CHECK(fs::exists(out / "plots" / "roc_toy-bright.png"));
  }

  SUBCASE("scored test data is persisted with ground truth") {
    auto entries = store::load_entries(out / "data" / "toy-bright" / "manifest.json");
    CHECK(entries.size() == 6);
    for (const auto& e : entries) CHECK(e.gt.has_value());
  }
}

TEST_CASE("score persists maps and eval_from_disk reproduces the metrics") {
  auto dir = temp_dir("score_eval");
  write_config(dir / "c.json", kSmallConfig);
  auto cfg = ExperimentConfig::load(dir / "c.json");
  auto out = dir / "out";

  RunOptions opt;
  opt.persist_maps = true;
  opt.do_plots = false;
  auto rep = run(cfg, out, opt);
  CHECK(fs::exists(out / "maps" / "toy-bright" / "mean" / "00000.f32"));
  CHECK(fs::exists(out / "maps" / "toy-bright" / "GMM-0.01" / "maps.json"));

  auto rep2 = eval_from_disk(cfg, out);
  REQUIRE(rep2.rows.size() == rep.rows.size());
  for (size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(rep2.rows[i].auc == doctest::Approx(rep.rows[i].auc).epsilon(1e-12));
    CHECK(rep2.rows[i].mdsc == doctest::Approx(rep.rows[i].mdsc).epsilon(1e-12));
  }
}

TEST_CASE("failures are recorded per detector without killing the run") {
  auto dir = temp_dir("partial");
  // unet without supervised training data must fail, mean must still succeed
  std::string cfg_body = R"({
    "name": "partial", "seed": 5, "threads": 1,
    "preprocess": {"target_size": 32},
    "tasks": [{"name": "t",
      "synthetic": {"modality": "T2like", "image_size": 32, "train_count": 12,
                     "val_count": 2, "test_count": 4,
                     "lesion": {"polarity": "bright", "radius_px": 3,
                                "intensity_offset": 3.0}}}],
    "detectors": [
      {"name": "mean", "kind": "mean"},
      {"name": "U-net", "kind": "unet"}
    ]
  })";
  write_config(dir / "c.json", cfg_body);
  auto cfg = ExperimentConfig::load(dir / "c.json");
  auto rep = run(cfg, dir / "out");
  CHECK(rep.any_failure);
  REQUIRE(rep.rows.size() == 2);
  CHECK_FALSE(rep.rows[0].failed);
  CHECK(rep.rows[1].failed);
  CHECK(rep.rows[1].error.find("supervised") != std::string::npos);
  // failed rows are excluded from the csv but recorded in the json
  const std::string csv = read_file(dir / "out" / "metrics.csv");
  CHECK(csv.find("U-net") == std::string::npos);
  const std::string js = read_file(dir / "out" / "metrics.json");
  CHECK(js.find("U-net") != std::string::npos);
}

TEST_CASE("a trainable detector round-trips through the checkpoint cache") {
  auto dir = temp_dir("cache");
  std::string cfg_body = R"({
    "name": "cache", "seed": 3, "threads": 2,
    "preprocess": {"target_size": 32},
    "tasks": [{"name": "t",
      "synthetic": {"modality": "T2like", "image_size": 32, "train_count": 30,
                     "val_count": 4, "test_count": 4,
                     "lesion": {"polarity": "bright", "radius_px": 3,
                                "intensity_offset": 3.0}}}],
    "detectors": [
      {"name": "AE", "kind": "ae", "channels": [8, 16],
       "train": {"max_epochs": 3, "lr": 0.001}}
    ]
  })";
  write_config(dir / "c.json", cfg_body);
  auto cfg = ExperimentConfig::load(dir / "c.json");
  auto out = dir / "out";

  auto rep = run(cfg, out);
  REQUIRE(rep.rows.size() == 1);
  CHECK_FALSE(rep.rows[0].failed);
  CHECK(!rep.rows[0].checkpoint.empty());
  CHECK(fs::exists(out / "checkpoints" / rep.rows[0].checkpoint / "manifest.json"));
  const std::string first = read_file(out / "metrics.csv");

  // second run must reuse the checkpoint and reproduce the csv byte-for-byte
  const auto ckpt_time =
      fs::last_write_time(out / "checkpoints" / rep.rows[0].checkpoint / "manifest.json");
  run(cfg, out);
  CHECK(fs::last_write_time(out / "checkpoints" / rep.rows[0].checkpoint / "manifest.json") ==
        ckpt_time);
  CHECK(read_file(out / "metrics.csv") == first);
}

TEST_CASE("table-1-style matrix produces 13 metric rows") {
  auto dir = temp_dir("matrix");
  // miniature counts and epochs; the row structure is what matters here
  std::string cfg_body = R"({
    "name": "matrix", "seed": 9, "threads": 2,
    "preprocess": {"target_size": 32},
    "tasks": [{"name": "toy",
      "synthetic": {"modality": "T2like", "image_size": 32, "train_count": 24,
                     "val_count": 4, "test_count": 4, "supervised_train_count": 8,
                     "lesion": {"polarity": "bright", "radius_px": 3,
                                "intensity_offset": 3.0}}}],
    "detectors": [
      {"name": "mean", "kind": "mean"},
      {"name": "AE", "kind": "ae", "channels": [4, 8], "train": {"max_epochs": 1}},
      {"name": "DAE", "kind": "dae", "channels": [4, 8], "train": {"max_epochs": 1}},
      {"name": "VAE-16", "kind": "vae", "input_size": 16, "channels": [4, 8], "train": {"max_epochs": 1}},
      {"name": "VAE-BBB-16", "kind": "vae_bbb", "input_size": 16, "channels": [4, 8],
       "train": {"max_epochs": 1, "bbb_samples": 2}},
      {"name": "VAE-32", "kind": "vae", "channels": [4, 8], "train": {"max_epochs": 1}},
      {"name": "AAE-16", "kind": "aae", "input_size": 16, "channels": [4, 8],
       "train": {"max_epochs": 1, "n_critic": 1}},
      {"name": "AAE-32", "kind": "aae", "channels": [4, 8], "train": {"max_epochs": 1, "n_critic": 1}},
      {"name": "aGAN-16", "kind": "alpha_gan", "input_size": 16, "channels": [4, 8],
       "flat_latent": 8, "train": {"max_epochs": 1, "n_critic": 1}},
      {"name": "aGAN-32", "kind": "alpha_gan", "channels": [4, 8], "flat_latent": 8,
       "train": {"max_epochs": 1, "n_critic": 1}},
      {"name": "GMM-0.01", "kind": "gmm", "lambda_out": 0.01},
      {"name": "GMM-0.001", "kind": "gmm", "lambda_out": 0.001},
      {"name": "U-net", "kind": "unet", "base_channels": 8, "train": {"max_epochs": 2}}
    ]
  })";
  write_config(dir / "c.json", cfg_body);
  auto cfg = ExperimentConfig::load(dir / "c.json");
  auto rep = run(cfg, dir / "out");
  CHECK(rep.rows.size() == 13);
  int ok = 0;
  for (const auto& r : rep.rows) ok += !r.failed;
  CHECK(ok == 13);
}
