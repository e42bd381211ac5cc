#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "lesionbench/preprocess.hpp"
#include "lesionbench/supervised.hpp"
#include "lesionbench/synthetic.hpp"

using namespace lesionbench;
using namespace lesionbench::supervised;

namespace {

struct Labeled {
  std::vector<Slice> slices;
  std::vector<GroundTruth> gts;
};

Labeled labeled_set(uint64_t seed, int n, int size) {
  auto healthy = synth::generate_healthy(seed, n, size, Modality::T2like);
  Labeled out;
  LesionSpec spec;
  spec.radius_px = std::max(4, size / 8);
  spec.intensity_offset = 2.5f;
  for (size_t i = 0; i < healthy.size(); ++i) {
    auto norm = preprocess::normalize(healthy[i]);
    auto [lesioned, gt] = synth::inject_lesion(norm, spec, seed ^ (0x1234 + i));
    out.slices.push_back(std::move(lesioned));
    out.gts.push_back(std::move(gt));
  }
  return out;
}

models::TrainingConfig quick_config(uint64_t seed = 4) {
  models::TrainingConfig cfg;
  cfg.seed = seed;
  cfg.max_epochs = 12;
  cfg.lr = 1e-3;
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("output shape follows input shape for sizes divisible by four") {
  auto cfg = quick_config();
  for (int size : {8, 16, 32}) {
    auto m = build_unet(size, 8, cfg);
    Slice s;
    s.pixels = Grid<float>(size, size, 0.1f);
    s.mask = Grid<uint8_t>(size, size, 1);
    auto probs = predict(m, s);
    CHECK(probs.rows == size);
    CHECK(probs.cols == size);
  }
  CHECK_THROWS_AS(build_unet(30, 8, cfg), ConfigError);
}

TEST_CASE("probabilities live in [0,1] and background is zeroed in the map") {
  auto data = labeled_set(51, 2, 32);
  auto m = build_unet(32, 8, quick_config());
  auto probs = predict(m, data.slices[0]);
  for (float p : probs.v) {
    CHECK(p >= 0.f);
    CHECK(p <= 1.f);
  }
  auto map = probability_map(m, data.slices[0]);
  for (size_t i = 0; i < map.scores.v.size(); ++i)
    if (!data.slices[0].mask.v[i]) CHECK(map.scores.v[i] == 0.f);
}

TEST_CASE("training halves the loss and fits its own training data") {
  auto data = labeled_set(52, 60, 32);
  auto cfg = quick_config(5);
  cfg.max_epochs = 60;
  cfg.lr = 2e-3;
  auto m = train_unet(data.slices, data.gts, cfg, 8);
  REQUIRE(m.loss_history.size() >= 2);
  CHECK(m.loss_history.back() < 0.5 * m.loss_history.front());

  // dice at 0.5 on a training slice beats the dataset positive rate
  auto probs = predict(m, data.slices[0]);
  Grid<uint8_t> pred(32, 32, 0);
  for (size_t i = 0; i < probs.v.size(); ++i) pred.v[i] = probs.v[i] > 0.5f;
  const double d = eval::dice(pred, data.gts[0].labels, data.slices[0].mask);
  int64_t pos = 0, total = 0;
  for (size_t s = 0; s < data.slices.size(); ++s)
    for (size_t i = 0; i < data.gts[s].labels.v.size(); ++i)
      if (data.slices[s].mask.v[i]) {
        pos += data.gts[s].labels.v[i];
        ++total;
      }
  CHECK(d > static_cast<double>(pos) / total);
}

TEST_CASE("all-negative labels are degenerate") {
  auto healthy = synth::generate_healthy(53, 5, 32, Modality::T2like);
  std::vector<Slice> slices;
  std::vector<GroundTruth> gts;
  for (auto& s : healthy) {
    slices.push_back(preprocess::normalize(s));
    gts.push_back({Grid<uint8_t>(32, 32, 0)});
  }
  CHECK_THROWS_AS(train_unet(slices, gts, quick_config(), 8), DegenerateDataError);
}

TEST_CASE("all-negative slices only contribute the background term") {
  // a batch with one all-negative slice trains fine; its loss term is the
  // background bce, which vanishes as predictions approach zero
  auto data = labeled_set(54, 8, 32);
  data.gts[0].labels = Grid<uint8_t>(32, 32, 0);
  auto cfg = quick_config(6);
  cfg.max_epochs = 4;
  auto m = train_unet(data.slices, data.gts, cfg, 8);
  CHECK(std::isfinite(m.loss_history.back()));
}

TEST_CASE("unet training is deterministic and checkpoints round-trip") {
  auto data = labeled_set(55, 20, 32);
  auto cfg = quick_config(7);
  cfg.max_epochs = 3;
  auto a = train_unet(data.slices, data.gts, cfg, 8);
  auto b = train_unet(data.slices, data.gts, cfg, 8);
  CHECK(a.params.values == b.params.values);
  CHECK(a.loss_history == b.loss_history);

  auto dir = std::filesystem::temp_directory_path() / "lesionbench_unet_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, a);
  auto loaded = load_checkpoint(dir);
  CHECK(loaded.params.values == a.params.values);
  auto pa = predict(a, data.slices[0]);
  auto pb = predict(loaded, data.slices[0]);
  CHECK(pa == pb);
}
