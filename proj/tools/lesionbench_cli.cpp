#include <CLI11.hpp>

#include <iostream>

#include "lesionbench/preprocess.hpp"
#include "lesionbench/runner.hpp"
#include "lesionbench/slice_store.hpp"
#include "lesionbench/synthetic.hpp"

using namespace lesionbench;

namespace {

runner::ExperimentConfig load_config(const std::string& path, uint64_t seed, bool seed_set,
                                     const std::string& detectors) {
  auto cfg = runner::ExperimentConfig::load(
      path, seed_set ? std::optional<uint64_t>(seed) : std::nullopt);
  if (!detectors.empty()) {
    std::vector<runner::DetectorSpec> kept;
    std::string item;
    std::stringstream ss(detectors);
    std::vector<std::string> wanted;
    while (std::getline(ss, item, ',')) wanted.push_back(item);
    for (auto& d : cfg.detectors)
      if (std::find(wanted.begin(), wanted.end(), d.name) != wanted.end())
        kept.push_back(std::move(d));
    if (kept.empty()) throw ConfigError("--detectors matched nothing in the config");
    cfg.detectors = std::move(kept);
  }
  return cfg;
}

int report_outcome(const runner::Report& rep) {
  for (const auto& r : rep.rows) {
    if (r.failed)
      std::cout << r.detector << " @ " << r.dataset << "  FAILED: " << r.error << "\n";
    else
      std::cout << r.detector << " @ " << r.dataset << "  auc=" << r.auc << " mdsc=" << r.mdsc
                << " t*=" << r.t_star << "\n";
  }
  return rep.any_failure ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lesionbench: healthy-distribution anomaly detection benchmark"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", detectors;
  uint64_t seed = 0;
  bool seed_set = false;
  auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    if (needs_config) sub->add_option("--config", config_path, "experiment config (json)")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--detectors", detectors, "comma-separated detector subset");
  };

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic healthy dataset store");
  int synth_n = 100, synth_size = 64;
  std::string synth_modality = "T2like";
  bool synth_lesions = false;
  synth_cmd->add_option("--out", out_dir, "output directory");
  synth_cmd->add_option("--seed", seed, "generator seed");
  synth_cmd->add_option("--n", synth_n, "slice count");
  synth_cmd->add_option("--size", synth_size, "image size (32/64/128/256)");
  synth_cmd->add_option("--modality", synth_modality, "T1like or T2like");
  synth_cmd->add_flag("--lesions", synth_lesions, "inject default lesions and store ground truth");

  auto* prep_cmd = app.add_subcommand("preprocess", "run the normalization pipeline on a store");
  std::string manifest_path;
  int target = 64, min_mask = 1;
  prep_cmd->add_option("--manifest", manifest_path, "input manifest.json")->required();
  prep_cmd->add_option("--out", out_dir, "output directory");
  prep_cmd->add_option("--target", target, "output image size");
  prep_cmd->add_option("--min-mask-pixels", min_mask, "empty-slice threshold");

  auto* train_cmd = app.add_subcommand("train", "train detectors and write checkpoints");
  add_common(train_cmd);
  auto* score_cmd = app.add_subcommand("score", "score the test set, persist difference maps");
  add_common(score_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "recompute metrics from persisted maps");
  add_common(eval_cmd);
  auto* run_cmd = app.add_subcommand("run", "full pipeline: data, train, score, eval, plots");
  add_common(run_cmd);
  auto* plot_cmd = app.add_subcommand("plot", "re-emit plots from cached checkpoints");
  add_common(plot_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      const Modality mod = parse_modality(synth_modality);
      auto slices = synth::generate_healthy(seed, synth_n, synth_size, mod);
      if (synth_lesions) {
        std::vector<GroundTruth> gts;
        LesionSpec spec;
        if (mod == Modality::T1like) {
          spec.polarity = LesionSpec::Polarity::dark;
          spec.intensity_offset = -1.2f;
        }
        for (size_t i = 0; i < slices.size(); ++i) {
          auto [lesioned, gt] = synth::inject_lesion(slices[i], spec, seed ^ (0x7E57 + i));
          slices[i] = std::move(lesioned);
          gts.push_back(std::move(gt));
        }
        store::store_dataset(out_dir, store::Split::test, slices, &gts);
      } else {
        store::store_dataset(out_dir, store::Split::train, slices);
      }
      std::cout << "wrote " << slices.size() << " slices to " << out_dir << "\n";
      return 0;
    }
    if (prep_cmd->parsed()) {
      auto entries = store::load_entries(manifest_path);
      std::vector<Slice> slices;
      for (auto& e : entries) slices.push_back(std::move(e.slice));
      preprocess::PreprocessConfig pc{target, min_mask};
      auto res = preprocess::run_pipeline(slices, pc);
      store::DatasetManifest src = store::load_manifest(manifest_path);
      store::store_dataset(out_dir, src.split, res.slices, nullptr, res.fingerprint);
      std::cout << "preprocessed " << res.slices.size() << " slices, fingerprint "
                << res.fingerprint << "\n";
      return 0;
    }

    auto cfg = load_config(config_path, seed, seed_set, detectors);
    runner::RunOptions opt;
    if (train_cmd->parsed()) {
      opt.train_only = true;
      auto rep = runner::run(cfg, out_dir, opt);
      return rep.any_failure ? 1 : 0;
    }
    if (score_cmd->parsed()) {
      opt.persist_maps = true;
      opt.do_plots = false;
      return report_outcome(runner::run(cfg, out_dir, opt));
    }
    if (eval_cmd->parsed()) {
      return report_outcome(runner::eval_from_disk(cfg, out_dir));
    }
    if (plot_cmd->parsed()) {
      opt.do_metrics = false;
      return report_outcome(runner::run(cfg, out_dir, opt));
    }
    return report_outcome(runner::run(cfg, out_dir, opt));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
