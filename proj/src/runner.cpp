#include "lesionbench/runner.hpp"

#include <fstream>
#include <map>

#include <json.hpp>

#include "lesionbench/slice_store.hpp"
#include "lesionbench/synthetic.hpp"

namespace lesionbench::runner {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

models::TrainingConfig parse_training(const json& j, const models::TrainingConfig& base) {
  models::TrainingConfig c = base;
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.beta = j.value("beta", c.beta);
  c.dae_sigma = j.value("dae_sigma", c.dae_sigma);
  c.n_critic = j.value("n_critic", c.n_critic);
  c.gp_coeff = j.value("gp_coeff", c.gp_coeff);
  c.adv_weight = j.value("adv_weight", c.adv_weight);
  c.critic_hidden = j.value("critic_hidden", c.critic_hidden);
  c.bbb_samples = j.value("bbb_samples", c.bbb_samples);
  c.bbb_logsigma_init = j.value("bbb_logsigma_init", c.bbb_logsigma_init);
  c.converge_rel = j.value("converge_rel", c.converge_rel);
  c.converge_window = j.value("converge_window", c.converge_window);
  return c;
}

json training_to_json(const models::TrainingConfig& c) {
  return {{"seed", c.seed},       {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size}, {"lr", c.lr},
          {"beta", c.beta},       {"dae_sigma", c.dae_sigma},
          {"n_critic", c.n_critic},     {"gp_coeff", c.gp_coeff},
          {"adv_weight", c.adv_weight}, {"critic_hidden", c.critic_hidden},
          {"bbb_samples", c.bbb_samples}, {"bbb_logsigma_init", c.bbb_logsigma_init},
          {"converge_rel", c.converge_rel}, {"converge_window", c.converge_window},
          {"threads", c.threads}};
}

LesionSpec parse_lesion(const json& j) {
  LesionSpec s;
  const std::string pol = j.value("polarity", "bright");
  s.polarity = pol == "dark" ? LesionSpec::Polarity::dark : LesionSpec::Polarity::bright;
  s.radius_px = j.value("radius_px", 5);
  s.intensity_offset = j.value("intensity_offset", s.polarity == LesionSpec::Polarity::dark ? -1.2f : 2.5f);
  s.softness = j.value("softness", 0.4f);
  s.count = j.value("count", 1);
  validate_lesion_spec(s);
  return s;
}

json lesion_to_json(const LesionSpec& s) {
  return {{"polarity", s.polarity == LesionSpec::Polarity::dark ? "dark" : "bright"},
          {"radius_px", s.radius_px},
          {"intensity_offset", s.intensity_offset},
          {"softness", s.softness},
          {"count", s.count}};
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ? c : '_');
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const fs::path& path,
                                        std::optional<uint64_t> seed_override) {
  json doc;
  {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path.string());
    try {
      f >> doc;
    } catch (const json::exception& e) {
      throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
  }
  ExperimentConfig cfg;
  cfg.name = doc.value("name", "experiment");
  cfg.seed = seed_override.value_or(doc.value("seed", uint64_t{1}));
  cfg.threads = doc.value("threads", 1);
  cfg.plot_slices = doc.value("plot_slices", 8);
  if (doc.contains("preprocess")) {
    cfg.prep.target_size = doc.at("preprocess").value("target_size", 64);
    cfg.prep.min_mask_pixels = doc.at("preprocess").value("min_mask_pixels", 1);
  }
  if (!doc.contains("tasks") || doc.at("tasks").empty())
    throw ConfigError("config needs at least one task");
  for (const auto& t : doc.at("tasks")) {
    TaskSpec task;
    task.name = t.at("name").get<std::string>();
    if (t.contains("synthetic")) {
      const auto& s = t.at("synthetic");
      task.modality = parse_modality(s.value("modality", "T2like"));
      task.image_size = s.value("image_size", 64);
      task.train_count = s.value("train_count", 200);
      task.val_count = s.value("val_count", 32);
      task.test_count = s.value("test_count", 50);
      task.supervised_count = s.value("supervised_train_count", 0);
      if (s.contains("lesion")) task.lesion = parse_lesion(s.at("lesion"));
    } else if (t.contains("real")) {
      const auto& r = t.at("real");
      task.real = true;
      task.train_manifest = r.at("train_manifest").get<std::string>();
      task.val_manifest = r.value("val_manifest", "");
      task.test_manifest = r.at("test_manifest").get<std::string>();
      task.supervised_manifest = r.value("supervised_manifest", "");
    } else {
      throw ConfigError("task '" + task.name + "' needs a synthetic or real source");
    }
    cfg.tasks.push_back(std::move(task));
  }
  if (!doc.contains("detectors") || doc.at("detectors").empty())
    throw ConfigError("config needs at least one detector");
  models::TrainingConfig base;
  base.seed = cfg.seed;
  for (const auto& d : doc.at("detectors")) {
    DetectorSpec det;
    det.kind = d.at("kind").get<std::string>();
    det.name = d.value("name", det.kind);
    det.input_size = d.value("input_size", 0);
    det.channels = d.value("channels", std::vector<int>{});
    det.flat_latent = d.value("flat_latent", 0);
    det.lambda_out = d.value("lambda_out", 0.01);
    det.components = d.value("components", 3);
    det.sigma_map = d.value("sigma_map", false);
    det.base_channels = d.value("base_channels", 16);
    det.train = parse_training(d.value("train", json::object()), base);
    if (!d.contains("train") || !d.at("train").contains("seed"))
      det.train.seed = cfg.seed ^ fnv1a64(det.name);
    det.train.threads = cfg.threads;
    cfg.detectors.push_back(std::move(det));
  }
  return cfg;
}

std::string ExperimentConfig::canonical() const {
  json tasks = json::array();
  for (const auto& t : this->tasks) {
    json tj = {{"name", t.name}};
    if (t.real) {
      tj["real"] = {{"train_manifest", t.train_manifest},
                    {"val_manifest", t.val_manifest},
                    {"test_manifest", t.test_manifest},
                    {"supervised_manifest", t.supervised_manifest}};
    } else {
      tj["synthetic"] = {{"modality", to_string(t.modality)},
                         {"image_size", t.image_size},
                         {"train_count", t.train_count},
                         {"val_count", t.val_count},
                         {"test_count", t.test_count},
                         {"supervised_train_count", t.supervised_count},
                         {"lesion", lesion_to_json(t.lesion)}};
    }
    tasks.push_back(std::move(tj));
  }
  json dets = json::array();
  for (const auto& d : detectors) {
    dets.push_back({{"name", d.name},
                    {"kind", d.kind},
                    {"input_size", d.input_size},
                    {"channels", d.channels},
                    {"flat_latent", d.flat_latent},
                    {"lambda_out", d.lambda_out},
                    {"components", d.components},
                    {"sigma_map", d.sigma_map},
                    {"base_channels", d.base_channels},
                    {"train", training_to_json(d.train)}});
  }
  json doc = {{"name", name},
              {"seed", seed},
              {"threads", threads},
              {"plot_slices", plot_slices},
              {"preprocess",
               {{"target_size", prep.target_size}, {"min_mask_pixels", prep.min_mask_pixels}}},
              {"tasks", tasks},
              {"detectors", dets}};
  return doc.dump(2);
}

namespace {

struct StagedTask {
  std::string name;
  std::string fingerprint;
  std::vector<Slice> train, val, test, sup;
  std::vector<GroundTruth> test_gt, sup_gt;

  // per-detector-size resized views, built on demand
  std::map<int, std::vector<Slice>> train_s, val_s, test_s, sup_s;
  std::map<int, std::vector<GroundTruth>> gt_s, sup_gt_s;

  const std::vector<Slice>& sized(std::map<int, std::vector<Slice>>& cache,
                                  const std::vector<Slice>& native, int size) {
    auto it = cache.find(size);
    if (it != cache.end()) return it->second;
    std::vector<Slice> out;
    out.reserve(native.size());
    for (const auto& s : native) out.push_back(preprocess::resize_nearest(s, size));
    return cache.emplace(size, std::move(out)).first->second;
  }

  const std::vector<GroundTruth>& sized_gt(std::map<int, std::vector<GroundTruth>>& cache,
                                           const std::vector<GroundTruth>& native, int size) {
    auto it = cache.find(size);
    if (it != cache.end()) return it->second;
    std::vector<GroundTruth> out;
    out.reserve(native.size());
    for (const auto& g : native) out.push_back({preprocess::resize_nearest(g.labels, size)});
    return cache.emplace(size, std::move(out)).first->second;
  }
};

/// Crop + normalize at native resolution; the per-detector nearest resize is
/// applied from these staged slices, mirroring the paper's down-sampled
/// dataset construction.
std::vector<Slice> crop_normalize(const std::vector<Slice>& slices,
                                  const preprocess::BoundingBox& box) {
  std::vector<Slice> out;
  out.reserve(slices.size());
  for (const auto& s : slices) out.push_back(preprocess::normalize(preprocess::crop(s, box)));
  return out;
}

StagedTask stage_synthetic(const TaskSpec& task, const ExperimentConfig& cfg) {
  StagedTask st;
  st.name = task.name;
  const uint64_t seed = cfg.seed ^ fnv1a64(task.name);
  const int total = task.train_count + task.val_count + task.test_count + task.supervised_count;
  auto all = synth::generate_healthy(seed, total, task.image_size, task.modality);

  auto kept = preprocess::remove_empty(all, cfg.prep.min_mask_pixels);
  const auto box = preprocess::max_bounding_box(kept);
  auto staged = crop_normalize(kept, box);

  auto it = staged.begin();
  st.train.assign(it, it + task.train_count);
  it += task.train_count;
  st.val.assign(it, it + task.val_count);
  it += task.val_count;
  std::vector<Slice> test_healthy(it, it + task.test_count);
  it += task.test_count;
  std::vector<Slice> sup_healthy(it, it + task.supervised_count);

  for (size_t i = 0; i < test_healthy.size(); ++i) {
    auto [lesioned, gt] = synth::inject_lesion(test_healthy[i], task.lesion, seed ^ (0x7E57 + i));
    st.test.push_back(std::move(lesioned));
    st.test_gt.push_back(std::move(gt));
  }
  for (size_t i = 0; i < sup_healthy.size(); ++i) {
    auto [lesioned, gt] = synth::inject_lesion(sup_healthy[i], task.lesion, seed ^ (0x50B0 + i));
    st.sup.push_back(std::move(lesioned));
    st.sup_gt.push_back(std::move(gt));
  }

  json meta = {{"task", task.name},
               {"seed", seed},
               {"modality", to_string(task.modality)},
               {"image_size", task.image_size},
               {"counts", {task.train_count, task.val_count, task.test_count, task.supervised_count}},
               {"lesion", lesion_to_json(task.lesion)},
               {"box", {box.row_min, box.row_max, box.col_min, box.col_max}},
               {"prep", {cfg.prep.target_size, cfg.prep.min_mask_pixels}}};
  st.fingerprint = hex64(fnv1a64(meta.dump()));
  return st;
}

StagedTask stage_real(const TaskSpec& task, const ExperimentConfig& cfg) {
  StagedTask st;
  st.name = task.name;
  auto load = [&](const std::string& manifest) {
    std::vector<store::StoredSlice> entries = store::load_entries(manifest);
    return entries;
  };
  auto train_e = load(task.train_manifest);
  std::vector<store::StoredSlice> val_e, sup_e;
  if (!task.val_manifest.empty()) val_e = load(task.val_manifest);
  auto test_e = load(task.test_manifest);
  if (!task.supervised_manifest.empty()) sup_e = load(task.supervised_manifest);

  std::vector<Slice> all;
  for (const auto& e : train_e) all.push_back(e.slice);
  for (const auto& e : val_e) all.push_back(e.slice);
  for (const auto& e : test_e) all.push_back(e.slice);
  for (const auto& e : sup_e) all.push_back(e.slice);
  auto kept = preprocess::remove_empty(all, cfg.prep.min_mask_pixels);
  const auto box = preprocess::max_bounding_box(kept);

  auto stage_set = [&](const std::vector<store::StoredSlice>& in, std::vector<Slice>& slices,
                       std::vector<GroundTruth>* gts) {
    for (const auto& e : in) {
      if (mask_population(e.slice) < cfg.prep.min_mask_pixels) continue;
      slices.push_back(preprocess::normalize(preprocess::crop(e.slice, box)));
      if (gts) {
        if (!e.gt) throw ValidationError("test entry without ground truth: " + e.slice.subject_id);
        gts->push_back({preprocess::crop(e.gt->labels, box)});
      }
    }
  };
  stage_set(train_e, st.train, nullptr);
  stage_set(val_e, st.val, nullptr);
  stage_set(test_e, st.test, &st.test_gt);
  if (!sup_e.empty()) {
    for (const auto& e : sup_e) {
      if (mask_population(e.slice) < cfg.prep.min_mask_pixels) continue;
      if (!e.gt) throw ValidationError("supervised entry without ground truth");
      st.sup.push_back(preprocess::normalize(preprocess::crop(e.slice, box)));
      st.sup_gt.push_back({preprocess::crop(e.gt->labels, box)});
    }
  }

  json meta = {{"task", task.name},
               {"manifests", {task.train_manifest, task.val_manifest, task.test_manifest,
                              task.supervised_manifest}},
               {"box", {box.row_min, box.row_max, box.col_min, box.col_max}},
               {"prep", {cfg.prep.target_size, cfg.prep.min_mask_pixels}}};
  st.fingerprint = hex64(fnv1a64(meta.dump()));
  return st;
}

nn::ArchSpec make_arch(const DetectorSpec& det, int size) {
  nn::ArchSpec arch;
  arch.input_size = size;
  arch.channels = det.channels.empty() ? nn::default_channels(size) : det.channels;
  if (det.kind == "alpha_gan") arch.flat_latent = det.flat_latent > 0 ? det.flat_latent : 128;
  arch.validate();
  return arch;
}

models::ModelKind nn_kind(const std::string& kind) {
  if (kind == "ae") return models::ModelKind::AE;
  if (kind == "dae") return models::ModelKind::DAE;
  if (kind == "vae") return models::ModelKind::VAE;
  if (kind == "vae_bbb") return models::ModelKind::VAE_BBB;
  if (kind == "aae") return models::ModelKind::AAE;
  if (kind == "alpha_gan") return models::ModelKind::ALPHA_GAN;
  throw ConfigError("unknown detector kind: " + kind);
}

struct DetectorOutcome {
  MetricRow row;
  std::vector<eval::DifferenceMap> maps;  // one per test slice
};

/// Pooled AUC + threshold sweep for one detector's maps; unet reports dice at
/// the fixed 0.5 threshold since its outputs are calibrated probabilities.
void evaluate_maps(const std::vector<eval::DifferenceMap>& maps,
                   const std::vector<GroundTruth>& gts, const eval::GridSpec& grid,
                   bool fixed_threshold, MetricRow& row, eval::RocCurve* curve_out) {
  const auto pooled = eval::pool_dataset(maps, gts);
  const auto curve = eval::roc(pooled.scores, pooled.labels);
  row.auc = eval::auc(curve);
  if (fixed_threshold) {
    int64_t np = 0, ng = 0, tp = 0;
    for (size_t i = 0; i < pooled.scores.size(); ++i) {
      const bool p = pooled.scores[i] > 0.5;
      np += p;
      ng += pooled.labels[i];
      tp += (p && pooled.labels[i]);
    }
    row.mdsc = (np + ng) == 0 ? 1.0 : 2.0 * tp / static_cast<double>(np + ng);
    row.t_star = 0.5;
  } else {
    const auto sweep = eval::max_dice_sweep(pooled.scores, pooled.labels, grid);
    row.mdsc = sweep.mdsc;
    row.t_star = sweep.best_threshold;
  }
  if (curve_out) *curve_out = curve;
}

void write_roc_csv(const fs::path& path, const eval::RocCurve& curve) {
  std::ofstream f(path, std::ios::trunc);
  f << "fpr,tpr,threshold\n";
  const size_t n = curve.fpr.size();
  const size_t stride = std::max<size_t>(1, n / 2048);
  for (size_t i = 0; i < n; i += stride)
    f << fmt(curve.fpr[i]) << "," << fmt(curve.tpr[i]) << "," << fmt(curve.thresholds[i]) << "\n";
  if ((n - 1) % stride != 0)
    f << fmt(curve.fpr[n - 1]) << "," << fmt(curve.tpr[n - 1]) << ","
      << fmt(curve.thresholds[n - 1]) << "\n";
}

DetectorOutcome run_detector(const DetectorSpec& det, StagedTask& st,
                             const ExperimentConfig& cfg, const fs::path& out_dir,
                             bool train_only) {
  DetectorOutcome out;
  out.row.detector = det.name;
  out.row.dataset = st.name;

  const int size = det.input_size > 0 ? det.input_size : cfg.prep.target_size;
  const auto& train = st.sized(st.train_s, st.train, size);
  const auto& val = st.sized(st.val_s, st.val, size);
  const auto& test = st.sized(st.test_s, st.test, size);
  const auto& gts = st.sized_gt(st.gt_s, st.test_gt, size);

  std::vector<eval::DifferenceMap>& maps = out.maps;
  maps.reserve(test.size());
  eval::GridSpec grid = eval::GridSpec::difference();
  bool fixed_threshold = false;

  if (det.kind == "mean") {
    if (train_only) return out;
    const auto model = baselines::fit_mean_model(train);
    for (const auto& s : test) maps.push_back(baselines::score_mean(model, s, det.sigma_map));
  } else if (det.kind == "gmm") {
    if (train_only) return out;
    grid = eval::GridSpec::probability();
    const auto prior = baselines::build_spatial_prior(train, det.components);
    baselines::EmOptions opt;
    opt.components = det.components;
    opt.lambda_out = det.lambda_out;
    for (const auto& s : test) {
      auto fit = baselines::em_fit(s, prior, opt);
      maps.push_back(baselines::outlier_map(fit, s.mask));
    }
  } else if (det.kind == "unet") {
    grid = eval::GridSpec::probability();
    fixed_threshold = true;
    const auto& sup = st.sized(st.sup_s, st.sup, size);
    const auto& sup_gt = st.sized_gt(st.sup_gt_s, st.sup_gt, size);
    if (sup.empty())
      throw ConfigError("unet detector needs supervised training data in the task");
    const std::string key =
        supervised::checkpoint_key(size, det.base_channels, det.train, st.fingerprint);
    const fs::path ckpt = out_dir / "checkpoints" / key;
    supervised::UNetModel model;
    if (fs::exists(ckpt / "manifest.json")) {
      model = supervised::load_checkpoint(ckpt);
    } else {
      model = supervised::train_unet(sup, sup_gt, det.train, det.base_channels);
      supervised::save_checkpoint(ckpt, model);
    }
    out.row.checkpoint = key;
    if (train_only) return out;
    for (const auto& s : test) maps.push_back(supervised::probability_map(model, s));
  } else {
    const models::ModelKind kind = nn_kind(det.kind);
    const nn::ArchSpec arch = make_arch(det, size);
    const std::string key = models::checkpoint_key(kind, arch, det.train, st.fingerprint);
    const fs::path ckpt = out_dir / "checkpoints" / key;
    models::TrainedModel model;
    if (fs::exists(ckpt / "manifest.json")) {
      model = models::load_checkpoint(ckpt);
    } else {
      model = models::train(kind, arch, train, val, det.train);
      models::save_checkpoint(ckpt, model);
    }
    out.row.checkpoint = key;
    if (train_only) return out;
    for (const auto& s : test) maps.push_back(models::anomaly_map(model, s));
  }

  for (auto& m : maps) m.source = det.name;
  eval::RocCurve curve;
  evaluate_maps(maps, gts, grid, fixed_threshold, out.row, &curve);

  fs::create_directories(out_dir / "roc");
  write_roc_csv(out_dir / "roc" / (sanitize(st.name) + "_" + sanitize(det.name) + ".csv"), curve);
  return out;
}

void persist_maps(const fs::path& dir, const DetectorSpec& det, int size,
                  const std::vector<eval::DifferenceMap>& maps) {
  fs::create_directories(dir);
  for (size_t i = 0; i < maps.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05d", static_cast<int>(i));
    std::ofstream f(dir / (std::string(name) + ".f32"), std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(maps[i].scores.v.data()),
            static_cast<std::streamsize>(maps[i].scores.size() * sizeof(float)));
    std::ofstream fm(dir / (std::string(name) + ".mask.u8"), std::ios::binary | std::ios::trunc);
    fm.write(reinterpret_cast<const char*>(maps[i].mask.v.data()),
             static_cast<std::streamsize>(maps[i].mask.size()));
  }
  json meta = {{"detector", det.name},
               {"kind", det.kind},
               {"size", size},
               {"count", maps.size()},
               {"grid", det.kind == "gmm" || det.kind == "unet" ? "probability" : "difference"}};
  std::ofstream f(dir / "maps.json", std::ios::trunc);
  f << meta.dump(2) << "\n";
}

render::RocSeries roc_series_from_csv(const fs::path& csv, const std::string& name) {
  render::RocSeries s;
  s.name = name;
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) continue;
    s.fpr.push_back(std::stod(line.substr(0, c1)));
    s.tpr.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
  }
  return s;
}

}  // namespace

Report run(const ExperimentConfig& config, const fs::path& out_dir, const RunOptions& options) {
  fs::create_directories(out_dir / "checkpoints");

  Report rep;
  const std::string canon = config.canonical();
  rep.config_hash = hex64(fnv1a64(canon));
  rep.environment = std::string("compiler=") + __VERSION__ + ";pointer_bits=" +
                    std::to_string(sizeof(void*) * 8) + ";threads=" +
                    std::to_string(config.threads);
  {
    std::ofstream f(out_dir / "config.json", std::ios::trunc);
    f << canon << "\n";
  }

  for (const auto& task : config.tasks) {
    StagedTask st = task.real ? stage_real(task, config) : stage_synthetic(task, config);

    // persist the scored test set for traceability
    store::store_dataset(out_dir / "data" / sanitize(task.name), store::Split::test, st.test,
                         &st.test_gt, st.fingerprint);

    TaskPlots tp;
    tp.task = task.name;
    const int plot_count =
        options.train_only ? 0 : std::min<int>(config.plot_slices, static_cast<int>(st.test.size()));
    tp.slices.assign(st.test.begin(), st.test.begin() + plot_count);
    tp.gts.assign(st.test_gt.begin(), st.test_gt.begin() + plot_count);
    tp.maps.resize(plot_count);

    for (const auto& det : config.detectors) {
      try {
        DetectorOutcome oc = run_detector(det, st, config, out_dir, options.train_only);
        rep.rows.push_back(oc.row);
        if (options.train_only) continue;
        if (options.persist_maps) {
          const int size = det.input_size > 0 ? det.input_size : config.prep.target_size;
          persist_maps(out_dir / "maps" / sanitize(task.name) / sanitize(det.name), det, size,
                       oc.maps);
        }
        tp.detector_names.push_back(det.name);
        for (int i = 0; i < plot_count; ++i) tp.maps[i].push_back(oc.maps[i]);
        tp.roc.push_back(roc_series_from_csv(
            out_dir / "roc" / (sanitize(task.name) + "_" + sanitize(det.name) + ".csv"),
            det.name));
      } catch (const std::exception& e) {
        MetricRow row;
        row.detector = det.name;
        row.dataset = task.name;
        row.failed = true;
        row.error = e.what();
        rep.rows.push_back(row);
        rep.any_failure = true;
      }
    }
    rep.plots.push_back(std::move(tp));
  }

  if (!options.train_only && options.do_metrics) write_metrics(rep, out_dir);
  if (!options.train_only && options.do_plots) emit_plots(rep, out_dir);
  return rep;
}

Report eval_from_disk(const ExperimentConfig& config, const fs::path& out_dir) {
  Report rep;
  rep.config_hash = hex64(fnv1a64(config.canonical()));
  for (const auto& task : config.tasks) {
    // ground truth comes from the persisted test store
    auto stored = store::load_entries(out_dir / "data" / sanitize(task.name) / "manifest.json");
    std::vector<GroundTruth> native_gt;
    for (auto& e : stored) {
      if (!e.gt) throw ValidationError("stored test slice lacks ground truth");
      native_gt.push_back(*e.gt);
    }
    for (const auto& det : config.detectors) {
      MetricRow row;
      row.detector = det.name;
      row.dataset = task.name;
      try {
        const fs::path dir = out_dir / "maps" / sanitize(task.name) / sanitize(det.name);
        json meta;
        {
          std::ifstream f(dir / "maps.json");
          if (!f) throw IoError("no persisted maps for " + det.name + " (run `score` first)");
          f >> meta;
        }
        const int size = meta.at("size").get<int>();
        const size_t count = meta.at("count").get<size_t>();
        if (count != native_gt.size())
          throw IntegrityError("persisted map count differs from the test set");
        std::vector<eval::DifferenceMap> maps;
        std::vector<GroundTruth> gts;
        for (size_t i = 0; i < count; ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "%05d", static_cast<int>(i));
          eval::DifferenceMap m;
          m.scores = Grid<float>(size, size);
          m.mask = Grid<uint8_t>(size, size);
          std::ifstream f(dir / (std::string(name) + ".f32"), std::ios::binary);
          if (!f) throw IoError("missing map raster " + std::string(name));
          f.read(reinterpret_cast<char*>(m.scores.v.data()),
                 static_cast<std::streamsize>(m.scores.size() * sizeof(float)));
          std::ifstream fm(dir / (std::string(name) + ".mask.u8"), std::ios::binary);
          fm.read(reinterpret_cast<char*>(m.mask.v.data()),
                  static_cast<std::streamsize>(m.mask.size()));
          m.source = det.name;
          maps.push_back(std::move(m));
          gts.push_back({preprocess::resize_nearest(native_gt[i].labels, size)});
        }
        const bool prob = meta.at("grid").get<std::string>() == "probability";
        evaluate_maps(maps, gts, prob ? eval::GridSpec::probability() : eval::GridSpec::difference(),
                      det.kind == "unet", row, nullptr);
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
        rep.any_failure = true;
      }
      rep.rows.push_back(row);
    }
  }
  write_metrics(rep, out_dir);
  return rep;
}

void write_metrics(const Report& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "metrics.csv", std::ios::trunc);
    f << "detector,dataset,auc,mdsc,t_star\n";
    for (const auto& r : report.rows) {
      if (r.failed) continue;
      f << r.detector << "," << r.dataset << "," << fmt(r.auc) << "," << fmt(r.mdsc) << ","
        << fmt(r.t_star) << "\n";
    }
  }
  json rows = json::array();
  for (const auto& r : report.rows) {
    json row = {{"detector", r.detector}, {"dataset", r.dataset}, {"failed", r.failed}};
    if (r.failed) {
      row["error"] = r.error;
    } else {
      row["auc"] = r.auc;
      row["mdsc"] = r.mdsc;
      row["t_star"] = r.t_star;
      row["checkpoint"] = r.checkpoint;
    }
    rows.push_back(std::move(row));
  }
  json doc = {{"config_hash", report.config_hash},
              {"environment", report.environment},
              {"rows", rows}};
  std::ofstream f(out_dir / "metrics.json", std::ios::trunc);
  f << doc.dump(2) << "\n";
}

void emit_plots(const Report& report, const fs::path& out_dir) {
  fs::create_directories(out_dir / "plots");
  for (const auto& tp : report.plots) {
    if (!tp.roc.empty())
      render::roc_overlay(out_dir / "plots" / ("roc_" + sanitize(tp.task) + ".png"),
                          "ROC " + tp.task, tp.roc);
    for (size_t i = 0; i < tp.slices.size(); ++i) {
      char name[128];
      std::snprintf(name, sizeof name, "panel_%s_%03d.png", sanitize(tp.task).c_str(),
                    static_cast<int>(i));
      render::slice_panel(out_dir / "plots" / name, tp.slices[i], tp.gts[i], tp.maps[i],
                          tp.detector_names);
    }
  }
}

}  // namespace lesionbench::runner
