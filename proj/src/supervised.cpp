#include "lesionbench/supervised.hpp"

#include <fstream>

#include <json.hpp>

namespace lesionbench::supervised {

using nlohmann::json;
namespace fs = std::filesystem;
using nn::Tensor;
using nn::Trace;
using nn::TraceReader;

namespace {

Tensor<float> gt_to_tensor(const GroundTruth& gt) {
  Tensor<float> t({1, 1, gt.labels.rows, gt.labels.cols});
  for (size_t i = 0; i < gt.labels.v.size(); ++i) t.v[i] = gt.labels.v[i] ? 1.f : 0.f;
  return t;
}

Tensor<float> concat_channels(const Tensor<float>& a, const Tensor<float>& b) {
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  Tensor<float> out({n, ca + cb, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::copy(a.v.begin() + i * ca * plane, a.v.begin() + (i + 1) * ca * plane,
              out.v.begin() + i * (ca + cb) * plane);
    std::copy(b.v.begin() + i * cb * plane, b.v.begin() + (i + 1) * cb * plane,
              out.v.begin() + (i * (ca + cb) + ca) * plane);
  }
  return out;
}

void split_channels(const Tensor<float>& d, int ca, Tensor<float>& da, Tensor<float>& db) {
  const int n = d.dim(0), c = d.dim(1), h = d.dim(2), w = d.dim(3);
  const int cb = c - ca;
  da = Tensor<float>({n, ca, h, w});
  db = Tensor<float>({n, cb, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::copy(d.v.begin() + i * c * plane, d.v.begin() + (i * c + ca) * plane,
              da.v.begin() + i * ca * plane);
    std::copy(d.v.begin() + (i * c + ca) * plane, d.v.begin() + (i + 1) * c * plane,
              db.v.begin() + i * cb * plane);
  }
}

}  // namespace

struct UNetModel::Net {
  nn::Sequential<float> enc1, enc2, bott, dec2, dec1, head;
  std::unique_ptr<nn::ConvT2d<float>> up2, up1;
  nn::MaxPool2<float> pool;

  Net(nn::ParamStore<float>& store, int base, Pcg32& rng) {
    auto block = [&](nn::Sequential<float>& seq, const std::string& name, int in, int out) {
      seq.layers.push_back(std::make_unique<nn::Conv2d<float>>(store, name + ".c0", in, out, 3, 1, 1, rng));
      seq.layers.push_back(std::make_unique<nn::Activation<float>>(nn::Act::ReLU));
      seq.layers.push_back(std::make_unique<nn::Conv2d<float>>(store, name + ".c1", out, out, 3, 1, 1, rng));
      seq.layers.push_back(std::make_unique<nn::Activation<float>>(nn::Act::ReLU));
    };
    block(enc1, "enc1", 1, base);
    block(enc2, "enc2", base, 2 * base);
    block(bott, "bott", 2 * base, 4 * base);
    up2 = std::make_unique<nn::ConvT2d<float>>(store, "up2", 4 * base, 2 * base, 4, 2, 1, rng);
    block(dec2, "dec2", 4 * base, 2 * base);
    up1 = std::make_unique<nn::ConvT2d<float>>(store, "up1", 2 * base, base, 4, 2, 1, rng);
    block(dec1, "dec1", 2 * base, base);
    head.layers.push_back(std::make_unique<nn::Conv2d<float>>(store, "head", base, 1, 1, 1, 0, rng));
  }

  struct Pass {
    Trace<float> t_e1, t_p1, t_e2, t_p2, t_b, t_u2, t_d2, t_u1, t_d1, t_head;
    Tensor<float> e1, e2;  // skip activations
    int ca2 = 0, ca1 = 0;
  };

  Tensor<float> forward(std::span<const float> theta, const Tensor<float>& x, Pass& p) const {
    p.e1 = enc1.forward(theta, x, p.t_e1);
    Tensor<float> h = pool.forward(theta, p.e1, p.t_p1);
    p.e2 = enc2.forward(theta, h, p.t_e2);
    h = pool.forward(theta, p.e2, p.t_p2);
    h = bott.forward(theta, h, p.t_b);
    h = up2->forward(theta, h, p.t_u2);
    p.ca2 = h.dim(1);
    h = dec2.forward(theta, concat_channels(h, p.e2), p.t_d2);
    h = up1->forward(theta, h, p.t_u1);
    p.ca1 = h.dim(1);
    h = dec1.forward(theta, concat_channels(h, p.e1), p.t_d1);
    return head.forward(theta, h, p.t_head);
  }

  void backward(std::span<const float> theta, const Tensor<float>& dlogits, Pass& p,
                std::span<float> dtheta) const {
    TraceReader<float> r_head(p.t_head);
    Tensor<float> d = head.backward(theta, dlogits, r_head, dtheta);

    TraceReader<float> r_d1(p.t_d1);
    d = dec1.backward(theta, d, r_d1, dtheta);
    Tensor<float> d_up1, d_e1;
    split_channels(d, p.ca1, d_up1, d_e1);
    TraceReader<float> r_u1(p.t_u1);
    d = up1->backward(theta, d_up1, r_u1, dtheta);

    TraceReader<float> r_d2(p.t_d2);
    d = dec2.backward(theta, d, r_d2, dtheta);
    Tensor<float> d_up2, d_e2;
    split_channels(d, p.ca2, d_up2, d_e2);
    TraceReader<float> r_u2(p.t_u2);
    d = up2->backward(theta, d_up2, r_u2, dtheta);

    TraceReader<float> r_b(p.t_b);
    d = bott.backward(theta, d, r_b, dtheta);
    TraceReader<float> r_p2(p.t_p2);
    d = pool.backward(theta, d, r_p2, dtheta);
    for (size_t i = 0; i < d.v.size(); ++i) d.v[i] += d_e2.v[i];
    TraceReader<float> r_e2(p.t_e2);
    d = enc2.backward(theta, d, r_e2, dtheta);
    TraceReader<float> r_p1(p.t_p1);
    d = pool.backward(theta, d, r_p1, dtheta);
    for (size_t i = 0; i < d.v.size(); ++i) d.v[i] += d_e1.v[i];
    TraceReader<float> r_e1(p.t_e1);
    enc1.backward(theta, d, r_e1, dtheta);
  }
};

UNetModel build_unet(int input_size, int base_channels, const models::TrainingConfig& config) {
  if (input_size % 4 != 0)
    throw ConfigError("unet input size must be divisible by 4 (two poolings)");
  UNetModel m;
  m.base_channels = base_channels;
  m.input_size = input_size;
  m.config = config;
  Pcg32 rng(config.seed, 0x0415);
  m.net = std::make_shared<const UNetModel::Net>(m.params, base_channels, rng);
  return m;
}

UNetModel train_unet(const std::vector<Slice>& slices, const std::vector<GroundTruth>& labels,
                     const models::TrainingConfig& config, int base_channels) {
  if (slices.empty() || slices.size() != labels.size())
    throw ValidationError("train_unet needs matched slices and labels");
  bool any_positive = false;
  for (const auto& gt : labels)
    for (uint8_t l : gt.labels.v) any_positive |= (l != 0);
  if (!any_positive)
    throw DegenerateDataError("train_unet: no positive pixels in the training labels");

  UNetModel m = build_unet(slices.front().pixels.rows, base_channels, config);

  std::vector<Tensor<float>> xs, ys, masks;
  for (size_t i = 0; i < slices.size(); ++i) {
    if (!slices[i].pixels.same_shape(labels[i].labels))
      throw ValidationError("train_unet: label shape differs from slice");
    xs.push_back(models::slice_to_tensor(slices[i]));
    ys.push_back(gt_to_tensor(labels[i]));
    masks.push_back(models::mask_to_tensor(slices[i]));
  }

  nn::Adam<float> adam(m.params.size(), config.lr);
  const int threads = std::max(1, config.threads);
  std::vector<std::vector<float>> grads(threads, m.params.zeros_like());
  std::vector<double> losses(threads, 0.0);

  std::vector<int> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  const size_t hw = xs.front().v.size();

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Pcg32 shuffle_rng(config.seed ^ 0xD1CE, epoch);
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[shuffle_rng.next_below(static_cast<uint32_t>(i))]);

    double epoch_loss = 0.0;
    int count = 0;
    for (size_t lo = 0; lo < idx.size(); lo += config.batch_size) {
      const int hi = static_cast<int>(std::min(lo + config.batch_size, idx.size()));
      const int n = hi - static_cast<int>(lo);
      for (auto& g : grads) std::fill(g.begin(), g.end(), 0.f);
      std::fill(losses.begin(), losses.end(), 0.0);

      parallel_chunks(n, threads, [&](int t, int clo, int chi) {
        if (clo >= chi) return;
        const int cn = chi - clo;
        Tensor<float> bx({cn, 1, m.input_size, m.input_size});
        Tensor<float> by = bx, bm = bx;
        for (int i = 0; i < cn; ++i) {
          const int s = idx[lo + clo + i];
          std::copy(xs[s].v.begin(), xs[s].v.end(), bx.v.begin() + i * hw);
          std::copy(ys[s].v.begin(), ys[s].v.end(), by.v.begin() + i * hw);
          std::copy(masks[s].v.begin(), masks[s].v.end(), bm.v.begin() + i * hw);
        }
        UNetModel::Net::Pass pass;
        Tensor<float> logits = m.net->forward(m.params.values, bx, pass);
        Tensor<float> dlogits(logits.shape);
        const float w = static_cast<float>(cn) / n;
        const double loss =
            nn::bce_with_logits_masked<float>(logits, by, bm, &dlogits, w);
        m.net->backward(m.params.values, dlogits, pass, grads[t]);
        losses[t] = w * loss;
      });
      for (int t = 1; t < threads; ++t)
        for (size_t i = 0; i < grads[0].size(); ++i) grads[0][i] += grads[t][i];
      adam.step(m.params.values, grads[0]);

      double loss = 0;
      for (double l : losses) loss += l;
      if (!std::isfinite(loss)) throw TrainingDiverged("unet loss became non-finite");
      epoch_loss += loss * n;
      count += n;
    }
    m.loss_history.push_back(epoch_loss / std::max(count, 1));
  }
  return m;
}

Grid<float> predict(const UNetModel& model, const Slice& slice) {
  if (slice.pixels.rows % 4 != 0 || slice.pixels.cols % 4 != 0)
    throw ValidationError("unet predict: size must be divisible by 4");
  Tensor<float> x = models::slice_to_tensor(slice);
  UNetModel::Net::Pass pass;
  Tensor<float> logits = model.net->forward(model.params.values, x, pass);
  Grid<float> probs(slice.pixels.rows, slice.pixels.cols, 0.f);
  for (size_t i = 0; i < probs.v.size(); ++i)
    probs.v[i] = 1.f / (1.f + std::exp(-logits.v[i]));
  return probs;
}

eval::DifferenceMap probability_map(const UNetModel& model, const Slice& slice) {
  eval::DifferenceMap map;
  map.scores = predict(model, slice);
  map.mask = slice.mask;
  map.source = "UNET";
  for (size_t i = 0; i < map.scores.v.size(); ++i)
    if (!slice.mask.v[i]) map.scores.v[i] = 0.f;
  return map;
}

void save_checkpoint(const fs::path& dir, const UNetModel& model) {
  fs::create_directories(dir / "params");
  json params = json::array();
  for (const auto& nm : model.params.names)
    params.push_back({{"name", nm.name}, {"shape", nm.shape}, {"file", "params/" + nm.name + ".f32"}});
  json doc = {{"kind", "UNET"},
              {"input_size", model.input_size},
              {"base_channels", model.base_channels},
              {"seed", model.config.seed},
              {"loss_history", model.loss_history},
              {"params", params}};
  for (const auto& nm : model.params.names) {
    std::ofstream f(dir / "params" / (nm.name + ".f32"), std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write unet checkpoint in " + dir.string());
    f.write(reinterpret_cast<const char*>(model.params.values.data() + nm.offset),
            static_cast<std::streamsize>(Tensor<float>::numel(nm.shape) * sizeof(float)));
  }
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  f << doc.dump(2) << "\n";
}

UNetModel load_checkpoint(const fs::path& dir) {
  json doc;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("no unet checkpoint manifest in " + dir.string());
    f >> doc;
  }
  models::TrainingConfig cfg;
  cfg.seed = doc.at("seed").get<uint64_t>();
  UNetModel m = build_unet(doc.at("input_size").get<int>(), doc.at("base_channels").get<int>(), cfg);
  m.loss_history = doc.value("loss_history", std::vector<double>{});
  for (const auto& nm : m.params.names) {
    std::ifstream f(dir / "params" / (nm.name + ".f32"), std::ios::binary | std::ios::ate);
    if (!f) throw IoError("missing unet parameter raster: " + nm.name);
    const size_t bytes = static_cast<size_t>(Tensor<float>::numel(nm.shape)) * sizeof(float);
    if (static_cast<size_t>(f.tellg()) != bytes)
      throw IntegrityError("unet parameter raster size mismatch: " + nm.name);
    f.seekg(0);
    f.read(reinterpret_cast<char*>(m.params.values.data() + nm.offset),
           static_cast<std::streamsize>(bytes));
  }
  return m;
}

std::string checkpoint_key(int input_size, int base_channels, const models::TrainingConfig& config,
                           const std::string& data_fingerprint) {
  json doc = {{"kind", "UNET"},
              {"input_size", input_size},
              {"base_channels", base_channels},
              {"seed", config.seed},
              {"lr", config.lr},
              {"max_epochs", config.max_epochs},
              {"batch_size", config.batch_size},
              {"threads", config.threads},
              {"data", data_fingerprint}};
  return hex64(fnv1a64(doc.dump()));
}

}  // namespace lesionbench::supervised
