#include "lesionbench/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lesionbench::baselines {

namespace {

constexpr double kLogTwoPiHalf = 0.91893853320467274178;  // 0.5*log(2*pi)

double log_gauss(double x, double mean, double std) {
  const double z = (x - mean) / std;
  return -0.5 * z * z - std::log(std) - kLogTwoPiHalf;
}

std::vector<float> pooled_in_mask(const std::vector<Slice>& slices) {
  std::vector<float> pool;
  for (const auto& s : slices)
    for (size_t i = 0; i < s.pixels.v.size(); ++i)
      if (s.mask.v[i]) pool.push_back(s.pixels.v[i]);
  if (pool.empty()) throw DegenerateDataError("no in-mask pixels to pool");
  return pool;
}

/// Deterministic K-quantile initialization shared by both EM entry points.
void init_components(const std::vector<float>& values, int k, std::vector<double>& means,
                     std::vector<double>& stds) {
  std::vector<float> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0, ss = 0.0;
  for (float v : sorted) sum += v;
  const double mean = sum / sorted.size();
  for (float v : sorted) ss += (v - mean) * (v - mean);
  const double pooled_std = std::sqrt(std::max(ss / sorted.size(), 1e-12));

  means.resize(k);
  stds.resize(k);
  for (int i = 0; i < k; ++i) {
    const auto q = static_cast<size_t>((i + 0.5) / k * (sorted.size() - 1));
    means[i] = sorted[q];
    stds[i] = std::max(pooled_std / k, 1e-3);
  }
}

}  // namespace

MeanModel fit_mean_model(const std::vector<Slice>& train) {
  if (train.empty()) throw DegenerateDataError("fit_mean_model needs at least one slice");
  const int h = train.front().pixels.rows, w = train.front().pixels.cols;
  Grid<double> acc(h, w, 0.0);
  for (const auto& s : train) {
    if (!s.pixels.same_shape(h, w))
      throw ValidationError("fit_mean_model requires a uniform slice shape");
    for (size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += s.pixels.v[i];
  }
  MeanModel m;
  m.mu = Grid<float>(h, w);
  m.sigma = Grid<float>(h, w, 1.f);
  for (size_t i = 0; i < acc.v.size(); ++i)
    m.mu.v[i] = static_cast<float>(acc.v[i] / static_cast<double>(train.size()));
  return m;
}

eval::DifferenceMap score_mean(const MeanModel& model, const Slice& slice, bool use_sigma_map) {
  if (!model.mu.same_shape(slice.pixels))
    throw ValidationError("score_mean: model and slice shapes differ");
  eval::DifferenceMap map;
  map.scores = Grid<float>(slice.pixels.rows, slice.pixels.cols, 0.f);
  map.mask = slice.mask;
  map.source = "mean";
  for (size_t i = 0; i < map.scores.v.size(); ++i) {
    if (!slice.mask.v[i]) continue;
    float d = std::fabs(slice.pixels.v[i] - model.mu.v[i]);
    if (use_sigma_map) d /= std::max(model.sigma.v[i], 1e-6f);
    map.scores.v[i] = d;
  }
  return map;
}

void validate_prior(const SpatialPrior& prior) {
  if (prior.components < 2 || static_cast<int>(prior.phi.size()) != prior.components)
    throw ValidationError("spatial prior needs >= 2 component grids");
  const auto& first = prior.phi.front();
  for (const auto& g : prior.phi)
    if (!g.same_shape(first)) throw ValidationError("spatial prior grids differ in shape");
  for (size_t i = 0; i < first.v.size(); ++i) {
    double sum = 0.0;
    for (const auto& g : prior.phi) {
      if (g.v[i] < 0.f) throw ValidationError("spatial prior has a negative weight");
      sum += g.v[i];
    }
    if (std::fabs(sum - 1.0) > 1e-6)
      throw ValidationError("spatial prior rows must sum to 1");
  }
}

GlobalMixture fit_global_mixture(const std::vector<Slice>& train, int components, int max_iter,
                                 double tol) {
  if (components < 1) throw ConfigError("global mixture needs >= 1 component");
  const auto pool = pooled_in_mask(train);

  // EM over a fine histogram of the pooled intensities; with ~4k bins the
  // quantization is far below the component separations we care about.
  const auto [lo_it, hi_it] = std::minmax_element(pool.begin(), pool.end());
  const double lo = *lo_it, hi = *hi_it;
  const int bins = 4096;
  const double width = (hi > lo) ? (hi - lo) / bins : 1.0;
  std::vector<double> count(bins, 0.0), center(bins);
  for (int b = 0; b < bins; ++b) center[b] = lo + (b + 0.5) * width;
  for (float v : pool) {
    int b = static_cast<int>((v - lo) / width);
    count[std::clamp(b, 0, bins - 1)] += 1.0;
  }
  const double total = static_cast<double>(pool.size());

  GlobalMixture gm;
  // Evenly spaced means over the pooled range: quantile seeding collapses two
  // components onto the dominant tissue mode when region areas are imbalanced.
  init_components(pool, components, gm.means, gm.stds);
  for (int i = 0; i < components; ++i)
    gm.means[i] = lo + (hi - lo) * (2 * i + 1) / (2.0 * components);
  gm.weights.assign(components, 1.0 / components);

  std::vector<std::vector<double>> resp(components, std::vector<double>(bins));
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iter; ++iter) {
    double ll = 0.0;
    for (int b = 0; b < bins; ++b) {
      if (count[b] == 0.0) continue;
      double mx = -std::numeric_limits<double>::infinity();
      std::vector<double> lt(components);
      for (int k = 0; k < components; ++k) {
        lt[k] = std::log(std::max(gm.weights[k], 1e-300)) + log_gauss(center[b], gm.means[k], gm.stds[k]);
        mx = std::max(mx, lt[k]);
      }
      double z = 0.0;
      for (int k = 0; k < components; ++k) z += std::exp(lt[k] - mx);
      const double lse = mx + std::log(z);
      ll += count[b] * lse;
      for (int k = 0; k < components; ++k) resp[k][b] = std::exp(lt[k] - lse);
    }
    if (iter > 0 && std::fabs(ll - prev_ll) < tol * (std::fabs(ll) + 1e-12)) break;
    prev_ll = ll;

    for (int k = 0; k < components; ++k) {
      double nk = 0.0, mk = 0.0;
      for (int b = 0; b < bins; ++b) {
        nk += resp[k][b] * count[b];
        mk += resp[k][b] * count[b] * center[b];
      }
      if (nk <= 1e-9) {
        gm.degenerate = true;
        continue;
      }
      const double mean = mk / nk;
      double vk = 0.0;
      for (int b = 0; b < bins; ++b)
        vk += resp[k][b] * count[b] * (center[b] - mean) * (center[b] - mean);
      double std = std::sqrt(vk / nk);
      if (std < 1e-4) {
        std = 1e-4;
        gm.degenerate = true;
      }
      gm.means[k] = mean;
      gm.stds[k] = std;
      gm.weights[k] = nk / total;
    }
  }

  // sort components by mean so identity is stable across fits
  std::vector<int> idx(components);
  for (int i = 0; i < components; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return gm.means[a] < gm.means[b]; });
  GlobalMixture sorted;
  sorted.degenerate = gm.degenerate;
  for (int i : idx) {
    sorted.means.push_back(gm.means[i]);
    sorted.stds.push_back(gm.stds[i]);
    sorted.weights.push_back(gm.weights[i]);
  }
  return sorted;
}

SpatialPrior build_spatial_prior(const std::vector<Slice>& train, int components) {
  if (components < 2) throw ConfigError("spatial prior needs K >= 2");
  if (train.empty()) throw DegenerateDataError("build_spatial_prior needs training slices");
  const int h = train.front().pixels.rows, w = train.front().pixels.cols;
  for (const auto& s : train)
    if (!s.pixels.same_shape(h, w))
      throw ValidationError("build_spatial_prior requires a uniform slice shape");

  const GlobalMixture gm = fit_global_mixture(train, components);

  SpatialPrior prior;
  prior.components = components;
  prior.phi.assign(components, Grid<float>(h, w, 0.f));
  Grid<double> seen(h, w, 0.0);
  std::vector<Grid<double>> acc(components, Grid<double>(h, w, 0.0));

  std::vector<double> lt(components);
  for (const auto& s : train) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (!s.mask(r, c)) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < components; ++k) {
          lt[k] = std::log(std::max(gm.weights[k], 1e-300)) +
                  log_gauss(s.pixels(r, c), gm.means[k], gm.stds[k]);
          mx = std::max(mx, lt[k]);
        }
        double z = 0.0;
        for (int k = 0; k < components; ++k) z += std::exp(lt[k] - mx);
        for (int k = 0; k < components; ++k) acc[k](r, c) += std::exp(lt[k] - mx) / z;
        seen(r, c) += 1.0;
      }
  }

  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (seen(r, c) == 0.0) {
        for (int k = 0; k < components; ++k) prior.phi[k](r, c) = 1.f / components;
        continue;
      }
      // renormalize to absorb float rounding
      double sum = 0.0;
      for (int k = 0; k < components; ++k) sum += acc[k](r, c);
      for (int k = 0; k < components; ++k)
        prior.phi[k](r, c) = static_cast<float>(acc[k](r, c) / sum);
    }
  validate_prior(prior);
  return prior;
}

GmmFit em_fit(const Slice& slice, const SpatialPrior& prior, const EmOptions& opt) {
  validate_slice(slice);
  if (opt.lambda_out < 0.0) throw ConfigError("lambda_out must be >= 0");
  if (static_cast<int>(prior.phi.size()) != opt.components)
    throw ValidationError("prior component count differs from EM options");
  if (!prior.phi.front().same_shape(slice.pixels))
    throw ValidationError("prior shape differs from slice");

  const int h = slice.pixels.rows, w = slice.pixels.cols;
  const int K = opt.components;

  std::vector<float> in_mask;
  std::vector<int> px;
  for (int i = 0; i < h * w; ++i)
    if (slice.mask.v[i]) {
      in_mask.push_back(slice.pixels.v[i]);
      px.push_back(i);
    }

  GmmFit fit;
  fit.lambda_out = opt.lambda_out;
  init_components(in_mask, K, fit.means, fit.stds);
  for (auto& s : fit.stds) s = std::max(s, opt.sigma_floor);
  fit.responsibilities.assign(K + 1, Grid<float>(h, w, 0.f));

  const double log_lambda =
      opt.lambda_out > 0.0 ? std::log(opt.lambda_out) : -std::numeric_limits<double>::infinity();
  const size_t n = in_mask.size();
  std::vector<double> resp((K + 1) * n);
  std::vector<double> lt(K + 1);

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    // E-step in log space; the outlier slot has constant likelihood lambda.
    double ll = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double mx = log_lambda;
      for (int k = 0; k < K; ++k) {
        const float phi = prior.phi[k].v[px[j]];
        lt[k] = phi > 0.f ? std::log(static_cast<double>(phi)) +
                                log_gauss(in_mask[j], fit.means[k], fit.stds[k])
                          : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, lt[k]);
      }
      lt[K] = log_lambda;
      double z = 0.0;
      for (int k = 0; k <= K; ++k) z += std::exp(lt[k] - mx);
      const double lse = mx + std::log(z);
      ll += lse;
      for (int k = 0; k <= K; ++k) resp[k * n + j] = std::exp(lt[k] - lse);
    }
    fit.log_likelihood_trace.push_back(ll);
    fit.iterations = iter + 1;

    const bool converged =
        fit.log_likelihood_trace.size() > 1 &&
        std::fabs(ll - fit.log_likelihood_trace[fit.log_likelihood_trace.size() - 2]) <
            opt.tol * (std::fabs(ll) + 1e-12);
    if (converged || iter == opt.max_iter - 1) break;

    // M-step over the K tissue components only.
    for (int k = 0; k < K; ++k) {
      double nk = 0.0, mk = 0.0;
      for (size_t j = 0; j < n; ++j) {
        nk += resp[k * n + j];
        mk += resp[k * n + j] * in_mask[j];
      }
      if (nk <= 1e-12) continue;  // dead component keeps its parameters
      const double mean = mk / nk;
      double vk = 0.0;
      for (size_t j = 0; j < n; ++j) {
        const double d = in_mask[j] - mean;
        vk += resp[k * n + j] * d * d;
      }
      double std = std::sqrt(vk / nk);
      if (std < opt.sigma_floor) {
        std = opt.sigma_floor;
        fit.variance_floor_hit = true;
      }
      fit.means[k] = mean;
      fit.stds[k] = std;
    }
  }

  for (int k = 0; k <= K; ++k)
    for (size_t j = 0; j < n; ++j)
      fit.responsibilities[k].v[px[j]] = static_cast<float>(resp[k * n + j]);
  return fit;
}

eval::DifferenceMap outlier_map(const GmmFit& fit, const Grid<uint8_t>& mask) {
  if (fit.responsibilities.empty())
    throw ValidationError("outlier_map needs a fitted model");
  const auto& out_resp = fit.responsibilities.back();
  if (!out_resp.same_shape(mask)) throw ValidationError("outlier_map: mask shape differs");
  eval::DifferenceMap map;
  map.scores = Grid<float>(mask.rows, mask.cols, 0.f);
  map.mask = mask;
  map.source = "gmm";
  for (size_t i = 0; i < map.scores.v.size(); ++i)
    if (mask.v[i]) map.scores.v[i] = std::clamp(out_resp.v[i], 0.f, 1.f);
  return map;
}

}  // namespace lesionbench::baselines
