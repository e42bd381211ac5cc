#pragma once

#include <vector>

#include "lesionbench/eval.hpp"
#include "lesionbench/slice.hpp"

namespace lesionbench::baselines {

/// Per-pixel Gaussian over healthy intensity; sigma stays 1 unless the
/// sigma-map variant is enabled at scoring time.
struct MeanModel {
  Grid<float> mu;
  Grid<float> sigma;
};

MeanModel fit_mean_model(const std::vector<Slice>& train);

/// score = |x - mu| inside the mask (divided by sigma when use_sigma_map).
eval::DifferenceMap score_mean(const MeanModel& model, const Slice& slice,
                               bool use_sigma_map = false);

/// Location-dependent mixture weights, one grid per component; rows sum to 1
/// at every pixel that was ever inside a training mask, uniform elsewhere.
struct SpatialPrior {
  int components = 0;
  std::vector<Grid<float>> phi;
};

void validate_prior(const SpatialPrior& prior);

/// Global 1D mixture fitted on pooled in-mask intensities.
struct GlobalMixture {
  std::vector<double> means, stds, weights;
  bool degenerate = false;  // a component collapsed or died during EM
};

GlobalMixture fit_global_mixture(const std::vector<Slice>& train, int components,
                                 int max_iter = 200, double tol = 1e-6);

/// Prior weight at pixel j for component i = average over training slices of
/// the global mixture's posterior at j. Components are sorted by mean.
SpatialPrior build_spatial_prior(const std::vector<Slice>& train, int components);

struct EmOptions {
  int components = 3;
  double lambda_out = 0.01;
  double tol = 1e-6;      // relative log-likelihood improvement
  int max_iter = 200;
  double sigma_floor = 1e-4;
};

struct GmmFit {
  std::vector<double> means, stds;
  double lambda_out = 0.0;
  std::vector<Grid<float>> responsibilities;  // K tissue grids then the outlier grid
  std::vector<double> log_likelihood_trace;
  bool variance_floor_hit = false;
  int iterations = 0;
};

/// EM on the K+1-component model: E-step r_i ~ phi_i N(x|mu_i,sigma_i),
/// r_out ~ lambda; M-step updates (mu_i, sigma_i) only. The outlier component
/// has constant likelihood lambda and never enters the M-step.
GmmFit em_fit(const Slice& slice, const SpatialPrior& prior, const EmOptions& opt);

/// Outlier posterior per pixel, in [0,1]; 0 outside the mask.
eval::DifferenceMap outlier_map(const GmmFit& fit, const Grid<uint8_t>& mask);

}  // namespace lesionbench::baselines
