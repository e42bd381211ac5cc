#pragma once

#include <string>
#include <vector>

#include "lesionbench/slice.hpp"

namespace lesionbench::eval {

/// Per-pixel non-negative anomaly scores aligned with a slice.
struct DifferenceMap {
  Grid<float> scores;
  Grid<uint8_t> mask;
  std::string source;
};

void validate_map(const DifferenceMap& map);

/// Points ordered from threshold +inf downwards; starts at (0,0), ends at (1,1).
struct RocCurve {
  std::vector<double> fpr, tpr, thresholds;
};

/// Tied scores flip together (one curve point per distinct score).
RocCurve roc(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

/// Trapezoidal area; equals the Mann-Whitney pairwise statistic with ties at 1/2.
double auc(const RocCurve& curve);

/// 2|a&b| / (|a|+|b|) over in-mask pixels; 1.0 when both sets are empty.
double dice(const Grid<uint8_t>& pred, const Grid<uint8_t>& gt, const Grid<uint8_t>& mask);

struct GridSpec {
  double lo = 0.0, hi = 6.0;
  int points = 1001;

  /// [0, 6] with 1001 grid points, for |x - x'| difference maps.
  static GridSpec difference() { return {0.0, 6.0, 1001}; }
  /// [0, 1] with 400 intervals (401 points), for probability maps.
  static GridSpec probability() { return {0.0, 1.0, 401}; }

  double threshold(int i) const { return lo + (hi - lo) * i / (points - 1); }
};

struct SweepResult {
  std::vector<double> thresholds;
  std::vector<double> dice_per_threshold;
  double best_threshold = 0.0;
  double mdsc = 0.0;
};

/// Max-dice threshold sweep over pooled scores: prediction at threshold t is
/// score > t, dice counted over the pooled in-mask pixels. Smallest t wins ties.
SweepResult max_dice_sweep(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                           const GridSpec& grid);

SweepResult max_dice_sweep(const DifferenceMap& map, const GroundTruth& gt, const GridSpec& grid);

/// Appends the in-mask pixels of one (map, gt) pair to a pooled score/label pair.
void pool(const DifferenceMap& map, const GroundTruth& gt, std::vector<double>& scores,
          std::vector<uint8_t>& labels);

struct Pooled {
  std::vector<double> scores;
  std::vector<uint8_t> labels;
};

Pooled pool_dataset(const std::vector<DifferenceMap>& maps, const std::vector<GroundTruth>& gts);

}  // namespace lesionbench::eval
