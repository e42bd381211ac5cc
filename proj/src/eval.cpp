#include "lesionbench/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lesionbench::eval {

void validate_map(const DifferenceMap& map) {
  if (!map.scores.same_shape(map.mask))
    throw ValidationError("difference map and mask shapes differ (" + map.source + ")");
  for (int r = 0; r < map.scores.rows; ++r)
    for (int c = 0; c < map.scores.cols; ++c) {
      const float s = map.scores(r, c);
      if (!std::isfinite(s) || s < 0.f)
        throw ValidationError("difference map must be finite and non-negative (" + map.source +
                              ")");
    }
}

RocCurve roc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw ValidationError("roc: scores and labels differ in length");
  size_t pos = 0;
  for (uint8_t l : labels) pos += (l != 0);
  const size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0)
    throw DegenerateDataError("roc undefined: labels contain a single class");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());

  size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {  // tie group flips together
      if (labels[order[i]]) ++tp;
      else ++fp;
      ++i;
    }
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    curve.thresholds.push_back(s);
  }
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0.0;
  for (size_t i = 1; i < curve.fpr.size(); ++i)
    area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) * 0.5;
  return area;
}

double dice(const Grid<uint8_t>& pred, const Grid<uint8_t>& gt, const Grid<uint8_t>& mask) {
  if (!pred.same_shape(gt) || !pred.same_shape(mask))
    throw ValidationError("dice: shapes differ");
  int64_t np = 0, ng = 0, both = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    if (!mask.v[i]) continue;
    const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    np += p;
    ng += g;
    both += (p && g);
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

SweepResult max_dice_sweep(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                           const GridSpec& grid) {
  if (scores.size() != labels.size())
    throw ValidationError("max_dice_sweep: scores and labels differ in length");
  if (grid.points < 2) throw ConfigError("threshold grid needs at least 2 points");

  // Sort scores descending with positive-count prefix sums, then each grid
  // threshold is two binary searches.
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  std::vector<double> sorted(scores.size());
  std::vector<int64_t> pos_prefix(scores.size() + 1, 0);
  for (size_t i = 0; i < order.size(); ++i) {
    sorted[i] = scores[order[i]];
    pos_prefix[i + 1] = pos_prefix[i] + (labels[order[i]] != 0);
  }
  const int64_t total_pos = pos_prefix.back();

  SweepResult res;
  res.thresholds.resize(grid.points);
  res.dice_per_threshold.resize(grid.points);
  res.mdsc = -1.0;
  for (int i = 0; i < grid.points; ++i) {
    const double t = grid.threshold(i);
    // predictions are scores strictly greater than t: first element <= t ends the run
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), t, std::greater<double>());
    const auto npred = static_cast<int64_t>(it - sorted.begin());
    const int64_t tp = pos_prefix[npred];
    const double d =
        (npred + total_pos == 0) ? 1.0
                                 : 2.0 * static_cast<double>(tp) /
                                       static_cast<double>(npred + total_pos);
    res.thresholds[i] = t;
    res.dice_per_threshold[i] = d;
    if (d > res.mdsc) {  // strict: smallest threshold wins ties
      res.mdsc = d;
      res.best_threshold = t;
    }
  }
  return res;
}

SweepResult max_dice_sweep(const DifferenceMap& map, const GroundTruth& gt, const GridSpec& grid) {
  std::vector<double> scores;
  std::vector<uint8_t> labels;
  pool(map, gt, scores, labels);
  return max_dice_sweep(scores, labels, grid);
}

void pool(const DifferenceMap& map, const GroundTruth& gt, std::vector<double>& scores,
          std::vector<uint8_t>& labels) {
  if (!map.scores.same_shape(gt.labels))
    throw ValidationError("pool: map and ground truth shapes differ");
  validate_map(map);
  for (size_t i = 0; i < map.scores.v.size(); ++i) {
    if (!map.mask.v[i]) continue;
    scores.push_back(map.scores.v[i]);
    labels.push_back(gt.labels.v[i] != 0);
  }
}

Pooled pool_dataset(const std::vector<DifferenceMap>& maps, const std::vector<GroundTruth>& gts) {
  if (maps.size() != gts.size()) throw ValidationError("pool_dataset: size mismatch");
  Pooled p;
  for (size_t i = 0; i < maps.size(); ++i) pool(maps[i], gts[i], p.scores, p.labels);
  if (p.scores.empty()) throw DegenerateDataError("pool_dataset produced an empty pool");
  return p;
}

}  // namespace lesionbench::eval
