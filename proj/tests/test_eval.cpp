#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lesionbench/eval.hpp"

using namespace lesionbench;
using namespace lesionbench::eval;

namespace {

/// O(n^2) Mann-Whitney oracle: P(score_pos > score_neg) with ties at 1/2.
double pairwise_auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  double wins = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

Grid<uint8_t> bits(int h, int w, std::initializer_list<int> ones) {
  Grid<uint8_t> g(h, w, 0);
  for (int i : ones) g.v[i] = 1;
  return g;
}

}  // namespace

TEST_CASE("roc endpoints and tie grouping") {
  SUBCASE("perfect separation passes through (0,1)") {
    auto curve = roc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0});
    bool hits = false;
    for (size_t i = 0; i < curve.fpr.size(); ++i)
      if (curve.fpr[i] == 0.0 && curve.tpr[i] == 1.0) hits = true;
    CHECK(hits);
    CHECK(auc(curve) == doctest::Approx(1.0));
  }

  SUBCASE("all-tied scores collapse to the endpoints") {
    auto curve = roc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
    REQUIRE(curve.fpr.size() == 2);
    CHECK(curve.fpr.front() == 0.0);
    CHECK(curve.tpr.front() == 0.0);
    CHECK(curve.fpr.back() == 1.0);
    CHECK(curve.tpr.back() == 1.0);
    CHECK(auc(curve) == doctest::Approx(0.5));
  }

  SUBCASE("worked example: auc 0.75") {
    auto curve = roc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
    CHECK(auc(curve) == doctest::Approx(0.75));
  }

  SUBCASE("single-class labels are rejected") {
    CHECK_THROWS_AS(roc({0.1, 0.2}, {1, 1}), DegenerateDataError);
    CHECK_THROWS_AS(roc({0.1, 0.2}, {0, 0}), DegenerateDataError);
  }

  SUBCASE("curve is monotone and spans [0,0] to [1,1]") {
    Pcg32 rng(77);
    std::vector<double> s;
    std::vector<uint8_t> l;
    for (int i = 0; i < 500; ++i) {
      s.push_back(rng.next_below(50) / 10.0);  // plenty of ties
      l.push_back(rng.next_below(5) == 0);
    }
    auto curve = roc(s, l);
    CHECK(curve.fpr.front() == 0.0);
    CHECK(curve.tpr.front() == 0.0);
    CHECK(curve.fpr.back() == 1.0);
    CHECK(curve.tpr.back() == 1.0);
    for (size_t i = 1; i < curve.fpr.size(); ++i) {
      CHECK(curve.fpr[i] >= curve.fpr[i - 1]);
      CHECK(curve.tpr[i] >= curve.tpr[i - 1]);
    }
  }
}

TEST_CASE("trapezoidal auc equals the pairwise oracle within 1e-9") {
  Pcg32 rng(101);
  for (int inst = 0; inst < 60; ++inst) {
    const int n = 20 + static_cast<int>(rng.next_below(200));
    std::vector<double> s;
    std::vector<uint8_t> l;
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      // mix continuous scores with deliberate ties
      s.push_back(rng.next_below(3) == 0 ? rng.next_below(8) * 0.125 : rng.next_double());
      l.push_back(rng.next_below(3) == 0);
      pos += l.back();
    }
    if (pos == 0 || pos == n) continue;
    CHECK(auc(roc(s, l)) == doctest::Approx(pairwise_auc(s, l)).epsilon(1e-9));
  }
}

TEST_CASE("auc is invariant under strictly monotone transforms") {
  Pcg32 rng(55);
  std::vector<double> s;
  std::vector<uint8_t> l;
  for (int i = 0; i < 400; ++i) {
    s.push_back(rng.next_double() * 3.0);
    l.push_back(rng.next_below(4) == 0);
  }
  const double a = auc(roc(s, l));
  std::vector<double> squared;
  for (double v : s) squared.push_back(v * v);
  CHECK(std::fabs(auc(roc(squared, l)) - a) < 1e-12);
}

TEST_CASE("auc complement identity without ties") {
  Pcg32 rng(66);
  std::vector<double> s;
  std::vector<uint8_t> l;
  for (int i = 0; i < 300; ++i) {
    s.push_back(rng.next_double());
    l.push_back(rng.next_below(3) == 0);
  }
  std::vector<double> neg;
  for (double v : s) neg.push_back(-v);
  CHECK(auc(roc(neg, l)) == doctest::Approx(1.0 - auc(roc(s, l))).epsilon(1e-12));
}

TEST_CASE("dice") {
  Grid<uint8_t> mask(3, 4, 1);

  SUBCASE("equal nonempty sets give 1") {
    auto a = bits(3, 4, {0, 1, 5});
    CHECK(dice(a, a, mask) == 1.0);
  }
  SUBCASE("disjoint nonempty sets give 0") {
    CHECK(dice(bits(3, 4, {0, 1}), bits(3, 4, {5, 6}), mask) == 0.0);
  }
  SUBCASE("hand-counted overlap") {
    auto pred = bits(3, 4, {0, 1, 2, 3});
    auto gt = bits(3, 4, {2, 3, 4, 5});
    CHECK(dice(pred, gt, mask) == doctest::Approx(0.5));
  }
  SUBCASE("both empty is defined as 1") {
    CHECK(dice(bits(3, 4, {}), bits(3, 4, {}), mask) == 1.0);
  }
  SUBCASE("symmetry") {
    auto a = bits(3, 4, {0, 2, 7});
    auto b = bits(3, 4, {2, 7, 9, 10});
    CHECK(dice(a, b, mask) == dice(b, a, mask));
  }
  SUBCASE("pixels outside the mask are ignored") {
    Grid<uint8_t> partial(3, 4, 0);
    partial.v[2] = partial.v[3] = 1;
    auto pred = bits(3, 4, {0, 2});
    auto gt = bits(3, 4, {2, 11});
    CHECK(dice(pred, gt, partial) == doctest::Approx(1.0));
  }
}

TEST_CASE("max dice sweep") {
  SUBCASE("binary scores reach 1.0 on the difference grid") {
    std::vector<double> s{0, 1, 0, 1, 1};
    std::vector<uint8_t> l{0, 1, 0, 1, 1};
    auto grid = GridSpec::difference();
    auto res = max_dice_sweep(s, l, grid);
    CHECK(res.mdsc == doctest::Approx(1.0));
    // dice is 1.0 at every grid threshold inside (0,1)
    for (int i = 0; i < grid.points; ++i) {
      const double t = grid.threshold(i);
      if (t > 0.0 && t < 1.0) CHECK(res.dice_per_threshold[i] == doctest::Approx(1.0));
    }
    CHECK(res.best_threshold < 1.0);  // smallest threshold wins ties
  }

  SUBCASE("grid spec matches the documented reading") {
    const auto diff = GridSpec::difference();
    CHECK(diff.points == 1001);
    CHECK(diff.threshold(0) == 0.0);
    CHECK(diff.threshold(1000) == 6.0);
    CHECK(diff.threshold(1) == doctest::Approx(0.006));
    const auto prob = GridSpec::probability();
    CHECK(prob.points == 401);
    CHECK(prob.threshold(1) == doctest::Approx(0.0025));
  }

  SUBCASE("mdsc is the brute-force max over the grid, bit-exact") {
    Pcg32 rng(31);
    for (int inst = 0; inst < 20; ++inst) {
      std::vector<double> s;
      std::vector<uint8_t> l;
      for (int i = 0; i < 300; ++i) {
        s.push_back(rng.next_double() * 6.0);
        l.push_back(rng.next_below(4) == 0);
      }
      auto grid = GridSpec::difference();
      auto res = max_dice_sweep(s, l, grid);
      double best = -1, best_t = 0;
      for (int g = 0; g < grid.points; ++g) {
        const double t = grid.threshold(g);
        int64_t np = 0, ng = 0, tp = 0;
        for (size_t i = 0; i < s.size(); ++i) {
          const bool p = s[i] > t;
          np += p;
          ng += l[i];
          tp += (p && l[i]);
        }
        const double d = (np + ng) == 0 ? 1.0 : 2.0 * tp / static_cast<double>(np + ng);
        CHECK(res.dice_per_threshold[g] == d);
        if (d > best) {
          best = d;
          best_t = t;
        }
      }
      CHECK(res.mdsc == best);
      CHECK(res.best_threshold == best_t);
    }
  }

  SUBCASE("mdsc dominates any single-threshold dice") {
    Pcg32 rng(32);
    std::vector<double> s;
    std::vector<uint8_t> l;
    for (int i = 0; i < 200; ++i) {
      s.push_back(rng.next_double() * 2.0);
      l.push_back(rng.next_below(5) == 0);
    }
    auto res = max_dice_sweep(s, l, GridSpec::difference());
    for (double d : res.dice_per_threshold) CHECK(res.mdsc >= d);
  }

  SUBCASE("doubling grid density never lowers mdsc") {
    Pcg32 rng(33);
    for (int inst = 0; inst < 50; ++inst) {
      std::vector<double> s;
      std::vector<uint8_t> l;
      for (int i = 0; i < 120; ++i) {
        s.push_back(rng.next_double() * 6.0);
        l.push_back(rng.next_below(4) == 0);
      }
      GridSpec coarse{0.0, 6.0, 501};
      GridSpec fine{0.0, 6.0, 1001};
      CHECK(max_dice_sweep(s, l, fine).mdsc >= max_dice_sweep(s, l, coarse).mdsc);
    }
  }
}

TEST_CASE("pooling") {
  DifferenceMap m1;
  m1.scores = Grid<float>(2, 2, 0.f);
  m1.scores.v = {0.1f, 0.2f, 0.3f, 0.4f};
  m1.mask = Grid<uint8_t>(2, 2, 1);
  m1.mask.v[3] = 0;
  GroundTruth g1{bits(2, 2, {1})};

  DifferenceMap m2;
  m2.scores = Grid<float>(2, 2, 0.f);
  m2.scores.v = {0.5f, 0.6f, 0.7f, 0.8f};
  m2.mask = Grid<uint8_t>(2, 2, 1);
  GroundTruth g2{bits(2, 2, {0, 2})};

  SUBCASE("single slice pools its in-mask pixels in order") {
    std::vector<double> s;
    std::vector<uint8_t> l;
    pool(m1, g1, s, l);
    CHECK(s == std::vector<double>{0.1f, 0.2f, 0.3f});
    CHECK(l == std::vector<uint8_t>{0, 1, 0});
  }

  SUBCASE("two slices concatenate") {
    auto pooled = pool_dataset({m1, m2}, {g1, g2});
    CHECK(pooled.scores.size() == 3 + 4);
    CHECK(pooled.labels.size() == 7);
  }

  SUBCASE("pooled auc equals an independent streaming pass") {
    auto pooled = pool_dataset({m1, m2}, {g1, g2});
    const double a = auc(roc(pooled.scores, pooled.labels));
    // oracle: direct pairwise counting over both maps without the pool step
    std::vector<double> s;
    std::vector<uint8_t> l;
    for (size_t i = 0; i < m1.scores.v.size(); ++i)
      if (m1.mask.v[i]) {
        s.push_back(m1.scores.v[i]);
        l.push_back(g1.labels.v[i]);
      }
    for (size_t i = 0; i < m2.scores.v.size(); ++i)
      if (m2.mask.v[i]) {
        s.push_back(m2.scores.v[i]);
        l.push_back(g2.labels.v[i]);
      }
    CHECK(a == doctest::Approx(pairwise_auc(s, l)).epsilon(1e-12));
  }

  SUBCASE("empty pool is an error") {
    CHECK_THROWS_AS(pool_dataset({}, {}), DegenerateDataError);
  }

  SUBCASE("negative scores are rejected") {
    DifferenceMap bad = m1;
    bad.scores.v[0] = -0.5f;
    std::vector<double> s;
    std::vector<uint8_t> l;
    CHECK_THROWS_AS(pool(bad, g1, s, l), ValidationError);
  }
}
