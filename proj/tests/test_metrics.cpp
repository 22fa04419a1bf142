#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracle_helpers.hpp"
#include "pecad/metrics.hpp"
#include "pecad/rng.hpp"

using namespace pecad;
using namespace pecad::metrics;

TEST_CASE("confusion tally on the worked example") {
  std::vector<int> labels{1, 1, 0, 0, 0};
  std::vector<int> preds{1, 0, 1, 0, 0};
  auto [c, w] = confusion_from_predictions(labels, preds);
  CHECK(c.tp1 == 1);
  CHECK(c.fp1 == 1);
  CHECK(c.fn1 == 1);
  CHECK(c.tp0 == 2);
  CHECK(c.fp0 == 1);
  CHECK(c.fn0 == 1);
  CHECK(w.w1 == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(w.w0 == doctest::Approx(0.6).epsilon(1e-12));
  // Binary duality: fp1 = fn0 and fn1 = fp0.
  CHECK(c.fp1 == c.fn0);
  CHECK(c.fn1 == c.fp0);

  CHECK(weighted_precision(c, w) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(weighted_recall(c, w) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("perfect and inverted predictions") {
  std::vector<int> labels{1, 0, 1, 0, 1};
  auto [cp, wp] = confusion_from_predictions(labels, labels);
  CHECK(cp.fp1 == 0);
  CHECK(cp.fn1 == 0);
  CHECK(cp.fp0 == 0);
  CHECK(cp.fn0 == 0);
  CHECK(cp.tp1 == 3);
  CHECK(weighted_precision(cp, wp) == doctest::Approx(1.0));
  CHECK(weighted_recall(cp, wp) == doctest::Approx(1.0));

  std::vector<int> inverted;
  for (int l : labels) inverted.push_back(1 - l);
  auto [ci, wi] = confusion_from_predictions(labels, inverted);
  CHECK(ci.tp1 == 0);
  CHECK(ci.tp0 == 0);
  CHECK(weighted_precision(ci, wi) == doctest::Approx(0.0));
}

TEST_CASE("weighted precision/recall match the brute-force oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = rng.uniform_int(2, 60);
    std::vector<int> labels(n), preds(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = rng.bernoulli(0.35) ? 1 : 0;
      preds[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    auto [c, w] = confusion_from_predictions(labels, preds);
    auto brute = oracle::brute_weighted_pr(labels, preds);
    CHECK(std::abs(weighted_precision(c, w) - brute.precision) < 1e-12);
    CHECK(std::abs(weighted_recall(c, w) - brute.recall) < 1e-12);
    CHECK(w.w0 + w.w1 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("weighted metric edge cases") {
  // All predicted PE: recall collapses to w1.
  std::vector<int> labels{1, 1, 0, 0, 0, 0};
  std::vector<int> preds(labels.size(), 1);
  auto [c, w] = confusion_from_predictions(labels, preds);
  CHECK(weighted_recall(c, w) == doctest::Approx(w.w1).epsilon(1e-12));

  CHECK_THROWS(confusion_from_predictions({}, {}));
  CHECK_THROWS(confusion_from_predictions({1, 0}, {1}));
  CHECK_THROWS(confusion_from_predictions({1, 2}, {1, 0}));
}

TEST_CASE("roc_auc basics") {
  CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == doctest::Approx(0.5));
  CHECK_THROWS(roc_auc({0.1, 0.2}, {1, 1}));
  CHECK_THROWS(roc_auc({}, {}));
}

TEST_CASE("roc_auc equals the pairwise oracle, with ties") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(4, 50);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has0 = false, has1 = false;
    for (int i = 0; i < n; ++i) {
      // Quantized scores force ties.
      scores[i] = rng.uniform_int(0, 9) / 10.0;
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) continue;
    CHECK(std::abs(roc_auc(scores, labels) - oracle::pairwise_auc(scores, labels)) < 1e-9);
  }
}

TEST_CASE("roc_auc invariances") {
  Rng rng(99);
  const int n = 40;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    labels[i] = i % 3 == 0 ? 1 : 0;
  }
  const double base = roc_auc(scores, labels);

  // Strictly increasing transform leaves AUC unchanged.
  std::vector<double> transformed(n);
  for (int i = 0; i < n; ++i) transformed[i] = std::exp(3.0 * scores[i]) + 7.0;
  CHECK(roc_auc(transformed, labels) == doctest::Approx(base).epsilon(1e-12));

  // Complement identity.
  std::vector<int> flipped(n);
  for (int i = 0; i < n; ++i) flipped[i] = 1 - labels[i];
  CHECK(roc_auc(scores, labels) + roc_auc(scores, flipped) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("patient metrics reproduce the reported per-patient arithmetic") {
  PatientConfusion pc{9, 1, 9, 2};  // tp, fp, tn, fn
  auto m = patient_metrics(pc);
  CHECK(std::abs(m.sensitivity - 0.818) < 0.001);
  CHECK(std::abs(m.specificity - 0.900) < 0.001);
  CHECK(m.ppv == doctest::Approx(0.9).epsilon(1e-12));
  // Standard definition gives tn/(tn+fn) = 9/11 here.
  CHECK(m.npv == doctest::Approx(9.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("patient metrics degenerate cases") {
  auto perfect = patient_metrics({5, 0, 7, 0});
  CHECK(perfect.sensitivity == doctest::Approx(1.0));
  CHECK(perfect.specificity == doctest::Approx(1.0));
  CHECK(perfect.ppv == doctest::Approx(1.0));
  CHECK(perfect.npv == doctest::Approx(1.0));

  auto none_pos = patient_metrics({0, 0, 4, 2});
  CHECK(none_pos.ppv == doctest::Approx(0.0));  // zero denominator convention
}

TEST_CASE("mean_iou") {
  data::Mask2D a(2, 2), b(2, 2);
  a.at(0, 0) = 1;
  a.at(0, 1) = 1;
  b.at(0, 1) = 1;
  b.at(1, 1) = 1;
  CHECK(mean_iou({a}, {b}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(mean_iou({a}, {a}) == doctest::Approx(1.0));

  // Both-empty counts as 1; with an IoU-1/2 image the mean is 0.75.
  data::Mask2D empty(2, 2);
  data::Mask2D c(2, 2), d(2, 2);
  c.at(0, 0) = 1;
  d.at(0, 0) = 1;
  d.at(0, 1) = 1;
  CHECK(mean_iou({empty, c}, {empty, d}) == doctest::Approx(0.75).epsilon(1e-12));

  // Symmetry.
  CHECK(mean_iou({a}, {b}) == doctest::Approx(mean_iou({b}, {a})).epsilon(1e-12));

  data::Mask2D wrong(3, 2);
  CHECK_THROWS(mean_iou({a}, {wrong}));
  CHECK_THROWS(mean_iou({}, {}));
}
