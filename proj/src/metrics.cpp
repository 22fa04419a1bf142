#include "pecad/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pecad::metrics {

namespace {
double ratio_or_zero(double num, double den) { return den > 0 ? num / den : 0.0; }
}  // namespace

std::pair<ConfusionCounts, ClassWeights> confusion_from_predictions(
    const std::vector<int>& labels, const std::vector<int>& preds) {
  if (labels.empty()) throw std::invalid_argument("confusion: empty input");
  if (labels.size() != preds.size()) {
    throw std::invalid_argument("confusion: labels/preds length mismatch");
  }
  ConfusionCounts c;
  long n_pe = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    int l = labels[i], p = preds[i];
    if ((l != 0 && l != 1) || (p != 0 && p != 1)) {
      throw std::invalid_argument("confusion: labels/preds must be in {0,1}");
    }
    n_pe += l;
    if (l == 1 && p == 1) ++c.tp1;
    if (l == 0 && p == 1) ++c.fp1;
    if (l == 1 && p == 0) ++c.fn1;
    if (l == 0 && p == 0) ++c.tp0;
    if (l == 1 && p == 0) ++c.fp0;
    if (l == 0 && p == 1) ++c.fn0;
  }
  ClassWeights w;
  w.w1 = static_cast<double>(n_pe) / static_cast<double>(labels.size());
  w.w0 = 1.0 - w.w1;
  return {c, w};
}

double weighted_precision(const ConfusionCounts& c, const ClassWeights& w) {
  return ratio_or_zero(c.tp0, c.tp0 + c.fp0) * w.w0 +
         ratio_or_zero(c.tp1, c.tp1 + c.fp1) * w.w1;
}

double weighted_recall(const ConfusionCounts& c, const ClassWeights& w) {
  return ratio_or_zero(c.tp0, c.tp0 + c.fn0) * w.w0 +
         ratio_or_zero(c.tp1, c.tp1 + c.fn1) * w.w1;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("roc_auc: bad input sizes");
  }
  long n_pos = 0;
  for (int l : labels) n_pos += (l == 1);
  long n_neg = static_cast<long>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("roc_auc: both classes must be present");
  }

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Midrank sum over positives; ties share the average rank of their run.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

PatientMetrics patient_metrics(const PatientConfusion& pc) {
  PatientMetrics m;
  m.sensitivity = ratio_or_zero(pc.tp, pc.tp + pc.fn);
  m.specificity = ratio_or_zero(pc.tn, pc.tn + pc.fp);
  m.ppv = ratio_or_zero(pc.tp, pc.tp + pc.fp);
  m.npv = ratio_or_zero(pc.tn, pc.tn + pc.fn);
  return m;
}

double mean_iou(const std::vector<data::Mask2D>& pred_masks,
                const std::vector<data::Mask2D>& target_masks) {
  if (pred_masks.empty() || pred_masks.size() != target_masks.size()) {
    throw std::invalid_argument("mean_iou: bad list sizes");
  }
  double total = 0.0;
  for (size_t i = 0; i < pred_masks.size(); ++i) {
    const auto& p = pred_masks[i];
    const auto& t = target_masks[i];
    if (p.rows != t.rows || p.cols != t.cols) {
      throw std::invalid_argument("mean_iou: mask shape mismatch at index " +
                                  std::to_string(i));
    }
    long inter = 0, uni = 0;
    for (size_t k = 0; k < p.v.size(); ++k) {
      bool a = p.v[k] != 0, b = t.v[k] != 0;
      inter += (a && b);
      uni += (a || b);
    }
    total += (uni == 0) ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(pred_masks.size());
}

}  // namespace pecad::metrics
