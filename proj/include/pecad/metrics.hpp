#ifndef PECAD_METRICS_HPP_
#define PECAD_METRICS_HPP_

#include <utility>
#include <vector>

#include "pecad/dataset.hpp"

namespace pecad::metrics {

/// Per-class confusion tallies for the binary PE task. Class 1 is PE, class 0
/// is non-PE counted as its own positive: tp0 = non-PE predicted non-PE,
/// fp0 = PE predicted non-PE, fn0 = non-PE predicted PE.
struct ConfusionCounts {
  long tp1 = 0, fp1 = 0, fn1 = 0;
  long tp0 = 0, fp0 = 0, fn0 = 0;
};

/// Image-amount ratios of the two classes; w1 + w0 = 1.
struct ClassWeights {
  double w1 = 0.0;
  double w0 = 0.0;
};

struct PatientConfusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

struct PatientMetrics {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double ppv = 0.0;
  double npv = 0.0;
};

/// Tally confusion counts and label-frequency class weights.
/// labels/preds hold {0,1}; throws on empty or mismatched input.
std::pair<ConfusionCounts, ClassWeights> confusion_from_predictions(
    const std::vector<int>& labels, const std::vector<int>& preds);

/// Class-weighted precision: TP0/(TP0+FP0)*W0 + TP1/(TP1+FP1)*W1.
/// A class term with zero denominator contributes 0.
double weighted_precision(const ConfusionCounts& counts, const ClassWeights& weights);

/// Class-weighted recall: TP0/(TP0+FN0)*W0 + TP1/(TP1+FN1)*W1.
double weighted_recall(const ConfusionCounts& counts, const ClassWeights& weights);

/// Exact ROC AUC as the Mann-Whitney statistic
/// P(score_pos > score_neg) + 0.5 * P(tie), computed by midranks.
/// Throws if either class is absent.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// sensitivity tp/(tp+fn), specificity tn/(tn+fp), ppv tp/(tp+fp),
/// npv tn/(tn+fn); any zero denominator yields 0 for that metric.
PatientMetrics patient_metrics(const PatientConfusion& pc);

/// PE-class IoU per image pair, averaged over images. A pair with both masks
/// empty counts as IoU 1. Throws on shape mismatch or empty list.
double mean_iou(const std::vector<data::Mask2D>& pred_masks,
                const std::vector<data::Mask2D>& target_masks);

}  // namespace pecad::metrics

#endif  // PECAD_METRICS_HPP_
