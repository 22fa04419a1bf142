#ifndef PECAD_TRAINING_HPP_
#define PECAD_TRAINING_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "pecad/dataset.hpp"
#include "pecad/nn/nets.hpp"
#include <nlohmann/json.hpp>

namespace pecad::train {

enum class LossKind { FOCAL_BCE, BCE_PLUS_DICE };

struct TrainConfig {
  double base_lr = 1e-3;
  int max_epochs = 50;
  int batch_size = 8;
  uint64_t seed = 0;
  LossKind loss = LossKind::FOCAL_BCE;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_smooth = 1.0;
  int lookahead_k = 6;
  double lookahead_alpha = 0.5;
  int early_stop_patience = 10;  // < 1 disables early stopping

  // Rectified-adaptive inner update settings. beta2 = 0.9 keeps the
  // rectification ramp usable at desk-scale step counts (hundreds of steps).
  double beta1 = 0.95;
  double beta2 = 0.9;
  double eps = 1e-5;
  double rect_threshold = 5.0;

  bool cosine_lr = true;        // per-epoch cosine decay of base_lr
  bool augment_flips = false;   // random h/v flips per epoch (segmentation)

  nlohmann::json to_json() const;
};

// ---- losses ----
// Predictions are probabilities; they are clamped to [1e-7, 1-1e-7] before
// logs. Every loss optionally writes dLoss/dpred (mean reduction) into *grad.

double bce(const nn::Tensor& pred, const nn::Tensor& target, nn::Tensor* grad = nullptr);

/// Mean of -alpha_t * (1-p_t)^gamma * log(p_t) with p_t = p when target = 1,
/// 1-p otherwise, and alpha_t = alpha / (1-alpha) correspondingly.
double focal_bce(const nn::Tensor& pred, const nn::Tensor& target, double gamma, double alpha,
                 nn::Tensor* grad = nullptr);

/// 1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth).
double dice_loss(const nn::Tensor& pred, const nn::Tensor& target, double smooth,
                 nn::Tensor* grad = nullptr);

/// Unweighted sum of mean pixelwise BCE and dice loss.
double seg_loss(const nn::Tensor& pred, const nn::Tensor& target, const TrainConfig& config,
                nn::Tensor* grad = nullptr);

// ---- optimizer ----

/// Rectified adaptive moments (variance-rectified Adam) wrapped by lookahead:
/// after every `lookahead_k` inner steps the slow weights move by
/// lookahead_alpha toward the fast weights and the fast weights reset onto
/// them. Fully deterministic given the gradient sequence.
class RangerOptimizer {
 public:
  RangerOptimizer(std::vector<nn::Param*> params, const TrainConfig& config);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long step_count() const { return t_; }

  /// Applies one update from the accumulated grads (grads are not cleared).
  /// Throws on non-finite gradients, reporting the failing step index.
  void step();

 private:
  struct Slot {
    nn::Tensor m, v, slow;
  };
  std::vector<nn::Param*> params_;
  std::vector<Slot> slots_;
  TrainConfig cfg_;
  double lr_;
  long t_ = 0;
};

// ---- training loop ----

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  int best_epoch = -1;             // -1 = initial weights
  double best_val_loss = 0.0;
  std::string weights_digest;      // of the best state, restored into the model
  std::string rng_digest;          // training rng position at completion
  std::vector<EpochLog> logs;
};

/// Deterministic training: seeded epoch shuffles, mini-batches in shuffle
/// order, per-epoch validation, best-validation state retention, optional
/// early stopping. When val_records is empty the train loss drives retention.
/// The model is left holding the best state.
TrainResult train_model(nn::Model& model, const std::vector<data::SliceRecord>& train_records,
                        const std::vector<data::SliceRecord>& val_records,
                        const TrainConfig& config);

/// Fraction of records whose thresholded classifier output matches the label.
double classifier_accuracy(nn::Model& model, const std::vector<data::SliceRecord>& records,
                           double threshold = 0.5, int batch_size = 16);

/// Mean IoU of thresholded probability maps against record masks.
double segmenter_mean_iou(nn::Model& model, const std::vector<data::SliceRecord>& records,
                          double threshold = 0.5, int batch_size = 8);

/// Stack record images (and masks/labels) into batches.
nn::Tensor records_to_images(const std::vector<data::SliceRecord>& records, size_t begin,
                             size_t end);
nn::Tensor records_to_label_targets(const std::vector<data::SliceRecord>& records, size_t begin,
                                    size_t end);
nn::Tensor records_to_mask_targets(const std::vector<data::SliceRecord>& records, size_t begin,
                                   size_t end);

}  // namespace pecad::train

#endif  // PECAD_TRAINING_HPP_
