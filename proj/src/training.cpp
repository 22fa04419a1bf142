#include "pecad/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pecad/hashutil.hpp"
#include "pecad/preprocess.hpp"
#include "pecad/rng.hpp"

namespace pecad::train {

using nn::Param;
using nn::Tensor;

namespace {
constexpr double kProbEps = 1e-7;

inline double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }
}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{
      {"base_lr", base_lr},
      {"max_epochs", max_epochs},
      {"batch_size", batch_size},
      {"seed", seed},
      {"loss", loss == LossKind::FOCAL_BCE ? "focal_bce" : "bce_plus_dice"},
      {"focal_gamma", focal_gamma},
      {"focal_alpha", focal_alpha},
      {"dice_smooth", dice_smooth},
      {"lookahead_k", lookahead_k},
      {"lookahead_alpha", lookahead_alpha},
      {"early_stop_patience", early_stop_patience},
      {"beta1", beta1},
      {"beta2", beta2},
      {"eps", eps},
      {"rect_threshold", rect_threshold},
      {"cosine_lr", cosine_lr},
      {"augment_flips", augment_flips}};
}

// ---------------- losses ----------------

double bce(const Tensor& pred, const Tensor& target, Tensor* grad) {
  pred.require_same_shape(target, "bce");
  const double n = static_cast<double>(pred.size());
  if (grad) *grad = Tensor::zeros_like(pred);
  double loss = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double p = clamp_prob(pred[i]);
    const double t = target[i];
    loss += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    if (grad) (*grad)[i] = -(t / p - (1.0 - t) / (1.0 - p)) / n;
  }
  return loss / n;
}

double focal_bce(const Tensor& pred, const Tensor& target, double gamma, double alpha,
                 Tensor* grad) {
  pred.require_same_shape(target, "focal_bce");
  if (gamma < 0 || alpha <= 0 || alpha > 1) {
    throw std::invalid_argument("focal_bce: bad gamma/alpha");
  }
  const double n = static_cast<double>(pred.size());
  if (grad) *grad = Tensor::zeros_like(pred);
  double loss = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double p = clamp_prob(pred[i]);
    const bool pos = target[i] >= 0.5;
    const double pt = pos ? p : 1.0 - p;
    const double at = pos ? alpha : 1.0 - alpha;
    const double one_m = 1.0 - pt;
    loss += -at * std::pow(one_m, gamma) * std::log(pt);
    if (grad) {
      // dL/dpt of -at*(1-pt)^g*log(pt), then dpt/dp = +1 or -1.
      double d = -std::pow(one_m, gamma) / pt;
      if (gamma > 0) d += gamma * std::pow(one_m, gamma - 1.0) * std::log(pt);
      d *= at;
      (*grad)[i] = (pos ? d : -d) / n;
    }
  }
  return loss / n;
}

double dice_loss(const Tensor& pred, const Tensor& target, double smooth, Tensor* grad) {
  pred.require_same_shape(target, "dice_loss");
  if (smooth <= 0) throw std::invalid_argument("dice_loss: smooth must be positive");
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * target[i];
    psum += pred[i];
    tsum += target[i];
  }
  const double num = 2.0 * inter + smooth;
  const double den = psum + tsum + smooth;
  if (grad) {
    *grad = Tensor::zeros_like(pred);
    for (size_t i = 0; i < pred.size(); ++i) {
      (*grad)[i] = -(2.0 * target[i] * den - num) / (den * den);
    }
  }
  return 1.0 - num / den;
}

double seg_loss(const Tensor& pred, const Tensor& target, const TrainConfig& config, Tensor* grad) {
  Tensor g1, g2;
  double l = bce(pred, target, grad ? &g1 : nullptr) +
             dice_loss(pred, target, config.dice_smooth, grad ? &g2 : nullptr);
  if (grad) {
    *grad = g1;
    *grad += g2;
  }
  return l;
}

// ---------------- optimizer ----------------

RangerOptimizer::RangerOptimizer(std::vector<Param*> params, const TrainConfig& config)
    : params_(std::move(params)), cfg_(config), lr_(config.base_lr) {
  if (cfg_.lookahead_k < 1) throw std::invalid_argument("RangerOptimizer: lookahead_k must be >= 1");
  if (cfg_.lookahead_alpha <= 0 || cfg_.lookahead_alpha >= 1) {
    throw std::invalid_argument("RangerOptimizer: lookahead_alpha must be in (0,1)");
  }
  slots_.reserve(params_.size());
  for (Param* p : params_) {
    Slot s;
    s.m = Tensor::zeros_like(p->value);
    s.v = Tensor::zeros_like(p->value);
    s.slow = p->value;
    slots_.push_back(std::move(s));
  }
}

void RangerOptimizer::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double b1t = std::pow(b1, static_cast<double>(t_));
  const double b2t = std::pow(b2, static_cast<double>(t_));
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * b2t / (1.0 - b2t);
  const bool rectified = rho_t > cfg_.rect_threshold;
  double rect = 1.0;
  if (rectified) {
    rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }

  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Param* p = params_[pi];
    Slot& s = slots_[pi];
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      if (!std::isfinite(g)) {
        throw std::runtime_error("RangerOptimizer: non-finite gradient in " + p->name +
                                 " at step " + std::to_string(t_));
      }
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * g;
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * g * g;
      const double mhat = s.m[i] / (1.0 - b1t);
      double update;
      if (rectified) {
        const double vhat = std::sqrt(s.v[i] / (1.0 - b2t));
        update = rect * mhat / (vhat + cfg_.eps);
      } else {
        update = mhat;
      }
      p->value[i] -= lr_ * update;
    }
    if (t_ % cfg_.lookahead_k == 0) {
      for (size_t i = 0; i < p->value.size(); ++i) {
        s.slow[i] += cfg_.lookahead_alpha * (p->value[i] - s.slow[i]);
        p->value[i] = s.slow[i];
      }
    }
  }
}

// ---------------- batching helpers ----------------

Tensor records_to_images(const std::vector<data::SliceRecord>& records, size_t begin, size_t end) {
  const auto& first = records[begin].image;
  Tensor x(static_cast<int>(end - begin), 1, first.rows, first.cols);
  for (size_t r = begin; r < end; ++r) {
    const auto& img = records[r].image;
    if (img.rows != first.rows || img.cols != first.cols) {
      throw std::invalid_argument("records_to_images: inconsistent slice dimensions");
    }
    std::copy(img.v.begin(), img.v.end(), x.plane(static_cast<int>(r - begin), 0));
  }
  return x;
}

Tensor records_to_label_targets(const std::vector<data::SliceRecord>& records, size_t begin,
                                size_t end) {
  Tensor t(static_cast<int>(end - begin), 1, 1, 1);
  for (size_t r = begin; r < end; ++r) {
    t[r - begin] = records[r].label == data::SliceLabel::PE ? 1.0 : 0.0;
  }
  return t;
}

Tensor records_to_mask_targets(const std::vector<data::SliceRecord>& records, size_t begin,
                               size_t end) {
  const auto& first = records[begin].image;
  Tensor t(static_cast<int>(end - begin), 1, first.rows, first.cols);
  for (size_t r = begin; r < end; ++r) {
    if (records[r].mask) {
      const auto& m = *records[r].mask;
      double* dst = t.plane(static_cast<int>(r - begin), 0);
      for (size_t i = 0; i < m.v.size(); ++i) dst[i] = m.v[i] ? 1.0 : 0.0;
    }
  }
  return t;
}

// ---------------- train loop ----------------

namespace {

double batch_loss(nn::Model& model, const std::vector<data::SliceRecord>& recs, size_t begin,
                  size_t end, const TrainConfig& cfg, bool train_mode, bool do_backward) {
  Tensor x = records_to_images(recs, begin, end);
  const bool seg = cfg.loss == LossKind::BCE_PLUS_DICE;
  Tensor target = seg ? records_to_mask_targets(recs, begin, end)
                      : records_to_label_targets(recs, begin, end);
  Tensor out = model.forward(x, train_mode);
  Tensor grad;
  double loss = seg ? seg_loss(out, target, cfg, do_backward ? &grad : nullptr)
                    : focal_bce(out, target, cfg.focal_gamma, cfg.focal_alpha,
                                do_backward ? &grad : nullptr);
  if (!std::isfinite(loss)) {
    throw std::runtime_error("train_model: non-finite loss");
  }
  if (do_backward) model.backward(grad);
  return loss;
}

double dataset_loss(nn::Model& model, const std::vector<data::SliceRecord>& recs,
                    const TrainConfig& cfg) {
  if (recs.empty()) return 0.0;
  double total = 0.0;
  size_t b = static_cast<size_t>(std::max(1, cfg.batch_size));
  for (size_t i = 0; i < recs.size(); i += b) {
    size_t end = std::min(recs.size(), i + b);
    total += batch_loss(model, recs, i, end, cfg, /*train_mode=*/false, /*do_backward=*/false) *
             static_cast<double>(end - i);
  }
  return total / static_cast<double>(recs.size());
}

}  // namespace

TrainResult train_model(nn::Model& model, const std::vector<data::SliceRecord>& train_records,
                        const std::vector<data::SliceRecord>& val_records,
                        const TrainConfig& config) {
  if (train_records.empty()) throw std::invalid_argument("train_model: empty training set");
  if (config.batch_size < 1) throw std::invalid_argument("train_model: batch_size must be >= 1");

  Rng rng(config.seed);
  RangerOptimizer opt(model.params(), config);

  TrainResult result;
  std::vector<Tensor> best_state = nn::get_state(model);
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int since_best = 0;

  std::vector<size_t> order(train_records.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    double lr = config.base_lr;
    if (config.cosine_lr && config.max_epochs > 1) {
      lr = config.base_lr * 0.5 *
           (1.0 + std::cos(M_PI * static_cast<double>(epoch) / config.max_epochs));
    }
    opt.set_lr(lr);

    rng.shuffle(order);
    std::vector<data::SliceRecord> epoch_recs;
    epoch_recs.reserve(order.size());
    for (size_t idx : order) epoch_recs.push_back(train_records[idx]);
    if (config.augment_flips) {
      for (auto& rec : epoch_recs) {
        data::Mask2D* m = rec.mask ? &*rec.mask : nullptr;
        prep::augment_flip(rec.image, m, rng);
      }
    }

    double train_loss = 0.0;
    const size_t b = static_cast<size_t>(config.batch_size);
    for (size_t i = 0; i < epoch_recs.size(); i += b) {
      size_t end = std::min(epoch_recs.size(), i + b);
      model.zero_grads();
      train_loss += batch_loss(model, epoch_recs, i, end, config, /*train_mode=*/true,
                               /*do_backward=*/true) *
                    static_cast<double>(end - i);
      opt.step();
    }
    train_loss /= static_cast<double>(epoch_recs.size());

    double monitor = train_loss;
    double val_loss = 0.0;
    if (!val_records.empty()) {
      val_loss = dataset_loss(model, val_records, config);
      monitor = val_loss;
    }
    result.logs.push_back(EpochLog{epoch, lr, train_loss, val_loss});

    if (monitor < best_loss) {
      best_loss = monitor;
      best_epoch = epoch;
      best_state = nn::get_state(model);
      since_best = 0;
    } else {
      ++since_best;
      if (config.early_stop_patience >= 1 && since_best > config.early_stop_patience) break;
    }
  }

  nn::set_state(model, best_state);
  result.best_epoch = best_epoch;
  result.best_val_loss = best_loss == std::numeric_limits<double>::infinity() ? 0.0 : best_loss;
  result.weights_digest = nn::weights_digest(model);
  result.rng_digest = to_hex(rng.next_u64());
  return result;
}

double classifier_accuracy(nn::Model& model, const std::vector<data::SliceRecord>& records,
                           double threshold, int batch_size) {
  if (records.empty()) return 0.0;
  long correct = 0;
  const size_t b = static_cast<size_t>(std::max(1, batch_size));
  for (size_t i = 0; i < records.size(); i += b) {
    size_t end = std::min(records.size(), i + b);
    Tensor x = records_to_images(records, i, end);
    std::vector<double> probs = nn::classifier_forward(model, x);
    for (size_t r = i; r < end; ++r) {
      bool pred_pe = probs[r - i] >= threshold;
      bool is_pe = records[r].label == data::SliceLabel::PE;
      correct += (pred_pe == is_pe);
    }
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double segmenter_mean_iou(nn::Model& model, const std::vector<data::SliceRecord>& records,
                          double threshold, int batch_size) {
  if (records.empty()) return 0.0;
  double total = 0.0;
  const size_t b = static_cast<size_t>(std::max(1, batch_size));
  for (size_t i = 0; i < records.size(); i += b) {
    size_t end = std::min(records.size(), i + b);
    Tensor x = records_to_images(records, i, end);
    Tensor maps = nn::segmenter_forward(model, x);
    for (size_t r = i; r < end; ++r) {
      const int n = static_cast<int>(r - i);
      long inter = 0, uni = 0;
      const auto& img = records[r].image;
      for (int row = 0; row < img.rows; ++row) {
        for (int col = 0; col < img.cols; ++col) {
          bool p = maps.at(n, 0, row, col) >= threshold;
          bool t = records[r].mask && records[r].mask->at(row, col) != 0;
          inter += (p && t);
          uni += (p || t);
        }
      }
      total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
  }
  return total / static_cast<double>(records.size());
}

}  // namespace pecad::train
