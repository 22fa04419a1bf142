#include "pecad/triage.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pecad/pngio.hpp"
#include "pecad/training.hpp"

namespace pecad::triage {

using data::Image2D;
using data::Mask2D;
using data::SliceLabel;
using nlohmann::json;
namespace fs = std::filesystem;

json TriageReport::to_json() const {
  json per = json::array();
  for (const auto& p : per_image) {
    json jp{{"slice", p.slice_index},
            {"ensemble_prob", p.ensemble_prob},
            {"label", p.final_label == SliceLabel::PE ? "PE" : "NON_PE"}};
    if (p.fp_net_prob) {
      jp["fp_prob"] = *p.fp_net_prob;
    } else {
      jp["fp_prob"] = nullptr;
    }
    per.push_back(jp);
  }
  return json{{"patient_id", patient_id},
              {"verdict", verdict.verdict == SliceLabel::PE ? "PE" : "NON_PE"},
              {"n_pe_images", verdict.n_pe_images},
              {"threshold", threshold},
              {"mask_threshold", mask_threshold},
              {"per_image", per},
              {"flagged", verdict.flagged_slices},
              {"overlay_paths", overlay_paths},
              {"model_digests", model_digests},
              {"timing_ms", timing_ms}};
}

std::vector<double> ensemble_predict(const std::vector<nn::Model*>& models,
                                     const nn::Tensor& images) {
  if (models.empty()) throw std::invalid_argument("ensemble_predict: no models");
  std::vector<double> mean(images.n(), 0.0);
  for (nn::Model* m : models) {
    std::vector<double> probs = nn::classifier_forward(*m, images);
    for (int i = 0; i < images.n(); ++i) mean[i] += probs[i];
  }
  for (double& v : mean) v /= static_cast<double>(models.size());
  return mean;
}

double ensemble_predict_one(const std::vector<nn::Model*>& models, const nn::Tensor& image) {
  return ensemble_predict(models, image).at(0);
}

SliceLabel cascade_label(double ensemble_prob, std::optional<double> fp_net_prob,
                         double threshold) {
  if (threshold < 0.0 || threshold > 1.0) {
    throw std::invalid_argument("cascade_label: threshold outside [0,1]");
  }
  bool pe = ensemble_prob >= threshold;
  if (fp_net_prob) pe = pe && (*fp_net_prob >= threshold);
  return pe ? SliceLabel::PE : SliceLabel::NON_PE;
}

PatientVerdict patient_verdict(const std::string& patient_id,
                               const std::vector<SliceLabel>& image_labels) {
  if (image_labels.empty()) throw std::invalid_argument("patient_verdict: empty study");
  PatientVerdict v;
  v.patient_id = patient_id;
  for (size_t i = 0; i < image_labels.size(); ++i) {
    if (image_labels[i] == SliceLabel::PE) {
      v.flagged_slices.push_back(static_cast<int>(i));
    }
  }
  v.n_pe_images = static_cast<int>(v.flagged_slices.size());
  v.verdict = v.n_pe_images >= 1 ? SliceLabel::PE : SliceLabel::NON_PE;
  return v;
}

std::vector<Mask2D> segment_flagged(const std::vector<data::SliceRecord>& slices,
                                    nn::Model& segmenter, const std::vector<int>& flagged_slices,
                                    double mask_threshold) {
  std::vector<Mask2D> masks;
  for (int idx : flagged_slices) {
    auto it = std::find_if(slices.begin(), slices.end(),
                           [idx](const data::SliceRecord& r) { return r.slice_index == idx; });
    if (it == slices.end()) {
      throw std::invalid_argument("segment_flagged: flagged slice " + std::to_string(idx) +
                                  " not in study");
    }
    std::vector<data::SliceRecord> one{*it};
    nn::Tensor x = train::records_to_images(one, 0, 1);
    nn::Tensor map = nn::segmenter_forward(segmenter, x);
    Mask2D m(it->image.rows, it->image.cols);
    for (int r = 0; r < m.rows; ++r) {
      for (int c = 0; c < m.cols; ++c) {
        m.at(r, c) = map.at(0, 0, r, c) >= mask_threshold ? 1 : 0;
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

std::vector<uint8_t> render_overlay(const Image2D& image, const Mask2D& mask) {
  if (mask.rows != image.rows || mask.cols != image.cols) {
    throw std::invalid_argument("render_overlay: mask/image shape mismatch");
  }
  const uint8_t alert_r = 220, alert_g = 30, alert_b = 30;
  std::vector<uint8_t> rgb(static_cast<size_t>(image.rows) * image.cols * 3);
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) {
      double v = std::clamp(image.at(r, c), -1.0, 1.0);
      double gray = std::round((v + 1.0) * 0.5 * 255.0);
      uint8_t g8 = static_cast<uint8_t>(gray);
      size_t i = (static_cast<size_t>(r) * image.cols + c) * 3;
      if (mask.at(r, c)) {
        rgb[i] = static_cast<uint8_t>((g8 + alert_r) / 2);
        rgb[i + 1] = static_cast<uint8_t>((g8 + alert_g) / 2);
        rgb[i + 2] = static_cast<uint8_t>((g8 + alert_b) / 2);
      } else {
        rgb[i] = rgb[i + 1] = rgb[i + 2] = g8;
      }
    }
  }
  return rgb;
}

TriageReport run_triage(const data::CtVolume& study, const TriageModels& models,
                        const prep::PreprocConfig& prep_config, double threshold,
                        double mask_threshold, const fs::path& out_dir) {
  auto t0 = std::chrono::steady_clock::now();
  study.validate();
  if (models.ensemble.empty()) throw std::invalid_argument("run_triage: empty ensemble");

  // Labels are unknown at triage time; preprocess with placeholder labels.
  prep::LabeledStudy ls;
  ls.volume = study;
  ls.slice_labels.assign(study.n_slices, SliceLabel::NON_PE);
  std::vector<data::SliceRecord> slices = prep::preprocess_study(ls, prep_config);

  nn::Tensor batch = train::records_to_images(slices, 0, slices.size());
  std::vector<double> ens = ensemble_predict(models.ensemble, batch);
  std::vector<double> fp;
  if (models.fp_net) fp = nn::classifier_forward(*models.fp_net, batch);

  TriageReport report;
  report.patient_id = study.patient_id;
  report.threshold = threshold;
  report.mask_threshold = mask_threshold;

  std::vector<SliceLabel> labels(study.n_slices);
  for (int s = 0; s < study.n_slices; ++s) {
    ImagePrediction p;
    p.patient_id = study.patient_id;
    p.slice_index = s;
    p.ensemble_prob = ens[s];
    if (models.fp_net) p.fp_net_prob = fp[s];
    p.final_label = cascade_label(p.ensemble_prob, p.fp_net_prob, threshold);
    labels[s] = p.final_label;
    report.per_image.push_back(std::move(p));
  }
  report.verdict = patient_verdict(study.patient_id, labels);

  fs::create_directories(out_dir);
  if (!report.verdict.flagged_slices.empty() && models.segmenter) {
    std::vector<Mask2D> masks =
        segment_flagged(slices, *models.segmenter, report.verdict.flagged_slices, mask_threshold);
    for (size_t i = 0; i < masks.size(); ++i) {
      int s = report.verdict.flagged_slices[i];
      fs::path png = out_dir / (study.patient_id + "_" + std::to_string(s) + ".png");
      img::write_png_rgb(png, render_overlay(slices[s].image, masks[i]), slices[s].image.cols,
                         slices[s].image.rows);
      report.overlay_paths.push_back(png.string());
    }
  }

  for (size_t i = 0; i < models.ensemble.size(); ++i) {
    report.model_digests["ensemble_" + std::to_string(i)] =
        nn::weights_digest(*models.ensemble[i]);
  }
  if (models.fp_net) report.model_digests["fp_net"] = nn::weights_digest(*models.fp_net);
  if (models.segmenter) report.model_digests["segmenter"] = nn::weights_digest(*models.segmenter);

  auto t1 = std::chrono::steady_clock::now();
  report.timing_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

  std::ofstream out(out_dir / (study.patient_id + ".triage.json"), std::ios::trunc);
  if (!out) throw std::runtime_error("run_triage: cannot write report");
  out << report.to_json().dump(2) << "\n";
  return report;
}

}  // namespace pecad::triage
