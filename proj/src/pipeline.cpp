#include "pecad/pipeline.hpp"

#include <algorithm>
#include <stdexcept>

#include "pecad/training.hpp"
#include "pecad/triage.hpp"

namespace pecad::pipeline {

using data::SliceLabel;
using data::SliceRecord;
using nlohmann::json;
namespace fs = std::filesystem;

prep::LabeledStudy load_labeled_study(const data::ManifestEntry& entry, const fs::path& base_dir) {
  prep::LabeledStudy study;
  study.volume = data::load_volume(base_dir / entry.volume_path);
  if (!entry.mask_path.empty()) {
    study.masks = data::load_mask_volume(base_dir / entry.mask_path);
    if (study.masks->n_slices != study.volume.n_slices || study.masks->rows != study.volume.rows ||
        study.masks->cols != study.volume.cols) {
      throw std::runtime_error("mask grid differs from volume for " + entry.patient_id);
    }
    study.slice_labels.resize(study.volume.n_slices);
    for (int s = 0; s < study.volume.n_slices; ++s) {
      study.slice_labels[s] =
          study.masks->slice_nonempty(s) ? SliceLabel::PE : SliceLabel::NON_PE;
    }
  } else {
    if (entry.pe_label) {
      throw std::runtime_error("PE patient " + entry.patient_id +
                               " has no mask; per-image labels are unavailable");
    }
    study.slice_labels.assign(study.volume.n_slices, SliceLabel::NON_PE);
  }
  return study;
}

std::vector<prep::LabeledStudy> load_split_studies(const data::DatasetManifest& manifest,
                                                   const data::SplitAssignment& split,
                                                   data::Split which, const fs::path& base_dir) {
  std::vector<std::string> ids = split.patients_in(which);
  std::sort(ids.begin(), ids.end());
  std::vector<prep::LabeledStudy> out;
  for (const auto& id : ids) {
    const data::ManifestEntry* entry = manifest.find(id);
    if (!entry) throw std::runtime_error("split patient " + id + " missing from manifest");
    out.push_back(load_labeled_study(*entry, base_dir));
  }
  return out;
}

std::vector<SliceRecord> classifier_records(const std::vector<prep::LabeledStudy>& studies,
                                            const prep::PreprocConfig& config, bool upsample_pe) {
  std::vector<SliceRecord> records;
  for (const auto& study : studies) {
    auto recs = prep::preprocess_study(study, config);
    for (auto& r : recs) {
      r.mask.reset();  // classification needs labels only
      records.push_back(std::move(r));
    }
  }
  if (upsample_pe) records = prep::rebalance_upsample(records, config.upsample_factor);
  return records;
}

std::vector<SliceRecord> segmenter_records(const std::vector<prep::LabeledStudy>& studies,
                                           const prep::PreprocConfig& config) {
  std::vector<SliceRecord> records;
  for (const auto& study : studies) {
    auto recs = prep::preprocess_study(study, config);
    for (auto& r : recs) {
      if (r.label == SliceLabel::PE && r.mask && r.mask->count() > 0) {
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

std::vector<SliceRecord> fp_reduction_records(const std::vector<prep::LabeledStudy>& studies,
                                              const prep::PreprocConfig& config) {
  std::vector<prep::LabeledStudy> pe, non_pe;
  for (const auto& s : studies) {
    if (s.volume.pe_label) {
      pe.push_back(s);
    } else {
      non_pe.push_back(s);
    }
  }
  return prep::build_fp_reduction_dataset(pe, non_pe, config);
}

json EvalReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    json jr{{"model", r.model}, {"precision", r.precision}, {"recall", r.recall}};
    jr["auc"] = r.auc ? json(*r.auc) : json(nullptr);
    rows_j.push_back(jr);
  }
  json seg{{"n_masked_images", n_masked_images}};
  if (mean_iou) seg["mean_iou"] = *mean_iou;
  return json{{"split", split_name},
              {"per_image", {{"rows", rows_j}}},
              {"per_patient",
               {{"sensitivity", patient.sensitivity},
                {"specificity", patient.specificity},
                {"ppv", patient.ppv},
                {"npv", patient.npv},
                {"confusion",
                 {{"tp", patient_confusion.tp},
                  {"fp", patient_confusion.fp},
                  {"tn", patient_confusion.tn},
                  {"fn", patient_confusion.fn}}}}},
              {"segmentation", seg}};
}

namespace {

EvalRow make_row(const std::string& name, const std::vector<int>& labels,
                 const std::vector<double>& scores, double threshold) {
  std::vector<int> preds(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] >= threshold ? 1 : 0;
  auto [counts, weights] = metrics::confusion_from_predictions(labels, preds);
  EvalRow row;
  row.model = name;
  row.precision = metrics::weighted_precision(counts, weights);
  row.recall = metrics::weighted_recall(counts, weights);
  bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
  if (has_pos && has_neg) row.auc = metrics::roc_auc(scores, labels);
  return row;
}

}  // namespace

EvalReport evaluate_split(const std::vector<prep::LabeledStudy>& studies,
                          const prep::PreprocConfig& prep_config, const EvalModels& models,
                          double threshold, double mask_threshold) {
  if (!models.drn || !models.mixnet || !models.fp_net) {
    throw std::invalid_argument("evaluate_split: drn, mixnet and fp_net models are required");
  }
  if (studies.empty()) throw std::invalid_argument("evaluate_split: empty study list");

  std::vector<int> labels;
  std::vector<double> s_drn, s_mix, s_ens, s_cascade;
  std::vector<double> fp_scores;

  metrics::PatientConfusion pc;
  std::vector<data::Mask2D> pred_masks, gt_masks;

  for (const auto& study : studies) {
    auto recs = prep::preprocess_study(study, prep_config);
    nn::Tensor batch = train::records_to_images(recs, 0, recs.size());
    std::vector<double> pd = nn::classifier_forward(*models.drn, batch);
    std::vector<double> pm = nn::classifier_forward(*models.mixnet, batch);
    std::vector<double> pf = nn::classifier_forward(*models.fp_net, batch);

    bool patient_flagged = false;
    for (size_t i = 0; i < recs.size(); ++i) {
      labels.push_back(recs[i].label == SliceLabel::PE ? 1 : 0);
      double ens = 0.5 * (pd[i] + pm[i]);
      s_drn.push_back(pd[i]);
      s_mix.push_back(pm[i]);
      s_ens.push_back(ens);
      // The cascade's score: thresholding min(ensemble, veto) at any level
      // reproduces the conjunction rule.
      s_cascade.push_back(std::min(ens, pf[i]));
      fp_scores.push_back(pf[i]);
      if (triage::cascade_label(ens, pf[i], threshold) == SliceLabel::PE) patient_flagged = true;
    }

    const bool truth_pe = study.volume.pe_label;
    if (truth_pe && patient_flagged) ++pc.tp;
    if (truth_pe && !patient_flagged) ++pc.fn;
    if (!truth_pe && patient_flagged) ++pc.fp;
    if (!truth_pe && !patient_flagged) ++pc.tn;

    if (models.segmenter) {
      for (size_t i = 0; i < recs.size(); ++i) {
        if (!recs[i].mask || recs[i].mask->count() == 0) continue;
        std::vector<SliceRecord> one{recs[i]};
        nn::Tensor x = train::records_to_images(one, 0, 1);
        nn::Tensor map = nn::segmenter_forward(*models.segmenter, x);
        data::Mask2D pm2(recs[i].image.rows, recs[i].image.cols);
        for (int r = 0; r < pm2.rows; ++r) {
          for (int c = 0; c < pm2.cols; ++c) {
            pm2.at(r, c) = map.at(0, 0, r, c) >= mask_threshold ? 1 : 0;
          }
        }
        pred_masks.push_back(std::move(pm2));
        gt_masks.push_back(*recs[i].mask);
      }
    }
  }

  EvalReport report;
  report.rows.push_back(make_row("drn", labels, s_drn, threshold));
  report.rows.push_back(make_row("mixnet", labels, s_mix, threshold));
  report.rows.push_back(make_row("ensemble", labels, s_ens, threshold));
  report.rows.push_back(make_row("ensemble_fp_reduction", labels, s_cascade, threshold));
  report.patient_confusion = pc;
  report.patient = metrics::patient_metrics(pc);
  report.n_masked_images = static_cast<int>(gt_masks.size());
  if (!gt_masks.empty()) report.mean_iou = metrics::mean_iou(pred_masks, gt_masks);
  return report;
}

}  // namespace pecad::pipeline
