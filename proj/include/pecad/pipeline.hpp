#ifndef PECAD_PIPELINE_HPP_
#define PECAD_PIPELINE_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pecad/dataset.hpp"
#include "pecad/metrics.hpp"
#include "pecad/nn/nets.hpp"
#include "pecad/preprocess.hpp"
#include <nlohmann/json.hpp>

namespace pecad::pipeline {

/// Load a manifest entry's volume (and mask, when listed) and derive
/// per-slice labels: with a mask, a slice is PE iff its mask is nonempty;
/// without one, a non-PE patient is all NON_PE and a PE patient is rejected
/// (per-image labels would be unknowable).
prep::LabeledStudy load_labeled_study(const data::ManifestEntry& entry,
                                      const std::filesystem::path& base_dir);

std::vector<prep::LabeledStudy> load_split_studies(const data::DatasetManifest& manifest,
                                                   const data::SplitAssignment& split,
                                                   data::Split which,
                                                   const std::filesystem::path& base_dir);

/// All slices of the given studies, preprocessed; optionally PE-upsampled
/// (training only).
std::vector<data::SliceRecord> classifier_records(const std::vector<prep::LabeledStudy>& studies,
                                                  const prep::PreprocConfig& config,
                                                  bool upsample_pe);

/// PE-labeled slices (with masks) only: the segmentation dataset.
std::vector<data::SliceRecord> segmenter_records(const std::vector<prep::LabeledStudy>& studies,
                                                 const prep::PreprocConfig& config);

/// The FP-reduction dataset over the given studies, split internally into PE
/// and non-PE patients.
std::vector<data::SliceRecord> fp_reduction_records(const std::vector<prep::LabeledStudy>& studies,
                                                    const prep::PreprocConfig& config);

struct EvalRow {
  std::string model;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> auc;  // absent when the split is single-class
};

struct EvalReport {
  std::vector<EvalRow> rows;  // drn, mixnet, ensemble, ensemble_fp_reduction
  metrics::PatientConfusion patient_confusion;
  metrics::PatientMetrics patient;
  int n_masked_images = 0;
  std::optional<double> mean_iou;
  std::string split_name;

  nlohmann::json to_json() const;
};

struct EvalModels {
  nn::Model* drn = nullptr;
  nn::Model* mixnet = nullptr;
  nn::Model* fp_net = nullptr;
  nn::Model* segmenter = nullptr;  // optional
};

/// Per-image weighted precision/recall/AUC for DRN, MixNet, their ensemble,
/// and the ensemble behind the FP-reduction veto; per-patient metrics from the
/// deployed (ensemble + veto) labels; mean IoU over slices with nonempty
/// ground-truth masks.
EvalReport evaluate_split(const std::vector<prep::LabeledStudy>& studies,
                          const prep::PreprocConfig& prep_config, const EvalModels& models,
                          double threshold, double mask_threshold);

}  // namespace pecad::pipeline

#endif  // PECAD_PIPELINE_HPP_
