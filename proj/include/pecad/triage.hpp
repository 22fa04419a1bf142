#ifndef PECAD_TRIAGE_HPP_
#define PECAD_TRIAGE_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pecad/dataset.hpp"
#include "pecad/nn/nets.hpp"
#include "pecad/preprocess.hpp"
#include <nlohmann/json.hpp>

namespace pecad::triage {

struct ImagePrediction {
  std::string patient_id;
  int slice_index = 0;
  double ensemble_prob = 0.0;
  std::optional<double> fp_net_prob;
  data::SliceLabel final_label = data::SliceLabel::NON_PE;
};

struct PatientVerdict {
  std::string patient_id;
  data::SliceLabel verdict = data::SliceLabel::NON_PE;
  int n_pe_images = 0;
  std::vector<int> flagged_slices;
};

struct TriageReport {
  std::string patient_id;
  PatientVerdict verdict;
  double threshold = 0.5;
  double mask_threshold = 0.5;
  std::vector<ImagePrediction> per_image;
  std::vector<std::string> overlay_paths;
  std::map<std::string, std::string> model_digests;
  double timing_ms = 0.0;  // excluded from determinism comparisons

  nlohmann::json to_json() const;
};

/// Unweighted mean of member probabilities over a batch of images.
/// Throws on an empty model list.
std::vector<double> ensemble_predict(const std::vector<nn::Model*>& models,
                                     const nn::Tensor& images);
double ensemble_predict_one(const std::vector<nn::Model*>& models, const nn::Tensor& image);

/// PE iff ensemble_prob >= threshold and, when the FP-reduction score is
/// present, fp_net_prob >= threshold as well (the FP net can only veto).
data::SliceLabel cascade_label(double ensemble_prob, std::optional<double> fp_net_prob,
                               double threshold = 0.5);

PatientVerdict patient_verdict(const std::string& patient_id,
                               const std::vector<data::SliceLabel>& image_labels);

/// Threshold the segmenter's probability maps on the flagged slices.
std::vector<data::Mask2D> segment_flagged(const std::vector<data::SliceRecord>& slices,
                                          nn::Model& segmenter,
                                          const std::vector<int>& flagged_slices,
                                          double mask_threshold = 0.5);

/// Grayscale base (linear [-1,1] -> [0,255]) with mask pixels tinted the
/// alert color at 50% alpha. Returns row-major RGB bytes.
std::vector<uint8_t> render_overlay(const data::Image2D& image, const data::Mask2D& mask);

struct TriageModels {
  std::vector<nn::Model*> ensemble;   // classifier members, at least one
  nn::Model* fp_net = nullptr;        // optional veto classifier
  nn::Model* segmenter = nullptr;     // optional lesion labeler
};

/// The deployed pipeline: preprocess every slice in index order, ensemble
/// score, cascade label, patient verdict, then segment + overlay the flagged
/// slices. Writes overlays and the report JSON under out_dir.
TriageReport run_triage(const data::CtVolume& study, const TriageModels& models,
                        const prep::PreprocConfig& prep_config, double threshold,
                        double mask_threshold, const std::filesystem::path& out_dir);

}  // namespace pecad::triage

#endif  // PECAD_TRIAGE_HPP_
