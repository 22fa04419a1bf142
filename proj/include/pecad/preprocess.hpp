#ifndef PECAD_PREPROCESS_HPP_
#define PECAD_PREPROCESS_HPP_

#include <optional>
#include <vector>

#include "pecad/dataset.hpp"
#include "pecad/rng.hpp"

namespace pecad::prep {

struct PreprocConfig {
  int hu_limit = 600;                 // symmetric clamp window, then /hu_limit
  int crop_size = 400;
  int upsample_factor = 5;            // PE slice duplication factor
  double lung_hu_low = -950.0;        // lung-band test for the FP-reduction set
  double lung_hu_high = -300.0;
  double lung_area_fraction_min = 0.10;
};

/// Clamp HU values to [-hu_limit, +hu_limit] and divide by hu_limit.
/// Monotone non-decreasing; output lies in [-1, 1].
data::Image2D hu_window_scale(const int16_t* slice, int rows, int cols, int hu_limit);
data::Image2D hu_window_scale(const data::CtVolume& vol, int slice_index, int hu_limit);

/// Centered crop_size x crop_size window; offset floor((dim-crop)/2) per axis.
/// Values are copied unchanged. Throws when the image is smaller than the crop.
data::Image2D center_crop(const data::Image2D& image, int crop_size);
data::Mask2D center_crop(const data::Mask2D& mask, int crop_size);

/// Duplicate every PE-labeled record `factor` times (duplicates adjacent,
/// original order otherwise preserved); NON_PE records pass through once.
std::vector<data::SliceRecord> rebalance_upsample(const std::vector<data::SliceRecord>& records,
                                                  int factor);

/// Horizontal then vertical flip, each applied with independent probability
/// 0.5 drawn from `rng`; identical flips applied to image and mask.
void augment_flip(data::Image2D& image, data::Mask2D* mask, Rng& rng);

void flip_horizontal(data::Image2D& image);
void flip_vertical(data::Image2D& image);
void flip_horizontal(data::Mask2D& mask);
void flip_vertical(data::Mask2D& mask);

/// Indices of slices whose lung-band pixel fraction inside the center-crop
/// window reaches config.lung_area_fraction_min. Lower thresholds yield
/// supersets.
std::vector<int> lung_region_slices(const data::CtVolume& volume, const PreprocConfig& config);

/// A volume with per-slice labels (and ground-truth masks when available).
struct LabeledStudy {
  data::CtVolume volume;
  std::vector<data::SliceLabel> slice_labels;
  std::optional<data::MaskVolume> masks;
};

/// Full per-slice preparation: center crop then HU window scaling, masks
/// cropped alongside. Produces one SliceRecord per slice in index order.
std::vector<data::SliceRecord> preprocess_study(const LabeledStudy& study,
                                                const PreprocConfig& config);

/// The modified false-positive-reduction dataset: PE-labeled slices of PE
/// patients plus lung-region slices of non-PE patients, nothing else.
/// A PE study without a single PE slice is skipped with a warning diagnostic.
std::vector<data::SliceRecord> build_fp_reduction_dataset(
    const std::vector<LabeledStudy>& pe_studies,
    const std::vector<LabeledStudy>& non_pe_studies, const PreprocConfig& config);

}  // namespace pecad::prep

#endif  // PECAD_PREPROCESS_HPP_
