#include "pecad/preprocess.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>

namespace pecad::prep {

using data::CtVolume;
using data::Image2D;
using data::Mask2D;
using data::SliceLabel;
using data::SliceRecord;

Image2D hu_window_scale(const int16_t* slice, int rows, int cols, int hu_limit) {
  if (hu_limit <= 0) throw std::invalid_argument("hu_window_scale: hu_limit must be positive");
  Image2D out(rows, cols);
  const double limit = static_cast<double>(hu_limit);
  for (size_t i = 0; i < out.v.size(); ++i) {
    double v = static_cast<double>(slice[i]);
    v = std::clamp(v, -limit, limit);
    out.v[i] = v / limit;
  }
  return out;
}

Image2D hu_window_scale(const CtVolume& vol, int slice_index, int hu_limit) {
  return hu_window_scale(vol.slice(slice_index), vol.rows, vol.cols, hu_limit);
}

namespace {

template <typename Img>
Img crop_impl(const Img& src, int crop_size) {
  if (crop_size <= 0) throw std::invalid_argument("center_crop: non-positive crop size");
  if (src.rows < crop_size || src.cols < crop_size) {
    throw std::invalid_argument("center_crop: image " + std::to_string(src.rows) + "x" +
                                std::to_string(src.cols) + " smaller than crop " +
                                std::to_string(crop_size));
  }
  const int r0 = (src.rows - crop_size) / 2;
  const int c0 = (src.cols - crop_size) / 2;
  Img out(crop_size, crop_size);
  for (int r = 0; r < crop_size; ++r) {
    for (int c = 0; c < crop_size; ++c) {
      out.at(r, c) = src.at(r0 + r, c0 + c);
    }
  }
  return out;
}

}  // namespace

Image2D center_crop(const Image2D& image, int crop_size) { return crop_impl(image, crop_size); }
Mask2D center_crop(const Mask2D& mask, int crop_size) { return crop_impl(mask, crop_size); }

std::vector<SliceRecord> rebalance_upsample(const std::vector<SliceRecord>& records, int factor) {
  if (factor < 1) throw std::invalid_argument("rebalance_upsample: factor must be >= 1");
  std::vector<SliceRecord> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    int copies = rec.label == SliceLabel::PE ? factor : 1;
    for (int i = 0; i < copies; ++i) out.push_back(rec);
  }
  return out;
}

void flip_horizontal(Image2D& image) {
  for (int r = 0; r < image.rows; ++r) {
    std::reverse(image.v.begin() + static_cast<size_t>(r) * image.cols,
                 image.v.begin() + static_cast<size_t>(r + 1) * image.cols);
  }
}

void flip_vertical(Image2D& image) {
  for (int r = 0; r < image.rows / 2; ++r) {
    int rr = image.rows - 1 - r;
    for (int c = 0; c < image.cols; ++c) std::swap(image.at(r, c), image.at(rr, c));
  }
}

void flip_horizontal(Mask2D& mask) {
  for (int r = 0; r < mask.rows; ++r) {
    std::reverse(mask.v.begin() + static_cast<size_t>(r) * mask.cols,
                 mask.v.begin() + static_cast<size_t>(r + 1) * mask.cols);
  }
}

void flip_vertical(Mask2D& mask) {
  for (int r = 0; r < mask.rows / 2; ++r) {
    int rr = mask.rows - 1 - r;
    for (int c = 0; c < mask.cols; ++c) std::swap(mask.at(r, c), mask.at(rr, c));
  }
}

void augment_flip(Image2D& image, Mask2D* mask, Rng& rng) {
  if (mask && (mask->rows != image.rows || mask->cols != image.cols)) {
    throw std::invalid_argument("augment_flip: mask shape differs from image");
  }
  // Draw both decisions before applying so the consumed rng stream does not
  // depend on the outcomes.
  bool do_h = rng.bernoulli(0.5);
  bool do_v = rng.bernoulli(0.5);
  if (do_h) {
    flip_horizontal(image);
    if (mask) flip_horizontal(*mask);
  }
  if (do_v) {
    flip_vertical(image);
    if (mask) flip_vertical(*mask);
  }
}

std::vector<int> lung_region_slices(const CtVolume& volume, const PreprocConfig& config) {
  const int crop = std::min({config.crop_size, volume.rows, volume.cols});
  const int r0 = (volume.rows - crop) / 2;
  const int c0 = (volume.cols - crop) / 2;
  std::vector<int> out;
  for (int s = 0; s < volume.n_slices; ++s) {
    long in_band = 0;
    for (int r = 0; r < crop; ++r) {
      for (int c = 0; c < crop; ++c) {
        double hu = static_cast<double>(volume.at(s, r0 + r, c0 + c));
        if (hu >= config.lung_hu_low && hu <= config.lung_hu_high) ++in_band;
      }
    }
    double fraction = static_cast<double>(in_band) / (static_cast<double>(crop) * crop);
    if (fraction >= config.lung_area_fraction_min) out.push_back(s);
  }
  return out;
}

std::vector<SliceRecord> preprocess_study(const LabeledStudy& study, const PreprocConfig& config) {
  const CtVolume& vol = study.volume;
  if (static_cast<int>(study.slice_labels.size()) != vol.n_slices) {
    throw std::invalid_argument("preprocess_study: label count differs from slice count");
  }
  const int crop = std::min({config.crop_size, vol.rows, vol.cols});
  std::vector<SliceRecord> out;
  out.reserve(vol.n_slices);
  for (int s = 0; s < vol.n_slices; ++s) {
    SliceRecord rec;
    rec.patient_id = vol.patient_id;
    rec.slice_index = s;
    rec.label = study.slice_labels[s];
    Image2D full = hu_window_scale(vol, s, config.hu_limit);
    rec.image = center_crop(full, crop);
    if (study.masks) {
      rec.mask = center_crop(study.masks->slice(s), crop);
      if (rec.label != SliceLabel::PE && rec.mask->count() > 0) {
        // The crop cannot invent mask pixels, but guard against inconsistent inputs.
        throw std::invalid_argument("preprocess_study: NON_PE slice with nonempty mask");
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<SliceRecord> build_fp_reduction_dataset(const std::vector<LabeledStudy>& pe_studies,
                                                    const std::vector<LabeledStudy>& non_pe_studies,
                                                    const PreprocConfig& config) {
  std::vector<SliceRecord> out;

  for (const auto& study : pe_studies) {
    auto records = preprocess_study(study, config);
    size_t added = 0;
    for (auto& rec : records) {
      if (rec.label == SliceLabel::PE) {
        out.push_back(std::move(rec));
        ++added;
      }
    }
    if (added == 0) {
      std::cerr << "[pecad] warning: PE study " << study.volume.patient_id
                << " has no PE-labeled slices; skipped in FP-reduction dataset\n";
    }
  }

  for (const auto& study : non_pe_studies) {
    auto lung = lung_region_slices(study.volume, config);
    auto records = preprocess_study(study, config);
    for (int s : lung) {
      SliceRecord rec = records[s];
      rec.label = SliceLabel::NON_PE;
      rec.mask.reset();
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace pecad::prep
