#ifndef PECAD_PHANTOM_HPP_
#define PECAD_PHANTOM_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pecad/dataset.hpp"
#include "pecad/preprocess.hpp"

namespace pecad::phantom {

/// Parameters for one synthetic CTPA-like study. The embolus is modelled as a
/// hypodense filling defect strictly interior to an opacified vessel lumen,
/// leaving a contrast rim of at least one pixel around every embolus voxel.
struct PhantomSpec {
  uint64_t seed = 0;
  int n_slices = 8;
  int rows = 64;
  int cols = 64;
  bool pe = false;
  int n_vessels = 3;
  double hu_lung = -800.0;
  double hu_soft = 40.0;
  double hu_contrast = 300.0;
  double hu_embolus = 50.0;
  double noise_sigma_hu = 15.0;

  void validate() const;
};

struct PhantomStudy {
  data::CtVolume volume;
  data::MaskVolume masks;                    // embolus voxels exactly
  std::vector<data::SliceLabel> labels;      // PE iff the slice mask is nonempty

  prep::LabeledStudy as_labeled() const {
    return prep::LabeledStudy{volume, labels, masks};
  }
};

/// Deterministic study synthesis: soft-tissue body, two lung fields, contrast
/// vessels traversing the stack, and (iff spec.pe) an embolus run inside one
/// vessel. Gaussian HU noise is applied last and rounded to int16.
PhantomStudy generate_study(const PhantomSpec& spec);

/// Write n_pe PE studies then n_non_pe non-PE studies (seeds base_seed + i)
/// under out_dir, plus manifest.json; returns the manifest (source_tag
/// "phantom", relative file paths).
data::DatasetManifest generate_cohort(int n_pe, int n_non_pe, uint64_t base_seed,
                                      const PhantomSpec& tmpl,
                                      const std::filesystem::path& out_dir);

}  // namespace pecad::phantom

#endif  // PECAD_PHANTOM_HPP_
