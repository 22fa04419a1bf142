#include "pecad/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pecad/rng.hpp"

namespace pecad::phantom {

using data::CtVolume;
using data::DatasetManifest;
using data::ManifestEntry;
using data::MaskVolume;
using data::SliceLabel;

namespace {

struct Ellipse {
  double cr, cc;  // center (row, col)
  double ar, ac;  // semi-axes (row, col)

  bool contains(double r, double c, double margin = 0.0) const {
    double dr = (r - cr) / (ar - margin);
    double dc = (c - cc) / (ac - margin);
    return dr * dr + dc * dc <= 1.0;
  }
};

struct Vessel {
  double base_r, base_c;   // center at slice 0
  double drift_r, drift_c; // per-slice drift
  double radius;

  double center_r(int s) const { return base_r + drift_r * s; }
  double center_c(int s) const { return base_c + drift_c * s; }
};

}  // namespace

void PhantomSpec::validate() const {
  if (n_slices < 4) throw std::invalid_argument("PhantomSpec: n_slices must be >= 4");
  if (rows < 64 || cols < 64) throw std::invalid_argument("PhantomSpec: rows/cols must be >= 64");
  if (n_vessels < 1) throw std::invalid_argument("PhantomSpec: n_vessels must be >= 1");
  if (!(hu_embolus < hu_contrast)) {
    throw std::invalid_argument("PhantomSpec: embolus must be hypodense within contrast");
  }
  if (noise_sigma_hu < 0) throw std::invalid_argument("PhantomSpec: negative noise sigma");
  for (double hu : {hu_lung, hu_soft, hu_contrast, hu_embolus}) {
    if (hu < data::kHuMin || hu > data::kHuMax) {
      throw std::invalid_argument("PhantomSpec: HU value outside CT physical range");
    }
  }
}

PhantomStudy generate_study(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  const int S = spec.n_slices, R = spec.rows, C = spec.cols;
  const double scale = std::min(R, C) / 64.0;

  const Ellipse body{R * 0.5, C * 0.5, R * 0.46, C * 0.46};
  const Ellipse lungs[2] = {
      {R * 0.5, C * 0.5 - C * 0.22, R * 0.32, C * 0.19},
      {R * 0.5, C * 0.5 + C * 0.22, R * 0.32, C * 0.19},
  };

  // Vessel placement: a tube must stay inside its lung field across all
  // slices with a margin of (radius + 1) pixels.
  std::vector<Vessel> vessels;
  for (int v = 0; v < spec.n_vessels; ++v) {
    const Ellipse& lung = lungs[v % 2];
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Vessel ves;
      ves.radius = rng.uniform(5.0, 7.5) * scale;
      ves.base_r = rng.uniform(lung.cr - lung.ar * 0.5, lung.cr + lung.ar * 0.5);
      ves.base_c = rng.uniform(lung.cc - lung.ac * 0.4, lung.cc + lung.ac * 0.4);
      ves.drift_r = rng.uniform(-0.6, 0.6) * scale;
      ves.drift_c = rng.uniform(-0.6, 0.6) * scale;
      bool ok = true;
      for (int s = 0; s < S; ++s) {
        if (!lung.contains(ves.center_r(s), ves.center_c(s), ves.radius + 1.0)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        vessels.push_back(ves);
        placed = true;
      }
    }
    if (!placed) {
      throw std::runtime_error("generate_study: vessel geometry cannot fit; "
                               "enlarge the volume or reduce n_vessels");
    }
  }

  // Embolus: a contiguous slice run in one vessel, radius two pixels inside
  // the lumen so a contrast rim survives rasterization.
  int emb_vessel = -1, emb_begin = 0, emb_end = 0;
  double emb_radius = 0.0;
  if (spec.pe) {
    emb_vessel = rng.uniform_int(0, spec.n_vessels - 1);
    int run = std::max(2, S / 2);
    emb_begin = rng.uniform_int(1, std::max(1, S - run - 1));
    emb_end = std::min(S, emb_begin + run);
    emb_radius = vessels[emb_vessel].radius - 2.0;
    if (emb_radius < 1.5) emb_radius = 1.5;
  }

  CtVolume vol;
  vol.patient_id = "phantom";
  vol.n_slices = S;
  vol.rows = R;
  vol.cols = C;
  vol.slice_thickness_mm = 8.0;
  vol.pixel_spacing_mm = 0.49;
  vol.pe_label = spec.pe;
  vol.voxels.resize(static_cast<size_t>(S) * R * C);

  MaskVolume masks(S, R, C);

  std::vector<double> hu(static_cast<size_t>(S) * R * C, -1000.0);  // air
  for (int s = 0; s < S; ++s) {
    for (int r = 0; r < R; ++r) {
      for (int c = 0; c < C; ++c) {
        size_t i = (static_cast<size_t>(s) * R + r) * C + c;
        double rr = r + 0.0, cc = c + 0.0;
        if (!body.contains(rr, cc)) continue;
        hu[i] = spec.hu_soft;
        if (lungs[0].contains(rr, cc) || lungs[1].contains(rr, cc)) hu[i] = spec.hu_lung;
      }
    }
    // All lumens first, then the embolus, so overlapping vessels cannot
    // overdraw the filling defect with contrast.
    for (const Vessel& ves : vessels) {
      double vr = ves.center_r(s), vc = ves.center_c(s);
      int rlo = std::max(0, static_cast<int>(std::floor(vr - ves.radius - 1)));
      int rhi = std::min(R - 1, static_cast<int>(std::ceil(vr + ves.radius + 1)));
      int clo = std::max(0, static_cast<int>(std::floor(vc - ves.radius - 1)));
      int chi = std::min(C - 1, static_cast<int>(std::ceil(vc + ves.radius + 1)));
      for (int r = rlo; r <= rhi; ++r) {
        for (int c = clo; c <= chi; ++c) {
          double d2 = (r - vr) * (r - vr) + (c - vc) * (c - vc);
          if (d2 <= ves.radius * ves.radius) hu[(static_cast<size_t>(s) * R + r) * C + c] =
              spec.hu_contrast;
        }
      }
    }
    if (emb_vessel >= 0 && s >= emb_begin && s < emb_end) {
      const Vessel& ves = vessels[emb_vessel];
      double vr = ves.center_r(s), vc = ves.center_c(s);
      int rlo = std::max(0, static_cast<int>(std::floor(vr - emb_radius - 1)));
      int rhi = std::min(R - 1, static_cast<int>(std::ceil(vr + emb_radius + 1)));
      int clo = std::max(0, static_cast<int>(std::floor(vc - emb_radius - 1)));
      int chi = std::min(C - 1, static_cast<int>(std::ceil(vc + emb_radius + 1)));
      for (int r = rlo; r <= rhi; ++r) {
        for (int c = clo; c <= chi; ++c) {
          double d2 = (r - vr) * (r - vr) + (c - vc) * (c - vc);
          if (d2 <= emb_radius * emb_radius) {
            hu[(static_cast<size_t>(s) * R + r) * C + c] = spec.hu_embolus;
            masks.at(s, r, c) = 1;
          }
        }
      }
    }
  }

  // Noise last, then integer rounding and the physical clamp.
  for (size_t i = 0; i < hu.size(); ++i) {
    double v = hu[i];
    if (spec.noise_sigma_hu > 0) v += rng.normal(0.0, spec.noise_sigma_hu);
    long q = std::lround(v);
    q = std::clamp<long>(q, data::kHuMin, data::kHuMax);
    vol.voxels[i] = static_cast<int16_t>(q);
  }

  PhantomStudy study;
  study.labels.resize(S);
  bool any_pe = false;
  for (int s = 0; s < S; ++s) {
    bool nonempty = masks.slice_nonempty(s);
    study.labels[s] = nonempty ? SliceLabel::PE : SliceLabel::NON_PE;
    any_pe = any_pe || nonempty;
  }
  if (any_pe != spec.pe) {
    throw std::runtime_error("generate_study: embolus construction failed label consistency");
  }
  study.volume = std::move(vol);
  study.masks = std::move(masks);
  return study;
}

DatasetManifest generate_cohort(int n_pe, int n_non_pe, uint64_t base_seed,
                                const PhantomSpec& tmpl, const std::filesystem::path& out_dir) {
  if (n_pe < 0 || n_non_pe < 0) throw std::invalid_argument("generate_cohort: negative counts");
  std::filesystem::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.source_tag = "phantom";
  const int total = n_pe + n_non_pe;
  for (int i = 0; i < total; ++i) {
    PhantomSpec spec = tmpl;
    spec.seed = base_seed + static_cast<uint64_t>(i);
    spec.pe = i < n_pe;

    char name[32];
    std::snprintf(name, sizeof(name), "ph%03d", i);
    PhantomStudy study = generate_study(spec);
    study.volume.patient_id = name;

    data::save_volume(study.volume, out_dir / name);
    data::save_mask_volume(study.masks, name, out_dir / name);

    ManifestEntry entry;
    entry.patient_id = name;
    entry.volume_path = std::string(name) + ".ctvol.json";
    entry.mask_path = std::string(name) + ".mask.json";
    entry.pe_label = spec.pe;
    manifest.entries.push_back(std::move(entry));
  }
  data::save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace pecad::phantom
