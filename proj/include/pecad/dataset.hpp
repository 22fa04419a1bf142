#ifndef PECAD_DATASET_HPP_
#define PECAD_DATASET_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pecad::data {

/// 2D real image, row-major. Preprocessed slice values live in [-1, 1].
struct Image2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Image2D() = default;
  Image2D(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

/// 2D binary mask, row-major, values {0, 1}.
struct Mask2D {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> v;

  Mask2D() = default;
  Mask2D(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0) {}
  uint8_t& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  uint8_t at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t count() const {
    size_t n = 0;
    for (uint8_t x : v) n += (x != 0);
    return n;
  }
};

constexpr int16_t kHuMin = -2048;
constexpr int16_t kHuMax = 4095;

/// One patient's CT study: a stack of signed 16-bit HU slices plus geometry.
/// Voxels are stored slice-major in C order (slice, row, col).
struct CtVolume {
  std::string patient_id;
  int n_slices = 0;
  int rows = 0;
  int cols = 0;
  double slice_thickness_mm = 1.0;
  double pixel_spacing_mm = 1.0;
  bool pe_label = false;
  std::vector<int16_t> voxels;

  int16_t at(int s, int r, int c) const {
    return voxels[(static_cast<size_t>(s) * rows + r) * cols + c];
  }
  int16_t& at(int s, int r, int c) {
    return voxels[(static_cast<size_t>(s) * rows + r) * cols + c];
  }
  const int16_t* slice(int s) const {
    return voxels.data() + static_cast<size_t>(s) * rows * cols;
  }

  /// Throws std::invalid_argument on any violated invariant
  /// (empty stack, size mismatch, HU outside [-2048, 4095]).
  void validate() const;
};

/// Per-slice binary ground truth, same grid as the owning volume.
struct MaskVolume {
  int n_slices = 0;
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> voxels;

  MaskVolume() = default;
  MaskVolume(int s, int r, int c)
      : n_slices(s), rows(r), cols(c), voxels(static_cast<size_t>(s) * r * c, 0) {}
  uint8_t& at(int s, int r, int c) {
    return voxels[(static_cast<size_t>(s) * rows + r) * cols + c];
  }
  uint8_t at(int s, int r, int c) const {
    return voxels[(static_cast<size_t>(s) * rows + r) * cols + c];
  }
  Mask2D slice(int s) const;
  bool slice_nonempty(int s) const;
};

enum class SliceLabel { NON_PE = 0, PE = 1 };

/// One preprocessed 2D image with label, optional lesion mask, patient linkage.
struct SliceRecord {
  std::string patient_id;
  int slice_index = 0;
  Image2D image;
  SliceLabel label = SliceLabel::NON_PE;
  std::optional<Mask2D> mask;

  /// Mask shape/consistency invariants; throws on violation.
  void validate() const;
};

struct ManifestEntry {
  std::string patient_id;
  std::string volume_path;      // path to the .ctvol.json header
  bool pe_label = false;
  std::string mask_path;        // optional; empty when absent
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string source_tag = "phantom";  // {clinical, open, phantom}

  const ManifestEntry* find(const std::string& patient_id) const;
};

enum class Split { TRAIN = 0, VAL = 1, TEST = 2 };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct SplitAssignment {
  std::map<std::string, Split> assignment;
  uint64_t seed = 0;
  std::array<double, 3> ratios{0.7, 0.2, 0.1};

  std::vector<std::string> patients_in(Split s) const;
};

// ---- Volume / mask / manifest IO ----
//
// Volume format: <name>.ctvol.json header + <name>.ctvol.raw payload of
// n_slices*rows*cols little-endian int16 in (slice, row, col) C order.
// Mask format:   <name>.mask.json  header + <name>.mask.raw, dtype uint8.
// `path` may name the header file or the bare <name> stem.

CtVolume load_volume(const std::filesystem::path& path);
void save_volume(const CtVolume& vol, const std::filesystem::path& path);

MaskVolume load_mask_volume(const std::filesystem::path& path);
void save_mask_volume(const MaskVolume& mask, const std::string& patient_id,
                      const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

SplitAssignment load_split(const std::filesystem::path& path);
void save_split(const SplitAssignment& split, const std::filesystem::path& path);

/// Deterministic patient-level split. Patients are sorted, shuffled by `seed`,
/// then assigned counts round(N*ratio) for VAL and TEST with the remainder
/// going to TRAIN. Rerunning with the same inputs reproduces the assignment
/// bit-identically, and no patient straddles splits.
SplitAssignment split_by_patient(const DatasetManifest& manifest,
                                 const std::array<double, 3>& ratios, uint64_t seed);

}  // namespace pecad::data

#endif  // PECAD_DATASET_HPP_
