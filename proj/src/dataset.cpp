#include "pecad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "pecad/rng.hpp"
#include <nlohmann/json.hpp>

namespace pecad::data {

using nlohmann::json;
namespace fs = std::filesystem;

void CtVolume::validate() const {
  if (patient_id.empty()) throw std::invalid_argument("CtVolume: empty patient_id");
  if (n_slices < 1) throw std::invalid_argument("CtVolume: slice count must be >= 1");
  if (rows < 1 || cols < 1) throw std::invalid_argument("CtVolume: non-positive slice dims");
  if (slice_thickness_mm <= 0 || pixel_spacing_mm <= 0) {
    throw std::invalid_argument("CtVolume: non-positive geometry");
  }
  size_t expected = static_cast<size_t>(n_slices) * rows * cols;
  if (voxels.size() != expected) {
    throw std::invalid_argument("CtVolume: voxel count " + std::to_string(voxels.size()) +
                                " does not match dims (" + std::to_string(n_slices) + "," +
                                std::to_string(rows) + "," + std::to_string(cols) + ")");
  }
  for (int16_t v : voxels) {
    if (v < kHuMin || v > kHuMax) {
      throw std::invalid_argument("CtVolume: HU value " + std::to_string(v) +
                                  " outside [-2048, 4095]");
    }
  }
}

Mask2D MaskVolume::slice(int s) const {
  Mask2D m(rows, cols);
  std::memcpy(m.v.data(), voxels.data() + static_cast<size_t>(s) * rows * cols,
              static_cast<size_t>(rows) * cols);
  return m;
}

bool MaskVolume::slice_nonempty(int s) const {
  const uint8_t* p = voxels.data() + static_cast<size_t>(s) * rows * cols;
  for (size_t i = 0; i < static_cast<size_t>(rows) * cols; ++i) {
    if (p[i]) return true;
  }
  return false;
}

void SliceRecord::validate() const {
  if (mask) {
    if (mask->rows != image.rows || mask->cols != image.cols) {
      throw std::invalid_argument("SliceRecord: mask shape differs from image");
    }
    if (label != SliceLabel::PE && mask->count() != 0) {
      throw std::invalid_argument("SliceRecord: NON_PE slice with nonempty mask");
    }
  }
  for (double x : image.v) {
    if (!(x >= -1.0 && x <= 1.0)) {
      throw std::invalid_argument("SliceRecord: image value outside [-1, 1]");
    }
  }
}

const ManifestEntry* DatasetManifest::find(const std::string& patient_id) const {
  for (const auto& e : entries) {
    if (e.patient_id == patient_id) return &e;
  }
  return nullptr;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::TRAIN: return "TRAIN";
    case Split::VAL: return "VAL";
    case Split::TEST: return "TEST";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "TRAIN") return Split::TRAIN;
  if (name == "VAL") return Split::VAL;
  if (name == "TEST") return Split::TEST;
  throw std::invalid_argument("unknown split name: " + name);
}

std::vector<std::string> SplitAssignment::patients_in(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, sp] : assignment) {
    if (sp == s) out.push_back(id);
  }
  return out;
}

namespace {

// Resolves "<stem>", "<stem>.ctvol" or "<stem>.ctvol.json" to the pair stem.
fs::path strip_suffix(fs::path p, const std::string& kind) {
  std::string s = p.string();
  const std::string hdr = "." + kind + ".json";
  const std::string mid = "." + kind;
  if (s.size() > hdr.size() && s.compare(s.size() - hdr.size(), hdr.size(), hdr) == 0) {
    return fs::path(s.substr(0, s.size() - hdr.size()));
  }
  if (s.size() > mid.size() && s.compare(s.size() - mid.size(), mid.size(), mid) == 0) {
    return fs::path(s.substr(0, s.size() - mid.size()));
  }
  return p;
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  json j;
  in >> j;
  return j;
}

void write_json_file(const json& j, const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

std::vector<unsigned char> read_raw(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  in.seekg(0, std::ios::end);
  std::streamoff len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> buf(static_cast<size_t>(len));
  in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw std::runtime_error("short read from " + p.string());
  return buf;
}

}  // namespace

CtVolume load_volume(const fs::path& path) {
  fs::path stem = strip_suffix(path, "ctvol");
  fs::path hdr_path = stem;
  hdr_path += ".ctvol.json";
  fs::path raw_path = stem;
  raw_path += ".ctvol.raw";

  json hdr = read_json_file(hdr_path);
  CtVolume vol;
  vol.patient_id = hdr.at("patient_id").get<std::string>();
  vol.pe_label = hdr.at("pe_label").get<bool>();
  vol.n_slices = hdr.at("n_slices").get<int>();
  vol.rows = hdr.at("rows").get<int>();
  vol.cols = hdr.at("cols").get<int>();
  vol.slice_thickness_mm = hdr.at("slice_thickness_mm").get<double>();
  vol.pixel_spacing_mm = hdr.at("pixel_spacing_mm").get<double>();
  if (hdr.at("dtype").get<std::string>() != "int16-le") {
    throw std::runtime_error(hdr_path.string() + ": unsupported dtype");
  }
  if (hdr.at("order").get<std::string>() != "slice-row-col") {
    throw std::runtime_error(hdr_path.string() + ": unsupported order");
  }

  std::vector<unsigned char> raw = read_raw(raw_path);
  size_t expected = static_cast<size_t>(vol.n_slices) * vol.rows * vol.cols * 2;
  if (raw.size() != expected) {
    throw std::runtime_error(raw_path.string() + ": raw payload is " +
                             std::to_string(raw.size()) + " bytes, header implies " +
                             std::to_string(expected));
  }
  vol.voxels.resize(expected / 2);
  for (size_t i = 0; i < vol.voxels.size(); ++i) {
    uint16_t u = static_cast<uint16_t>(raw[2 * i]) |
                 (static_cast<uint16_t>(raw[2 * i + 1]) << 8);
    vol.voxels[i] = static_cast<int16_t>(u);
  }
  vol.validate();
  return vol;
}

void save_volume(const CtVolume& vol, const fs::path& path) {
  vol.validate();
  fs::path stem = strip_suffix(path, "ctvol");
  fs::path hdr_path = stem;
  hdr_path += ".ctvol.json";
  fs::path raw_path = stem;
  raw_path += ".ctvol.raw";

  json hdr{{"patient_id", vol.patient_id},
           {"pe_label", vol.pe_label},
           {"n_slices", vol.n_slices},
           {"rows", vol.rows},
           {"cols", vol.cols},
           {"slice_thickness_mm", vol.slice_thickness_mm},
           {"pixel_spacing_mm", vol.pixel_spacing_mm},
           {"dtype", "int16-le"},
           {"order", "slice-row-col"}};
  write_json_file(hdr, hdr_path);

  std::ofstream out(raw_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + raw_path.string());
  std::vector<unsigned char> raw(vol.voxels.size() * 2);
  for (size_t i = 0; i < vol.voxels.size(); ++i) {
    uint16_t u = static_cast<uint16_t>(vol.voxels[i]);
    raw[2 * i] = static_cast<unsigned char>(u & 0xff);
    raw[2 * i + 1] = static_cast<unsigned char>(u >> 8);
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("short write to " + raw_path.string());
}

MaskVolume load_mask_volume(const fs::path& path) {
  fs::path stem = strip_suffix(path, "mask");
  fs::path hdr_path = stem;
  hdr_path += ".mask.json";
  fs::path raw_path = stem;
  raw_path += ".mask.raw";

  json hdr = read_json_file(hdr_path);
  MaskVolume m;
  m.n_slices = hdr.at("n_slices").get<int>();
  m.rows = hdr.at("rows").get<int>();
  m.cols = hdr.at("cols").get<int>();
  if (hdr.at("dtype").get<std::string>() != "uint8") {
    throw std::runtime_error(hdr_path.string() + ": unsupported dtype");
  }

  std::vector<unsigned char> raw = read_raw(raw_path);
  size_t expected = static_cast<size_t>(m.n_slices) * m.rows * m.cols;
  if (raw.size() != expected) {
    throw std::runtime_error(raw_path.string() + ": raw payload size mismatch");
  }
  m.voxels.assign(raw.begin(), raw.end());
  for (uint8_t v : m.voxels) {
    if (v > 1) throw std::runtime_error(raw_path.string() + ": mask value not in {0,1}");
  }
  return m;
}

void save_mask_volume(const MaskVolume& mask, const std::string& patient_id,
                      const fs::path& path) {
  fs::path stem = strip_suffix(path, "mask");
  fs::path hdr_path = stem;
  hdr_path += ".mask.json";
  fs::path raw_path = stem;
  raw_path += ".mask.raw";

  json hdr{{"patient_id", patient_id},
           {"n_slices", mask.n_slices},
           {"rows", mask.rows},
           {"cols", mask.cols},
           {"dtype", "uint8"},
           {"order", "slice-row-col"}};
  write_json_file(hdr, hdr_path);

  std::ofstream out(raw_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + raw_path.string());
  out.write(reinterpret_cast<const char*>(mask.voxels.data()),
            static_cast<std::streamsize>(mask.voxels.size()));
  if (!out) throw std::runtime_error("short write to " + raw_path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  json j = read_json_file(path);
  DatasetManifest m;
  m.source_tag = j.at("source_tag").get<std::string>();
  for (const auto& e : j.at("entries")) {
    ManifestEntry entry;
    entry.patient_id = e.at("patient_id").get<std::string>();
    entry.volume_path = e.at("volume").get<std::string>();
    entry.pe_label = e.at("pe_label").get<bool>();
    if (e.contains("mask")) entry.mask_path = e.at("mask").get<std::string>();
    m.entries.push_back(std::move(entry));
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    for (size_t j = i + 1; j < manifest.entries.size(); ++j) {
      if (manifest.entries[i].patient_id == manifest.entries[j].patient_id) {
        throw std::invalid_argument("manifest: duplicate patient_id " +
                                    manifest.entries[i].patient_id);
      }
    }
  }
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    json je{{"patient_id", e.patient_id}, {"volume", e.volume_path}, {"pe_label", e.pe_label}};
    if (!e.mask_path.empty()) je["mask"] = e.mask_path;
    entries.push_back(je);
  }
  write_json_file(json{{"source_tag", manifest.source_tag}, {"entries", entries}}, path);
}

SplitAssignment load_split(const fs::path& path) {
  json j = read_json_file(path);
  SplitAssignment s;
  s.seed = j.at("seed").get<uint64_t>();
  auto r = j.at("ratios");
  s.ratios = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>()};
  for (const auto& [id, name] : j.at("assignment").items()) {
    s.assignment[id] = split_from_name(name.get<std::string>());
  }
  return s;
}

void save_split(const SplitAssignment& split, const fs::path& path) {
  json assignment = json::object();
  for (const auto& [id, sp] : split.assignment) assignment[id] = split_name(sp);
  write_json_file(json{{"seed", split.seed},
                       {"ratios", {split.ratios[0], split.ratios[1], split.ratios[2]}},
                       {"assignment", assignment}},
                  path);
}

SplitAssignment split_by_patient(const DatasetManifest& manifest,
                                 const std::array<double, 3>& ratios, uint64_t seed) {
  if (manifest.entries.empty()) throw std::invalid_argument("split_by_patient: empty manifest");
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
    throw std::invalid_argument("split_by_patient: ratios must be non-negative and sum to 1");
  }

  std::vector<std::string> ids;
  ids.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) ids.push_back(e.patient_id);
  std::sort(ids.begin(), ids.end());
  for (size_t i = 1; i < ids.size(); ++i) {
    if (ids[i] == ids[i - 1]) {
      throw std::invalid_argument("split_by_patient: duplicate patient_id " + ids[i]);
    }
  }

  Rng rng(seed);
  rng.shuffle(ids);

  // VAL and TEST take round(N*ratio); every leftover patient lands in TRAIN.
  const long n = static_cast<long>(ids.size());
  long n_val = std::lround(n * ratios[1]);
  long n_test = std::lround(n * ratios[2]);
  if (n_val + n_test > n) n_val = n - n_test;
  long n_train = n - n_val - n_test;

  SplitAssignment out;
  out.seed = seed;
  out.ratios = ratios;
  for (long i = 0; i < n; ++i) {
    Split s = i < n_train            ? Split::TRAIN
              : i < n_train + n_val  ? Split::VAL
                                     : Split::TEST;
    out.assignment[ids[i]] = s;
  }
  return out;
}

}  // namespace pecad::data
