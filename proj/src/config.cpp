#include "pecad/config.hpp"

#include <fstream>

#include "pecad/hashutil.hpp"

namespace pecad::config {

using nlohmann::json;
namespace fs = std::filesystem;

RunConfig::RunConfig() {
  // Desk-scale effective defaults; the PreprocConfig/PhantomSpec type
  // defaults stay at the full-scale values.
  preprocess.crop_size = 64;
  phantom.rows = 64;
  phantom.cols = 64;
  phantom.n_slices = 8;
  phantom.n_vessels = 3;
  training.max_epochs = 40;
  training.batch_size = 8;
  training.early_stop_patience = 12;
  segmenter_max_epochs = 80;
}

json RunConfig::to_json() const {
  return json{
      {"seed", seed},
      {"output_dir", output_dir},
      {"dataset", {{"split_ratios", {split_ratios[0], split_ratios[1], split_ratios[2]}}}},
      {"preprocess",
       {{"hu_limit", preprocess.hu_limit},
        {"crop_size", preprocess.crop_size},
        {"upsample_factor", preprocess.upsample_factor},
        {"lung_hu_low", preprocess.lung_hu_low},
        {"lung_hu_high", preprocess.lung_hu_high},
        {"lung_area_fraction_min", preprocess.lung_area_fraction_min}}},
      {"phantom",
       {{"n_slices", phantom.n_slices},
        {"rows", phantom.rows},
        {"cols", phantom.cols},
        {"n_vessels", phantom.n_vessels},
        {"hu_lung", phantom.hu_lung},
        {"hu_soft", phantom.hu_soft},
        {"hu_contrast", phantom.hu_contrast},
        {"hu_embolus", phantom.hu_embolus},
        {"noise_sigma_hu", phantom.noise_sigma_hu}}},
      {"classifier",
       {{"scale", nn::scale_name(classifier_scale)},
        {"width_multiplier", classifier_width_multiplier}}},
      {"fp_classifier", {{"scale", nn::scale_name(classifier_scale)}}},
      {"segmenter", {{"scale", nn::scale_name(segmenter_scale)}}},
      {"training", training.to_json()},
      {"segmenter_max_epochs", segmenter_max_epochs},
      {"triage", {{"threshold", triage_threshold}, {"mask_threshold", triage_mask_threshold}}},
      {"metrics", json::object()}};
}

namespace {
template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  maybe(j, "seed", c.seed);
  maybe(j, "output_dir", c.output_dir);
  if (j.contains("dataset") && j["dataset"].contains("split_ratios")) {
    auto r = j["dataset"]["split_ratios"];
    c.split_ratios = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>()};
  }
  if (j.contains("preprocess")) {
    const json& p = j["preprocess"];
    maybe(p, "hu_limit", c.preprocess.hu_limit);
    maybe(p, "crop_size", c.preprocess.crop_size);
    maybe(p, "upsample_factor", c.preprocess.upsample_factor);
    maybe(p, "lung_hu_low", c.preprocess.lung_hu_low);
    maybe(p, "lung_hu_high", c.preprocess.lung_hu_high);
    maybe(p, "lung_area_fraction_min", c.preprocess.lung_area_fraction_min);
  }
  if (j.contains("phantom")) {
    const json& p = j["phantom"];
    maybe(p, "n_slices", c.phantom.n_slices);
    maybe(p, "rows", c.phantom.rows);
    maybe(p, "cols", c.phantom.cols);
    maybe(p, "n_vessels", c.phantom.n_vessels);
    maybe(p, "hu_lung", c.phantom.hu_lung);
    maybe(p, "hu_soft", c.phantom.hu_soft);
    maybe(p, "hu_contrast", c.phantom.hu_contrast);
    maybe(p, "hu_embolus", c.phantom.hu_embolus);
    maybe(p, "noise_sigma_hu", c.phantom.noise_sigma_hu);
  }
  if (j.contains("classifier")) {
    const json& p = j["classifier"];
    if (p.contains("scale")) {
      c.classifier_scale =
          p["scale"].get<std::string>() == "paper" ? nn::Scale::PAPER : nn::Scale::DESK;
    }
    maybe(p, "width_multiplier", c.classifier_width_multiplier);
  }
  if (j.contains("segmenter") && j["segmenter"].contains("scale")) {
    c.segmenter_scale =
        j["segmenter"]["scale"].get<std::string>() == "paper" ? nn::Scale::PAPER : nn::Scale::DESK;
  }
  if (j.contains("training")) {
    const json& t = j["training"];
    maybe(t, "base_lr", c.training.base_lr);
    maybe(t, "max_epochs", c.training.max_epochs);
    maybe(t, "batch_size", c.training.batch_size);
    maybe(t, "focal_gamma", c.training.focal_gamma);
    maybe(t, "focal_alpha", c.training.focal_alpha);
    maybe(t, "dice_smooth", c.training.dice_smooth);
    maybe(t, "lookahead_k", c.training.lookahead_k);
    maybe(t, "lookahead_alpha", c.training.lookahead_alpha);
    maybe(t, "early_stop_patience", c.training.early_stop_patience);
    maybe(t, "beta1", c.training.beta1);
    maybe(t, "beta2", c.training.beta2);
    maybe(t, "eps", c.training.eps);
    maybe(t, "rect_threshold", c.training.rect_threshold);
    maybe(t, "cosine_lr", c.training.cosine_lr);
  }
  maybe(j, "segmenter_max_epochs", c.segmenter_max_epochs);
  if (j.contains("triage")) {
    maybe(j["triage"], "threshold", c.triage_threshold);
    maybe(j["triage"], "mask_threshold", c.triage_mask_threshold);
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  in >> j;
  return from_json(j);
}

std::string RunConfig::config_hash() const { return hash_hex(to_json().dump()); }

fs::path RunConfig::run_dir() const {
  return fs::path(output_dir) / ("run-" + config_hash().substr(0, 12));
}

nn::ClassifierConfig RunConfig::drn_config() const {
  auto c = nn::classifier_preset(nn::Arch::DRN, classifier_scale);
  c.input = {1, preprocess.crop_size, preprocess.crop_size};
  c.width_multiplier = classifier_width_multiplier;
  c.init_seed = seed * 1000 + 1;
  return c;
}

nn::ClassifierConfig RunConfig::mixnet_config() const {
  auto c = nn::classifier_preset(nn::Arch::MIXNET, classifier_scale);
  c.input = {1, preprocess.crop_size, preprocess.crop_size};
  c.width_multiplier = classifier_width_multiplier;
  c.init_seed = seed * 1000 + 2;
  return c;
}

nn::ClassifierConfig RunConfig::fpnet_config() const {
  auto c = nn::classifier_preset(nn::Arch::DRN, classifier_scale);
  c.input = {1, preprocess.crop_size, preprocess.crop_size};
  c.init_seed = seed * 1000 + 3;
  return c;
}

nn::SegmenterConfig RunConfig::segmenter_config() const {
  auto c = nn::segmenter_preset(segmenter_scale);
  c.input = {1, preprocess.crop_size, preprocess.crop_size};
  c.init_seed = seed * 1000 + 4;
  return c;
}

train::TrainConfig RunConfig::classifier_training() const {
  train::TrainConfig t = training;
  t.loss = train::LossKind::FOCAL_BCE;
  t.augment_flips = false;
  t.seed = seed;
  return t;
}

train::TrainConfig RunConfig::segmenter_training() const {
  train::TrainConfig t = training;
  t.loss = train::LossKind::BCE_PLUS_DICE;
  t.augment_flips = true;
  t.seed = seed;
  if (segmenter_max_epochs > 0) t.max_epochs = segmenter_max_epochs;
  return t;
}

}  // namespace pecad::config
