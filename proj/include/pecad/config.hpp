#ifndef PECAD_CONFIG_HPP_
#define PECAD_CONFIG_HPP_

#include <array>
#include <filesystem>
#include <string>

#include "pecad/nn/nets.hpp"
#include "pecad/phantom.hpp"
#include "pecad/preprocess.hpp"
#include "pecad/training.hpp"
#include <nlohmann/json.hpp>

namespace pecad::config {

/// One configuration file drives every command. Defaults are desk-scale and
/// phantom-sized so the full pipeline runs on a CPU out of the box; every key
/// can be overridden in the JSON file. The config hash is computed over the
/// canonical (key-sorted) serialization of the full effective config, so key
/// order in the file never changes the hash.
struct RunConfig {
  uint64_t seed = 1;
  std::string output_dir = "out";

  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};

  prep::PreprocConfig preprocess;     // defaults overridden to desk scale below
  phantom::PhantomSpec phantom;       // template; per-patient seed/pe set at synth

  nn::Scale classifier_scale = nn::Scale::DESK;
  double classifier_width_multiplier = 1.0;
  nn::Scale segmenter_scale = nn::Scale::DESK;

  train::TrainConfig training;        // applies to classifier targets
  int segmenter_max_epochs = 0;       // 0: reuse training.max_epochs

  double triage_threshold = 0.5;
  double triage_mask_threshold = 0.5;

  RunConfig();

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  std::string config_hash() const;
  std::filesystem::path run_dir() const;

  // Model configs derived from the presets: input spec tracks the crop size,
  // init seeds derive from the global seed per role.
  nn::ClassifierConfig drn_config() const;
  nn::ClassifierConfig mixnet_config() const;
  nn::ClassifierConfig fpnet_config() const;
  nn::SegmenterConfig segmenter_config() const;

  train::TrainConfig classifier_training() const;
  train::TrainConfig segmenter_training() const;
};

}  // namespace pecad::config

#endif  // PECAD_CONFIG_HPP_
