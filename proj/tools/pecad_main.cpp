#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "pecad/config.hpp"
#include "pecad/dataset.hpp"
#include "pecad/phantom.hpp"
#include "pecad/pipeline.hpp"
#include "pecad/training.hpp"
#include "pecad/triage.hpp"

namespace fs = std::filesystem;
using pecad::config::RunConfig;
using nlohmann::json;

namespace {

void write_run_stamp(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.run_dir());
  std::ofstream out(cfg.run_dir() / "run.json", std::ios::trunc);
  out << json{{"config_hash", cfg.config_hash()},
              {"seed", cfg.seed},
              {"last_command", command},
              {"config", cfg.to_json()}}
             .dump(2)
      << "\n";
}

struct LoadedModels {
  std::unique_ptr<pecad::nn::Model> drn, mixnet, fpnet, segmenter;
};

LoadedModels load_all_checkpoints(const RunConfig& cfg) {
  const fs::path ckpt_dir = cfg.run_dir() / "ckpt";
  for (const char* t : {"drn", "mixnet", "fpnet", "segmenter"}) {
    if (!fs::exists(ckpt_dir / (std::string(t) + ".ckpt"))) {
      throw std::runtime_error("missing checkpoint " + (ckpt_dir / t).string() +
                               ".ckpt (run `pecad train " + t + "` first)");
    }
  }
  LoadedModels m;
  m.drn = pecad::nn::build_classifier(cfg.drn_config());
  m.mixnet = pecad::nn::build_classifier(cfg.mixnet_config());
  m.fpnet = pecad::nn::build_classifier(cfg.fpnet_config());
  m.segmenter = pecad::nn::build_segmenter(cfg.segmenter_config());
  pecad::nn::load_checkpoint(*m.drn, ckpt_dir / "drn.ckpt");
  pecad::nn::load_checkpoint(*m.mixnet, ckpt_dir / "mixnet.ckpt");
  pecad::nn::load_checkpoint(*m.fpnet, ckpt_dir / "fpnet.ckpt");
  pecad::nn::load_checkpoint(*m.segmenter, ckpt_dir / "segmenter.ckpt");
  return m;
}

int cmd_synth(const RunConfig& cfg, int n_pe, int n_non_pe) {
  if (n_pe + n_non_pe < 1) {
    std::cerr << "synth: empty cohort (need --pe and/or --non-pe > 0)\n";
    return 1;
  }
  write_run_stamp(cfg, "synth");
  const fs::path data_dir = cfg.run_dir() / "data";
  pecad::phantom::generate_cohort(n_pe, n_non_pe, cfg.seed, cfg.phantom, data_dir);
  std::cout << (data_dir / "manifest.json").string() << "\n";
  return 0;
}

int cmd_split(const RunConfig& cfg, const std::string& manifest_override) {
  write_run_stamp(cfg, "split");
  fs::path manifest_path = manifest_override.empty()
                               ? cfg.run_dir() / "data" / "manifest.json"
                               : fs::path(manifest_override);
  auto manifest = pecad::data::load_manifest(manifest_path);
  auto split = pecad::data::split_by_patient(manifest, cfg.split_ratios, cfg.seed);
  fs::path out = cfg.run_dir() / "split.json";
  pecad::data::save_split(split, out);
  std::cout << out.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& target, const std::string& manifest_override) {
  write_run_stamp(cfg, "train " + target);
  fs::path manifest_path = manifest_override.empty()
                               ? cfg.run_dir() / "data" / "manifest.json"
                               : fs::path(manifest_override);
  auto manifest = pecad::data::load_manifest(manifest_path);
  auto split = pecad::data::load_split(cfg.run_dir() / "split.json");
  const fs::path base_dir = manifest_path.parent_path();

  auto train_studies =
      pecad::pipeline::load_split_studies(manifest, split, pecad::data::Split::TRAIN, base_dir);
  auto val_studies =
      pecad::pipeline::load_split_studies(manifest, split, pecad::data::Split::VAL, base_dir);

  std::vector<pecad::data::SliceRecord> train_recs, val_recs;
  std::unique_ptr<pecad::nn::Model> model;
  pecad::train::TrainConfig tc;

  if (target == "drn" || target == "mixnet") {
    train_recs = pecad::pipeline::classifier_records(train_studies, cfg.preprocess, true);
    val_recs = pecad::pipeline::classifier_records(val_studies, cfg.preprocess, false);
    model = pecad::nn::build_classifier(target == "drn" ? cfg.drn_config() : cfg.mixnet_config());
    tc = cfg.classifier_training();
  } else if (target == "fpnet") {
    train_recs = pecad::pipeline::fp_reduction_records(train_studies, cfg.preprocess);
    val_recs = pecad::pipeline::fp_reduction_records(val_studies, cfg.preprocess);
    bool any_pe = false;
    for (const auto& r : train_recs) any_pe |= (r.label == pecad::data::SliceLabel::PE);
    if (!any_pe) throw std::runtime_error("train fpnet: empty positive set in training split");
    model = pecad::nn::build_classifier(cfg.fpnet_config());
    tc = cfg.classifier_training();
  } else if (target == "segmenter") {
    train_recs = pecad::pipeline::segmenter_records(train_studies, cfg.preprocess);
    val_recs = pecad::pipeline::segmenter_records(val_studies, cfg.preprocess);
    if (train_recs.empty()) throw std::runtime_error("train segmenter: no masked PE slices in training split");
    model = pecad::nn::build_segmenter(cfg.segmenter_config());
    tc = cfg.segmenter_training();
  } else {
    std::cerr << "unknown train target: " << target << "\n";
    return 1;
  }

  auto result = pecad::train::train_model(*model, train_recs, val_recs, tc);

  const fs::path log_path = cfg.run_dir() / ("train_" + target + ".jsonl");
  std::ofstream log(log_path, std::ios::trunc);
  for (const auto& e : result.logs) {
    log << json{{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss},
                {"val_loss", e.val_loss}}
               .dump()
        << "\n";
  }

  const fs::path ckpt_dir = cfg.run_dir() / "ckpt";
  fs::create_directories(ckpt_dir);
  const fs::path ckpt = ckpt_dir / (target + ".ckpt");
  pecad::nn::save_checkpoint(*model, ckpt,
                             json{{"target", target},
                                  {"epoch", result.best_epoch},
                                  {"val_metrics", {{"loss", result.best_val_loss}}},
                                  {"training_seed", tc.seed},
                                  {"rng_digest", result.rng_digest},
                                  {"run_config_hash", cfg.config_hash()}});
  std::cout << ckpt.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& split_name,
             const std::string& manifest_override) {
  write_run_stamp(cfg, "eval " + split_name);
  fs::path manifest_path = manifest_override.empty()
                               ? cfg.run_dir() / "data" / "manifest.json"
                               : fs::path(manifest_override);
  auto manifest = pecad::data::load_manifest(manifest_path);
  auto split = pecad::data::load_split(cfg.run_dir() / "split.json");
  auto studies = pecad::pipeline::load_split_studies(
      manifest, split, pecad::data::split_from_name(split_name), manifest_path.parent_path());

  LoadedModels m = load_all_checkpoints(cfg);
  pecad::pipeline::EvalModels em{m.drn.get(), m.mixnet.get(), m.fpnet.get(), m.segmenter.get()};
  auto report = pecad::pipeline::evaluate_split(studies, cfg.preprocess, em, cfg.triage_threshold,
                                                cfg.triage_mask_threshold);
  report.split_name = split_name;

  json doc = report.to_json();
  doc["config_hash"] = cfg.config_hash();
  const fs::path out_path = cfg.run_dir() / ("eval_" + split_name + ".json");
  std::ofstream out(out_path, std::ios::trunc);
  out << doc.dump(2) << "\n";
  std::cout << out_path.string() << "\n";
  return 0;
}

int cmd_triage(const RunConfig& cfg, const std::string& volume_path) {
  write_run_stamp(cfg, "triage");
  auto volume = pecad::data::load_volume(volume_path);
  LoadedModels m = load_all_checkpoints(cfg);
  pecad::triage::TriageModels tm;
  tm.ensemble = {m.drn.get(), m.mixnet.get()};
  tm.fp_net = m.fpnet.get();
  tm.segmenter = m.segmenter.get();

  const fs::path out_dir = cfg.run_dir() / "triage" / volume.patient_id;
  auto report = pecad::triage::run_triage(volume, tm, cfg.preprocess, cfg.triage_threshold,
                                          cfg.triage_mask_threshold, out_dir);
  std::cout << (out_dir / (volume.patient_id + ".triage.json")).string() << "\n";
  return report.verdict.verdict == pecad::data::SliceLabel::PE ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pecad: pulmonary embolism triage pipeline (synthesis, training, evaluation, triage)"};
  app.require_subcommand(1);

  std::string config_path, manifest_override, output_override;
  uint64_t seed_override = 0;
  bool has_seed = false;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", seed_override, "override the global seed")->each([&](const std::string&) {
    has_seed = true;
  });
  app.add_option("--output", output_override, "override the output directory");

  auto* synth = app.add_subcommand("synth", "generate a phantom cohort and manifest");
  int n_pe = 0, n_non_pe = 0;
  synth->add_option("--pe", n_pe, "number of PE patients");
  synth->add_option("--non-pe", n_non_pe, "number of non-PE patients");

  auto* split = app.add_subcommand("split", "assign patients to TRAIN/VAL/TEST");
  split->add_option("--manifest", manifest_override, "manifest path override");

  auto* train = app.add_subcommand("train", "train one model");
  std::string target;
  train->add_option("target", target, "drn | mixnet | fpnet | segmenter")->required();
  train->add_option("--manifest", manifest_override, "manifest path override");

  auto* eval = app.add_subcommand("eval", "evaluate a split with all four models");
  std::string split_name = "TEST";
  eval->add_option("--split", split_name, "VAL or TEST");
  eval->add_option("--manifest", manifest_override, "manifest path override");

  auto* triage = app.add_subcommand("triage", "run the triage pipeline on one volume");
  std::string volume_path;
  triage->add_option("volume", volume_path, "path to a .ctvol.json volume")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
    if (has_seed) cfg.seed = seed_override;
    if (!output_override.empty()) cfg.output_dir = output_override;

    if (synth->parsed()) return cmd_synth(cfg, n_pe, n_non_pe);
    if (split->parsed()) return cmd_split(cfg, manifest_override);
    if (train->parsed()) return cmd_train(cfg, target, manifest_override);
    if (eval->parsed()) return cmd_eval(cfg, split_name, manifest_override);
    if (triage->parsed()) return cmd_triage(cfg, volume_path);
  } catch (const std::exception& e) {
    std::cerr << "pecad: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
