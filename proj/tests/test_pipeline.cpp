#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "pecad/config.hpp"
#include "pecad/phantom.hpp"
#include "pecad/pipeline.hpp"
#include "pecad/training.hpp"

using namespace pecad;
namespace fs = std::filesystem;

namespace {

struct Cohort {
  fs::path dir;
  data::DatasetManifest manifest;
  data::SplitAssignment split;
};

Cohort make_cohort() {
  Cohort c;
  c.dir = fs::temp_directory_path() / "pecad_pipeline_cohort";
  fs::remove_all(c.dir);
  phantom::PhantomSpec tmpl;
  tmpl.n_slices = 6;
  c.manifest = phantom::generate_cohort(3, 3, 90, tmpl, c.dir);
  c.split = data::split_by_patient(c.manifest, {0.5, 0.25, 0.25}, 90);
  return c;
}

}  // namespace

TEST_CASE("no patient straddles split slice sets") {
  Cohort c = make_cohort();
  prep::PreprocConfig prep_cfg;
  prep_cfg.crop_size = 64;

  std::set<std::string> seen;
  for (auto which : {data::Split::TRAIN, data::Split::VAL, data::Split::TEST}) {
    auto studies = pipeline::load_split_studies(c.manifest, c.split, which, c.dir);
    auto recs = pipeline::classifier_records(studies, prep_cfg, false);
    for (const auto& r : recs) {
      CAPTURE(r.patient_id);
      CHECK((seen.count(r.patient_id) == 0 ||
             c.split.assignment.at(r.patient_id) == which));
    }
    for (const auto& s : studies) seen.insert(s.volume.patient_id);
  }
  // All six patients accounted for exactly once.
  CHECK(seen.size() == 6);
}

TEST_CASE("record builders shape the training sets correctly") {
  Cohort c = make_cohort();
  prep::PreprocConfig prep_cfg;
  prep_cfg.crop_size = 64;
  prep_cfg.upsample_factor = 5;

  auto studies = pipeline::load_split_studies(c.manifest, c.split, data::Split::TRAIN, c.dir);

  SUBCASE("classifier records cover every slice, masks dropped") {
    auto recs = pipeline::classifier_records(studies, prep_cfg, false);
    size_t expected = 0;
    for (const auto& s : studies) expected += s.volume.n_slices;
    CHECK(recs.size() == expected);
    for (const auto& r : recs) CHECK_FALSE(r.mask.has_value());
  }

  SUBCASE("upsampling multiplies only PE records") {
    auto plain = pipeline::classifier_records(studies, prep_cfg, false);
    auto up = pipeline::classifier_records(studies, prep_cfg, true);
    long pe = 0, non = 0, pe_up = 0, non_up = 0;
    for (const auto& r : plain) (r.label == data::SliceLabel::PE ? pe : non)++;
    for (const auto& r : up) (r.label == data::SliceLabel::PE ? pe_up : non_up)++;
    CHECK(pe_up == 5 * pe);
    CHECK(non_up == non);
  }

  SUBCASE("segmenter records carry nonempty masks only") {
    auto recs = pipeline::segmenter_records(studies, prep_cfg);
    for (const auto& r : recs) {
      CHECK(r.label == data::SliceLabel::PE);
      REQUIRE(r.mask.has_value());
      CHECK(r.mask->count() > 0);
    }
  }

  SUBCASE("fp records are PE slices plus lung slices of non-PE patients") {
    auto recs = pipeline::fp_reduction_records(studies, prep_cfg);
    for (const auto& r : recs) {
      bool patient_pe = c.manifest.find(r.patient_id)->pe_label;
      if (patient_pe) {
        CHECK(r.label == data::SliceLabel::PE);
      } else {
        CHECK(r.label == data::SliceLabel::NON_PE);
      }
    }
  }
}

TEST_CASE("PE patient without a mask is rejected for labeled loading") {
  Cohort c = make_cohort();
  data::ManifestEntry entry = *c.manifest.find("ph000");  // a PE patient
  entry.mask_path.clear();
  CHECK_THROWS(pipeline::load_labeled_study(entry, c.dir));

  // Non-PE patients load fine without masks.
  data::ManifestEntry np = *c.manifest.find("ph003");
  np.mask_path.clear();
  auto study = pipeline::load_labeled_study(np, c.dir);
  for (auto l : study.slice_labels) CHECK(l == data::SliceLabel::NON_PE);
}

TEST_CASE("evaluate_split emits the four rows and a segmentation section") {
  Cohort c = make_cohort();
  prep::PreprocConfig prep_cfg;
  prep_cfg.crop_size = 64;

  auto drn = nn::build_classifier(nn::classifier_preset(nn::Arch::DRN, nn::Scale::DESK));
  auto mix = nn::build_classifier(nn::classifier_preset(nn::Arch::MIXNET, nn::Scale::DESK));
  auto fp = nn::build_classifier(nn::classifier_preset(nn::Arch::DRN, nn::Scale::DESK));
  auto seg = nn::build_segmenter(nn::segmenter_preset(nn::Scale::DESK));

  auto studies = pipeline::load_split_studies(c.manifest, c.split, data::Split::TRAIN, c.dir);
  pipeline::EvalModels em{drn.get(), mix.get(), fp.get(), seg.get()};
  auto report = pipeline::evaluate_split(studies, prep_cfg, em, 0.5, 0.5);
  report.split_name = "TRAIN";

  REQUIRE(report.rows.size() == 4);
  CHECK(report.rows[0].model == "drn");
  CHECK(report.rows[1].model == "mixnet");
  CHECK(report.rows[2].model == "ensemble");
  CHECK(report.rows[3].model == "ensemble_fp_reduction");
  CHECK(report.n_masked_images > 0);
  CHECK(report.mean_iou.has_value());

  auto j = report.to_json();
  CHECK(j.at("per_image").at("rows").size() == 4);
  CHECK(j.at("per_patient").contains("confusion"));
  CHECK(j.at("segmentation").at("n_masked_images").get<int>() == report.n_masked_images);

  // The ensemble score is the member mean, so its AUC uses mean scores; all
  // rows exist even when AUC is defined.
  for (const auto& row : report.rows) {
    CHECK(row.precision >= 0.0);
    CHECK(row.precision <= 1.0);
  }
}

TEST_CASE("run config hash is stable across key reordering") {
  fs::path dir = fs::temp_directory_path() / "pecad_cfg";
  fs::create_directories(dir);
  {
    std::ofstream a(dir / "a.json");
    a << R"({"seed": 9, "output_dir": "x", "preprocess": {"crop_size": 64, "hu_limit": 600}})";
  }
  {
    std::ofstream b(dir / "b.json");
    b << R"({"preprocess": {"hu_limit": 600, "crop_size": 64}, "output_dir": "x", "seed": 9})";
  }
  auto ca = config::RunConfig::load(dir / "a.json");
  auto cb = config::RunConfig::load(dir / "b.json");
  CHECK(ca.config_hash() == cb.config_hash());

  config::RunConfig cc = ca;
  cc.seed = 10;
  CHECK(cc.config_hash() != ca.config_hash());
}

TEST_CASE("derived model configs track the crop size and seed") {
  config::RunConfig cfg;
  cfg.preprocess.crop_size = 64;
  cfg.seed = 3;
  CHECK(cfg.drn_config().input.height == 64);
  CHECK(cfg.segmenter_config().input.width == 64);
  CHECK(cfg.drn_config().init_seed != cfg.mixnet_config().init_seed);
  CHECK(cfg.drn_config().init_seed != cfg.fpnet_config().init_seed);
  CHECK(cfg.classifier_training().loss == train::LossKind::FOCAL_BCE);
  CHECK(cfg.segmenter_training().loss == train::LossKind::BCE_PLUS_DICE);
  CHECK(cfg.segmenter_training().augment_flips);
  CHECK_FALSE(cfg.classifier_training().augment_flips);
}
