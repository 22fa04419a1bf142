// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Criteria 6-8 train desk-scale models end to end, so a full run takes
// several minutes on CPU.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "oracle_helpers.hpp"
#include "pecad/config.hpp"
#include "pecad/dataset.hpp"
#include "pecad/metrics.hpp"
#include "pecad/nn/nets.hpp"
#include "pecad/phantom.hpp"
#include "pecad/pipeline.hpp"
#include "pecad/preprocess.hpp"
#include "pecad/training.hpp"
#include "pecad/triage.hpp"
#include <nlohmann/json.hpp>

using namespace pecad;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  }
};

nn::Tensor random_images(int n, int c, int h, int w, uint64_t seed) {
  nn::Tensor t(n, c, h, w);
  Rng rng(seed);
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion_metric_oracles() {
  Outcome out;

  std::vector<int> labels{1, 1, 0, 0, 0};
  std::vector<int> preds{1, 0, 1, 0, 0};
  auto [c, w] = metrics::confusion_from_predictions(labels, preds);
  out.require(std::abs(metrics::weighted_precision(c, w) - 0.6) == 0.0,
              "worked precision example != 0.6");
  out.require(std::abs(metrics::weighted_recall(c, w) - 0.6) == 0.0,
              "worked recall example != 0.6");

  Rng rng(1001);
  double max_dp = 0.0, max_dr = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(2, 80);
    std::vector<int> l(n), p(n);
    for (int i = 0; i < n; ++i) {
      l[i] = rng.bernoulli(0.3) ? 1 : 0;
      p[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    auto [cc, ww] = metrics::confusion_from_predictions(l, p);
    auto brute = oracle::brute_weighted_pr(l, p);
    max_dp = std::max(max_dp, std::abs(metrics::weighted_precision(cc, ww) - brute.precision));
    max_dr = std::max(max_dr, std::abs(metrics::weighted_recall(cc, ww) - brute.recall));
  }
  out.detail << "max |precision diff| " << max_dp << ", max |recall diff| " << max_dr
             << " over 1000 vectors";
  out.require(max_dp < 1e-12, "precision oracle mismatch");
  out.require(max_dr < 1e-12, "recall oracle mismatch");
  return out;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_auc_oracle() {
  Outcome out;
  Rng rng(2002);
  double max_diff = 0.0;
  int cases = 0;
  while (cases < 200) {
    const int n = rng.uniform_int(4, 60);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool h0 = false, h1 = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = rng.bernoulli(0.5) ? rng.uniform_int(0, 9) / 10.0 : rng.uniform();
      labels[i] = rng.bernoulli(0.4) ? 1 : 0;
      (labels[i] ? h1 : h0) = true;
    }
    if (!h0 || !h1) continue;
    ++cases;
    max_diff = std::max(max_diff, std::abs(metrics::roc_auc(scores, labels) -
                                           oracle::pairwise_auc(scores, labels)));
  }
  out.detail << "max |auc - pairwise| " << max_diff << " over 200 cases";
  out.require(max_diff < 1e-9, "AUC oracle mismatch");

  double max_inv = 0.0;
  int inv_cases = 0;
  while (inv_cases < 50) {
    const int n = rng.uniform_int(6, 40);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool h0 = false, h1 = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = rng.uniform();
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
      (labels[i] ? h1 : h0) = true;
    }
    if (!h0 || !h1) continue;
    ++inv_cases;
    std::vector<double> transformed(n);
    for (int i = 0; i < n; ++i) transformed[i] = std::tanh(4.0 * scores[i]) * 3.0 + 10.0;
    max_inv = std::max(max_inv, std::abs(metrics::roc_auc(scores, labels) -
                                         metrics::roc_auc(transformed, labels)));
  }
  out.require(max_inv < 1e-12, "monotone-transform invariance violated");
  return out;
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion_patient_metrics() {
  Outcome out;
  metrics::PatientConfusion pc{9, 1, 9, 2};  // tp fp tn fn
  auto m = metrics::patient_metrics(pc);
  out.detail << "sens " << m.sensitivity << ", spec " << m.specificity << ", npv " << m.npv;
  out.require(std::abs(m.sensitivity - 0.818) <= 0.001, "sensitivity not 0.818 +- 0.001");
  out.require(std::abs(m.specificity - 0.900) <= 0.001, "specificity not 0.900 +- 0.001");
  out.require(std::abs(m.ppv - 0.90) <= 0.001, "ppv not 0.90");
  // Standard NPV definition forced by the counts: tn/(tn+fn) = 9/11.
  out.require(std::abs(m.npv - 9.0 / 11.0) < 1e-12, "npv != 9/11 under standard definition");
  return out;
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion_gradient_checks() {
  Outcome out;
  const double tol = 1e-4;
  auto check = [&](const std::string& name, double err) {
    out.detail << name << " " << err << "; ";
    out.require(err < tol, name + " gradient error " + std::to_string(err));
  };

  {
    nn::DilatedResidualBlock block(3, 3, 2);
    Rng rng(4001);
    block.init_he(rng);
    check("drb", oracle::check_gradients(block, random_images(1, 3, 4, 4, 4002), true, 4003, 8, 24)
                     .max_rel_err);
  }
  {
    nn::MixedDepthwiseConv mdw(10, {3, 5, 7}, 1);
    Rng rng(4010);
    mdw.init_he(rng);
    check("mdw", oracle::check_gradients(mdw, random_images(1, 10, 8, 8, 4011), true, 4012, 8, 24)
                     .max_rel_err);
  }
  {
    nn::SELayer se(8, 4);
    Rng rng(4020);
    se.init_he(rng);
    check("se", oracle::check_gradients(se, random_images(2, 8, 5, 5, 4021), true, 4022, 8, 24)
                    .max_rel_err);
  }
  {
    // JPU across both inputs.
    nn::Jpu jpu(4, 4, {1, 2, 4}, 5);
    Rng rng(4030);
    jpu.init_he(rng);
    nn::Tensor d3 = random_images(1, 4, 6, 6, 4031);
    nn::Tensor d4 = random_images(1, 4, 3, 3, 4032);
    nn::Tensor fwd = jpu.forward(d3, d4, true);
    auto coeffs = oracle::projection_coeffs(fwd.size(), 4033);
    nn::Tensor gout(fwd.n(), fwd.c(), fwd.h(), fwd.w());
    for (size_t i = 0; i < gout.size(); ++i) gout[i] = coeffs[i];
    std::vector<nn::Param*> ps;
    jpu.collect_params(ps);
    for (auto* p : ps) p->grad.fill(0.0);
    auto [g3, g4] = jpu.backward(gout);
    double max_err = 0.0;
    const double h = 1e-4;
    auto eval = [&]() { return oracle::project(jpu.forward(d3, d4, true), coeffs); };
    auto probe = [&](double analytic, double* slot) {
      double orig = *slot;
      *slot = orig + h;
      double lp = eval();
      *slot = orig - h;
      double lm = eval();
      *slot = orig;
      max_err = std::max(max_err, oracle::rel_err(analytic, (lp - lm) / (2 * h)));
    };
    Rng pick(4034);
    for (auto* p : ps) {
      for (int s = 0; s < 6; ++s) {
        int i = pick.uniform_int(0, static_cast<int>(p->value.size()) - 1);
        probe(p->grad[i], &p->value[i]);
      }
    }
    for (int s = 0; s < 16; ++s) {
      int i = pick.uniform_int(0, static_cast<int>(d3.size()) - 1);
      probe(g3[i], &d3[i]);
      int j = pick.uniform_int(0, static_cast<int>(d4.size()) - 1);
      probe(g4[j], &d4[j]);
    }
    check("jpu", max_err);
  }
  {
    nn::Sequential anet;
    anet.add(std::make_unique<nn::ConvSet>(1, 6, 3, 1, 1, "a0"));
    anet.add(std::make_unique<nn::ConvSet>(6, 6, 3, 1, 1, "a1"));
    anet.add(std::make_unique<nn::ConvSet>(6, 6, 3, 1, 1, "a2"));
    anet.add(std::make_unique<nn::Conv2d>(6, 1, 3, 1, 1, 1, true, "a3"));
    anet.add(std::make_unique<nn::SigmoidLayer>());
    Rng rng(4040);
    static_cast<nn::ConvSet&>(anet.at(0)).init_he(rng);
    static_cast<nn::ConvSet&>(anet.at(1)).init_he(rng);
    static_cast<nn::ConvSet&>(anet.at(2)).init_he(rng);
    static_cast<nn::Conv2d&>(anet.at(3)).init_he(rng);
    check("anet", oracle::check_gradients(anet, random_images(1, 1, 8, 8, 4041), true, 4042, 8, 24)
                      .max_rel_err);
  }
  {
    auto cfg = nn::classifier_preset(nn::Arch::DRN, nn::Scale::DESK);
    cfg.input = {1, 32, 32};
    auto model = nn::build_classifier(cfg);
    check("desk_drn",
          oracle::check_gradients(*model, random_images(2, 1, 32, 32, 170), true, 171, 6, 16, 1e-5)
              .max_rel_err);
  }
  {
    auto cfg = nn::classifier_preset(nn::Arch::MIXNET, nn::Scale::DESK);
    cfg.input = {1, 32, 32};
    auto model = nn::build_classifier(cfg);
    check("desk_mixnet",
          oracle::check_gradients(*model, random_images(2, 1, 32, 32, 172), true, 173, 6, 16, 1e-5)
              .max_rel_err);
  }
  {
    // Inference mode at 16x16 (train-mode BN there normalizes over two
    // values, a kink-dense degenerate point); train mode at 32x32.
    auto cfg = nn::segmenter_preset(nn::Scale::DESK);
    cfg.input = {1, 16, 16};
    auto model = nn::build_segmenter(cfg);
    check("desk_segmenter_16",
          oracle::check_gradients(*model, random_images(2, 1, 16, 16, 180), false, 181, 6, 16, 1e-5)
              .max_rel_err);
    auto cfg32 = nn::segmenter_preset(nn::Scale::DESK);
    cfg32.input = {1, 32, 32};
    auto model32 = nn::build_segmenter(cfg32);
    check("desk_segmenter_32t",
          oracle::check_gradients(*model32, random_images(2, 1, 32, 32, 184), true, 185, 5, 12, 1e-5)
              .max_rel_err);
  }

  // Losses against central differences.
  {
    nn::Tensor pred(1, 1, 6, 6), target(1, 1, 6, 6);
    Rng rng(4080);
    for (size_t i = 0; i < pred.size(); ++i) {
      pred[i] = rng.uniform(0.1, 0.9);
      target[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    }
    train::TrainConfig tc;
    nn::Tensor g;
    train::focal_bce(pred, target, 2.0, 0.25, &g);
    check("loss_focal",
          oracle::check_loss_gradient(
              [&](const nn::Tensor& p) { return train::focal_bce(p, target, 2.0, 0.25); }, pred, g,
              36, 4081)
              .max_rel_err);
    train::bce(pred, target, &g);
    check("loss_bce", oracle::check_loss_gradient(
                          [&](const nn::Tensor& p) { return train::bce(p, target); }, pred, g, 36,
                          4082)
                          .max_rel_err);
    train::dice_loss(pred, target, 1.0, &g);
    check("loss_dice", oracle::check_loss_gradient(
                           [&](const nn::Tensor& p) { return train::dice_loss(p, target, 1.0); },
                           pred, g, 36, 4083)
                           .max_rel_err);
    train::seg_loss(pred, target, tc, &g);
    check("loss_seg", oracle::check_loss_gradient(
                          [&](const nn::Tensor& p) { return train::seg_loss(p, target, tc); },
                          pred, g, 36, 4084)
                          .max_rel_err);
  }
  return out;
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion_architecture_invariants() {
  Outcome out;

  // Shape contracts for every preset, paper scale included.
  for (nn::Arch arch : {nn::Arch::DRN, nn::Arch::MIXNET}) {
    for (nn::Scale scale : {nn::Scale::DESK, nn::Scale::PAPER}) {
      auto cfg = nn::classifier_preset(arch, scale);
      auto model = nn::build_classifier(cfg);
      nn::Tensor x = random_images(1, cfg.input.channels, cfg.input.height, cfg.input.width, 5001);
      nn::Tensor y = model->forward(x, false);
      bool shape_ok = y.n() == 1 && y.c() == 1 && y.h() == 1 && y.w() == 1;
      bool range_ok = y[0] > 0.0 && y[0] < 1.0;
      out.require(shape_ok && range_ok, std::string(nn::arch_name(arch)) + "/" +
                                            nn::scale_name(scale) + " classifier contract");
    }
  }
  for (nn::Scale scale : {nn::Scale::DESK, nn::Scale::PAPER}) {
    auto cfg = nn::segmenter_preset(scale);
    auto model = nn::build_segmenter(cfg);
    nn::Tensor x = random_images(1, cfg.input.channels, cfg.input.height, cfg.input.width, 5002);
    nn::Tensor y = model->forward(x, false);
    bool ok = y.n() == 1 && y.c() == 1 && y.h() == cfg.input.height && y.w() == cfg.input.width;
    for (size_t i = 0; ok && i < y.size(); ++i) ok = y[i] > 0.0 && y[i] < 1.0;
    out.require(ok, std::string("segmenter/") + nn::scale_name(scale) + " contract");
  }

  // Residual identity, exactly.
  {
    nn::DilatedResidualBlock block(5, 5, 2);
    std::vector<nn::Param*> ps;
    block.collect_params(ps);
    for (auto* p : ps) p->value.fill(0.0);
    nn::Tensor x = random_images(1, 5, 8, 8, 5003);
    nn::Tensor y = block.forward(x, false);
    bool exact = true;
    for (size_t i = 0; i < x.size(); ++i) exact = exact && y[i] == x[i];
    out.require(exact, "residual identity not exact");
  }

  // Identity kernels through the mixed depthwise conv, exactly.
  {
    nn::MixedDepthwiseConv mdw(6, {3, 5});
    for (size_t g = 0; g < 2; ++g) {
      int k = g == 0 ? 3 : 5;
      for (int ch = 0; ch < 3; ++ch) mdw.group_conv(g).weight.value.at(ch, 0, k / 2, k / 2) = 1.0;
    }
    nn::Tensor x = random_images(1, 6, 7, 7, 5004);
    nn::Tensor y = mdw.forward(x, false);
    bool exact = true;
    for (size_t i = 0; i < x.size(); ++i) exact = exact && y[i] == x[i];
    out.require(exact, "identity kernels not exact");
  }

  // SE and attention identity gating, exactly.
  {
    nn::SELayer se(8, 4);
    Rng rng(5005);
    se.init_he(rng);
    se.fc2().weight.value.fill(0.0);
    se.fc2().bias.value.fill(1000.0);
    nn::Tensor x = random_images(1, 8, 6, 6, 5006);
    nn::Tensor y = se.forward(x, false);
    bool exact = true;
    for (size_t i = 0; i < x.size(); ++i) exact = exact && y[i] == x[i];
    out.require(exact, "saturated SE gate not exact identity");

    nn::Tensor ones(1, 1, 6, 6);
    ones.fill(1.0);
    nn::Tensor gated = nn::attention_combine(x, ones);
    exact = true;
    for (size_t i = 0; i < x.size(); ++i) exact = exact && gated[i] == x[i];
    out.require(exact, "unit attention not exact identity");
  }

  // Focal reduction to 0.5*BCE at gamma=0, alpha=0.5.
  {
    Rng rng(5007);
    double max_diff = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      nn::Tensor pred(1, 1, 4, 4), target(1, 1, 4, 4);
      for (size_t i = 0; i < pred.size(); ++i) {
        pred[i] = rng.uniform(0.02, 0.98);
        target[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
      max_diff = std::max(max_diff, std::abs(train::focal_bce(pred, target, 0.0, 0.5) -
                                             0.5 * train::bce(pred, target)));
    }
    out.detail << "max |focal - 0.5*bce| " << max_diff;
    out.require(max_diff < 1e-12, "focal reduction exceeds 1e-12");
  }
  return out;
}

// ---------------------------------------------------------------- criterion 6

std::vector<data::SliceRecord> phantom_classifier_slices(int n_pe, int n_non_pe,
                                                         uint64_t seed_base) {
  // Collect PE-labeled slices from PE studies and arbitrary slices from
  // non-PE studies until the requested counts are reached.
  prep::PreprocConfig prep_cfg;
  prep_cfg.crop_size = 64;
  std::vector<data::SliceRecord> pe_recs, non_recs;
  uint64_t seed = seed_base;
  while (static_cast<int>(pe_recs.size()) < n_pe ||
         static_cast<int>(non_recs.size()) < n_non_pe) {
    phantom::PhantomSpec spec;
    spec.seed = seed++;
    spec.pe = static_cast<int>(pe_recs.size()) < n_pe;
    auto study = phantom::generate_study(spec);
    study.volume.patient_id = "acc" + std::to_string(seed);
    auto recs = prep::preprocess_study(study.as_labeled(), prep_cfg);
    for (auto& r : recs) {
      if (r.label == data::SliceLabel::PE && static_cast<int>(pe_recs.size()) < n_pe) {
        r.mask.reset();
        pe_recs.push_back(std::move(r));
      } else if (r.label == data::SliceLabel::NON_PE &&
                 static_cast<int>(non_recs.size()) < n_non_pe && !spec.pe) {
        r.mask.reset();
        non_recs.push_back(std::move(r));
      }
    }
  }
  std::vector<data::SliceRecord> all;
  for (auto& r : pe_recs) all.push_back(std::move(r));
  for (auto& r : non_recs) all.push_back(std::move(r));
  return all;
}

Outcome criterion_overfit_sanity() {
  Outcome out;

  auto slices = phantom_classifier_slices(8, 8, 6001);

  train::TrainConfig tc;
  tc.max_epochs = 200;
  tc.batch_size = 8;
  tc.seed = 61;
  tc.base_lr = 2e-3;
  tc.early_stop_patience = 0;

  {
    auto model = nn::build_classifier(nn::classifier_preset(nn::Arch::DRN, nn::Scale::DESK));
    train::train_model(*model, slices, {}, tc);
    double acc = train::classifier_accuracy(*model, slices);
    out.detail << "drn acc " << acc;
    out.require(acc == 1.0, "DESK DRN below 100% training accuracy");
  }
  {
    auto model = nn::build_classifier(nn::classifier_preset(nn::Arch::MIXNET, nn::Scale::DESK));
    train::train_model(*model, slices, {}, tc);
    double acc = train::classifier_accuracy(*model, slices);
    out.detail << ", mixnet acc " << acc;
    out.require(acc == 1.0, "DESK MixNet below 100% training accuracy");
  }

  // Segmenter on 8 masked phantom slices.
  {
    prep::PreprocConfig prep_cfg;
    prep_cfg.crop_size = 64;
    std::vector<data::SliceRecord> seg_recs;
    uint64_t seed = 6101;
    while (static_cast<int>(seg_recs.size()) < 8) {
      phantom::PhantomSpec spec;
      spec.seed = seed++;
      spec.pe = true;
      auto study = phantom::generate_study(spec);
      study.volume.patient_id = "seg" + std::to_string(seed);
      for (auto& r : prep::preprocess_study(study.as_labeled(), prep_cfg)) {
        if (r.label == data::SliceLabel::PE && static_cast<int>(seg_recs.size()) < 8) {
          seg_recs.push_back(std::move(r));
        }
      }
    }
    train::TrainConfig sc;
    sc.loss = train::LossKind::BCE_PLUS_DICE;
    sc.max_epochs = 300;
    sc.batch_size = 4;
    sc.seed = 62;
    sc.base_lr = 2e-3;
    sc.early_stop_patience = 0;
    sc.augment_flips = false;  // pure overfit target
    auto model = nn::build_segmenter(nn::segmenter_preset(nn::Scale::DESK));
    train::train_model(*model, seg_recs, {}, sc);
    double miou = train::segmenter_mean_iou(*model, seg_recs);
    out.detail << ", segmenter mIoU " << miou;
    out.require(miou >= 0.9, "DESK segmenter training mean IoU below 0.9");
  }
  return out;
}

// ---------------------------------------------------------------- criterion 7/8

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(PECAD_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::string text;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) text += buf;
  int status = pclose(pipe);
  if (output) *output = text;
  return WEXITSTATUS(status);
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  json j;
  in >> j;
  return j;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path write_config(const fs::path& dir, const json& overrides) {
  // Seed 10 deals a 2 PE / 2 non-PE held-out test split; focal alpha 0.5
  // keeps the balanced (PE-upsampled) training set calibrated around the
  // 0.5 decision threshold.
  json cfg{{"seed", 10},
           {"output_dir", (dir / "out").string()},
           {"dataset", {{"split_ratios", {0.5, 1.0 / 6.0, 1.0 / 3.0}}}},
           {"preprocess", {{"crop_size", 64}}},
           {"phantom", {{"n_slices", 10}}},
           {"training",
            {{"max_epochs", 80}, {"batch_size", 8}, {"base_lr", 2e-3},
             {"focal_alpha", 0.5}, {"early_stop_patience", 0}}},
           {"segmenter_max_epochs", 240}};
  for (auto& [k, v] : overrides.items()) cfg[k] = v;
  fs::create_directories(dir);
  fs::path p = dir / "config.json";
  std::ofstream out(p, std::ios::trunc);
  out << cfg.dump(2) << "\n";
  return p;
}

Outcome criterion_end_to_end() {
  Outcome out;
  fs::path work = fs::temp_directory_path() / "pecad_acceptance_e2e";
  fs::remove_all(work);
  fs::path cfg_path = write_config(work, json::object());
  const std::string base = "--config " + cfg_path.string();

  std::string log;
  out.require(run_cli(base + " synth --pe 6 --non-pe 6", &log) == 0, "synth failed: " + log);
  out.require(run_cli(base + " split", &log) == 0, "split failed: " + log);
  for (const char* target : {"drn", "mixnet", "fpnet", "segmenter"}) {
    out.require(run_cli(base + " train " + target, &log) == 0,
                std::string("train ") + target + " failed: " + log);
    if (!out.ok) return out;
  }
  out.require(run_cli(base + " eval --split TEST", &log) == 0, "eval failed: " + log);
  if (!out.ok) return out;

  // Locate the run directory from the config the CLI derives.
  config::RunConfig rc = config::RunConfig::load(cfg_path);
  fs::path run_dir = rc.run_dir();
  json eval_doc = read_json_file(run_dir / "eval_TEST.json");
  auto rows = eval_doc.at("per_image").at("rows");
  out.require(rows.size() == 4, "eval must emit the four per-image rows");
  std::vector<std::string> expect{"drn", "mixnet", "ensemble", "ensemble_fp_reduction"};
  for (size_t i = 0; i < expect.size(); ++i) {
    out.require(rows[i].at("model").get<std::string>() == expect[i],
                "row " + std::to_string(i) + " name mismatch");
  }

  // Triage each held-out test patient through the CLI; exit code 2 = PE alert.
  auto manifest = data::load_manifest(run_dir / "data" / "manifest.json");
  auto split = data::load_split(run_dir / "split.json");
  auto test_ids = split.patients_in(data::Split::TEST);
  out.require(test_ids.size() == 4, "expected a held-out 4-patient test split");

  long tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& id : test_ids) {
    const auto* entry = manifest.find(id);
    out.require(entry != nullptr, "test patient missing from manifest");
    if (!entry) continue;
    int rc_code =
        run_cli(base + " triage " + (run_dir / "data" / entry->volume_path).string(), &log);
    out.require(rc_code == 0 || rc_code == 2, "triage exit code " + std::to_string(rc_code));
    const bool flagged = rc_code == 2;
    if (entry->pe_label && flagged) ++tp;
    if (entry->pe_label && !flagged) ++fn;
    if (!entry->pe_label && flagged) ++fp;
    if (!entry->pe_label && !flagged) ++tn;

    json triage_doc = read_json_file(run_dir / "triage" / id / (id + ".triage.json"));
    size_t overlays = triage_doc.at("overlay_paths").size();
    size_t flagged_slices = triage_doc.at("flagged").size();
    out.require(overlays == flagged_slices, "overlay count != flagged count");
    if (flagged) out.require(overlays >= 1, "PE triage produced no overlay");
  }
  auto pm = metrics::patient_metrics({tp, fp, tn, fn});
  out.detail << "triage sens " << pm.sensitivity << ", spec " << pm.specificity << " (tp " << tp
             << " fp " << fp << " tn " << tn << " fn " << fn << ")";
  out.require(pm.sensitivity >= 0.8, "triage sensitivity below 0.8");
  out.require(pm.specificity >= 0.8, "triage specificity below 0.8");

  // Exit code 1 on a corrupt volume.
  fs::path corrupt = work / "corrupt.ctvol.json";
  std::ofstream bad(corrupt);
  bad << "{ not json";
  bad.close();
  out.require(run_cli(base + " triage " + corrupt.string(), &log) == 1,
              "corrupt volume must exit 1");
  return out;
}

Outcome criterion_determinism() {
  Outcome out;
  fs::path work = fs::temp_directory_path() / "pecad_acceptance_det";
  fs::remove_all(work);
  fs::path cfg_path = write_config(
      work, json{{"dataset", {{"split_ratios", {0.5, 0.25, 0.25}}}},
                 {"training",
                  {{"max_epochs", 4}, {"batch_size", 4}, {"base_lr", 2e-3},
                   {"early_stop_patience", 0}}},
                 {"segmenter_max_epochs", 4}});
  const std::string base = "--config " + cfg_path.string();
  config::RunConfig rc = config::RunConfig::load(cfg_path);
  fs::path run_dir = rc.run_dir();

  auto run_all = [&]() -> bool {
    std::string log;
    if (run_cli(base + " synth --pe 2 --non-pe 2", &log) != 0) return false;
    if (run_cli(base + " split", &log) != 0) return false;
    for (const char* t : {"drn", "mixnet", "fpnet", "segmenter"}) {
      if (run_cli(base + std::string(" train ") + t, &log) != 0) return false;
    }
    return run_cli(base + " eval --split TEST", &log) == 0;
  };

  out.require(run_all(), "first pipeline run failed");
  std::string manifest_a = file_bytes(run_dir / "data" / "manifest.json");
  std::string split_a = file_bytes(run_dir / "split.json");
  std::string eval_a = file_bytes(run_dir / "eval_TEST.json");
  std::map<std::string, std::string> digests_a;
  for (const char* t : {"drn", "mixnet", "fpnet", "segmenter"}) {
    digests_a[t] = read_json_file(run_dir / "ckpt" / (std::string(t) + ".ckpt.json"))
                       .at("weights_digest")
                       .get<std::string>();
  }

  fs::remove_all(run_dir);
  out.require(run_all(), "second pipeline run failed");
  out.require(file_bytes(run_dir / "data" / "manifest.json") == manifest_a,
              "manifest bytes differ across reruns");
  out.require(file_bytes(run_dir / "split.json") == split_a, "split bytes differ");
  out.require(file_bytes(run_dir / "eval_TEST.json") == eval_a, "eval report bytes differ");
  for (const char* t : {"drn", "mixnet", "fpnet", "segmenter"}) {
    std::string d = read_json_file(run_dir / "ckpt" / (std::string(t) + ".ckpt.json"))
                        .at("weights_digest")
                        .get<std::string>();
    out.require(d == digests_a[t], std::string("checkpoint digest differs for ") + t);
  }
  out.detail << "manifest/split/eval bytes and 4 checkpoint digests identical";
  return out;
}

// ---------------------------------------------------------------- criterion 9

Outcome criterion_rule_equivalence() {
  Outcome out;

  // cascade_label against an independent restatement, on the 0.1 lattice.
  long checked = 0;
  for (int ei = 0; ei <= 10; ++ei) {
    for (int fi = 0; fi <= 10; ++fi) {
      for (int ti = 0; ti <= 10; ++ti) {
        double e = ei / 10.0, f = fi / 10.0, thr = ti / 10.0;
        bool brute_with_fp = (e >= thr) && (f >= thr);
        bool got_with_fp = triage::cascade_label(e, f, thr) == data::SliceLabel::PE;
        out.require(got_with_fp == brute_with_fp, "cascade mismatch with fp at lattice point");
        bool brute_no_fp = e >= thr;
        bool got_no_fp = triage::cascade_label(e, std::nullopt, thr) == data::SliceLabel::PE;
        out.require(got_no_fp == brute_no_fp, "cascade mismatch without fp at lattice point");
        ++checked;
        if (!out.ok) return out;
      }
    }
  }

  // patient_verdict against brute force for every label vector up to length 6.
  long vectors = 0;
  for (int len = 1; len <= 6; ++len) {
    for (int bits = 0; bits < (1 << len); ++bits) {
      std::vector<data::SliceLabel> labels(len);
      bool any = false;
      std::vector<int> flagged;
      for (int i = 0; i < len; ++i) {
        bool pe = (bits >> i) & 1;
        labels[i] = pe ? data::SliceLabel::PE : data::SliceLabel::NON_PE;
        if (pe) {
          any = true;
          flagged.push_back(i);
        }
      }
      auto v = triage::patient_verdict("p", labels);
      out.require((v.verdict == data::SliceLabel::PE) == any, "verdict mismatch");
      out.require(v.flagged_slices == flagged, "flagged set mismatch");
      out.require(v.n_pe_images == static_cast<int>(flagged.size()), "n_pe_images mismatch");
      ++vectors;
      if (!out.ok) return out;
    }
  }
  out.detail << checked << " lattice points, " << vectors << " label vectors";
  return out;
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> fn;
};

}  // namespace

int main() {
  std::vector<Criterion> criteria{
      {1, "metric oracle suite (Eqs. 1-2 vs brute force)", 5.0, criterion_metric_oracles},
      {2, "AUC pairwise oracle and invariances", 10.0, criterion_auc_oracle},
      {3, "per-patient metric arithmetic", 5.0, criterion_patient_metrics},
      {4, "float64 gradient checks, all blocks and losses", 120.0, criterion_gradient_checks},
      {5, "architecture invariants and exact identities", 120.0,
       criterion_architecture_invariants},
      {6, "overfit sanity (DESK DRN/MixNet/segmenter)", 900.0, criterion_overfit_sanity},
      {7, "end-to-end phantom cohort via the CLI", 1200.0, criterion_end_to_end},
      {8, "pipeline determinism across reruns", 600.0, criterion_determinism},
      {9, "cascade/verdict brute-force equivalence", 5.0, criterion_rule_equivalence},
  };

  int failures = 0;
  for (auto& c : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.fn();
    } catch (const std::exception& e) {
      out.ok = false;
      out.detail << " [exception: " << e.what() << "]";
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.limit_seconds) {
      out.ok = false;
      out.detail << " [runtime " << secs << "s exceeds " << c.limit_seconds << "s]";
    }
    std::cout << (out.ok ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.name << " ("
              << secs << "s)";
    std::string d = out.detail.str();
    if (!d.empty()) std::cout << " -- " << d;
    std::cout << "\n" << std::flush;
    if (!out.ok) ++failures;
  }
  if (failures) {
    std::cout << failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all acceptance criteria passed\n";
  return 0;
}
