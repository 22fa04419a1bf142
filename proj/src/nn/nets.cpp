#include "pecad/nn/nets.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "pecad/hashutil.hpp"

namespace pecad::nn {

using nlohmann::json;
namespace fs = std::filesystem;

const char* arch_name(Arch a) { return a == Arch::DRN ? "drn" : "mixnet"; }
const char* scale_name(Scale s) { return s == Scale::PAPER ? "paper" : "desk"; }

static Arch arch_from_name(const std::string& s) {
  if (s == "drn") return Arch::DRN;
  if (s == "mixnet") return Arch::MIXNET;
  throw std::invalid_argument("unknown arch: " + s);
}

static Scale scale_from_name(const std::string& s) {
  if (s == "paper") return Scale::PAPER;
  if (s == "desk") return Scale::DESK;
  throw std::invalid_argument("unknown scale: " + s);
}

// ---------------- configs ----------------

void ClassifierConfig::validate() const {
  if (input.channels < 1 || input.height < 8 || input.width < 8) {
    throw std::invalid_argument("ClassifierConfig: bad input spec");
  }
  if (width_multiplier <= 0) throw std::invalid_argument("ClassifierConfig: width multiplier");
  for (int d : dilation_schedule) {
    if (d < 1) throw std::invalid_argument("ClassifierConfig: dilation must be >= 1");
  }
  for (int k : kernel_size_groups) {
    if (k % 2 == 0) throw std::invalid_argument("ClassifierConfig: even kernel size");
  }
  if (arch == Arch::DRN && stage_widths.size() != dilation_schedule.size()) {
    throw std::invalid_argument("ClassifierConfig: stage/dilation count mismatch");
  }
  if (arch == Arch::MIXNET &&
      (stage_widths.size() != expand_ratios.size() || stage_widths.size() != stage_strides.size())) {
    throw std::invalid_argument("ClassifierConfig: MixNet stage table mismatch");
  }
}

json ClassifierConfig::to_json() const {
  return json{{"arch", arch_name(arch)},
              {"scale", scale_name(scale)},
              {"input", {input.channels, input.height, input.width}},
              {"width_multiplier", width_multiplier},
              {"dilation_schedule", dilation_schedule},
              {"stem_width", stem_width},
              {"stem_kernel", stem_kernel},
              {"stage_widths", stage_widths},
              {"blocks_per_stage", blocks_per_stage},
              {"kernel_size_groups", kernel_size_groups},
              {"expand_ratios", expand_ratios},
              {"stage_strides", stage_strides},
              {"init_seed", init_seed}};
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
  ClassifierConfig c;
  c.arch = arch_from_name(j.at("arch").get<std::string>());
  c.scale = scale_from_name(j.at("scale").get<std::string>());
  auto in = j.at("input");
  c.input = {in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
  c.width_multiplier = j.at("width_multiplier").get<double>();
  c.dilation_schedule = j.at("dilation_schedule").get<std::vector<int>>();
  c.stem_width = j.at("stem_width").get<int>();
  c.stem_kernel = j.at("stem_kernel").get<int>();
  c.stage_widths = j.at("stage_widths").get<std::vector<int>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  c.kernel_size_groups = j.at("kernel_size_groups").get<std::vector<int>>();
  c.expand_ratios = j.at("expand_ratios").get<std::vector<int>>();
  c.stage_strides = j.at("stage_strides").get<std::vector<int>>();
  c.init_seed = j.at("init_seed").get<uint64_t>();
  return c;
}

void SegmenterConfig::validate() const {
  if (encoder_channels.size() != 4) {
    throw std::invalid_argument("SegmenterConfig: exactly 4 downsampling stages required");
  }
  if (decoder_channels.size() != 3) {
    throw std::invalid_argument("SegmenterConfig: exactly 3 upsampling stages required");
  }
  if (jpu_dilations.empty() || jpu_branch_ch < 1) {
    throw std::invalid_argument("SegmenterConfig: bad JPU settings");
  }
  if (attention_layers < 2) throw std::invalid_argument("SegmenterConfig: attention_layers < 2");
  for (int c : encoder_channels) {
    if (c < se_reduction) {
      throw std::invalid_argument("SegmenterConfig: se_reduction exceeds an encoder width");
    }
  }
}

json SegmenterConfig::to_json() const {
  return json{{"scale", scale_name(scale)},
              {"input", {input.channels, input.height, input.width}},
              {"encoder_channels", encoder_channels},
              {"jpu_dilations", jpu_dilations},
              {"jpu_branch_ch", jpu_branch_ch},
              {"decoder_channels", decoder_channels},
              {"attention_layers", attention_layers},
              {"attention_width", attention_width},
              {"se_reduction", se_reduction},
              {"use_attention", use_attention},
              {"init_seed", init_seed}};
}

SegmenterConfig SegmenterConfig::from_json(const json& j) {
  SegmenterConfig c;
  c.scale = scale_from_name(j.at("scale").get<std::string>());
  auto in = j.at("input");
  c.input = {in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.jpu_dilations = j.at("jpu_dilations").get<std::vector<int>>();
  c.jpu_branch_ch = j.at("jpu_branch_ch").get<int>();
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  c.attention_layers = j.at("attention_layers").get<int>();
  c.attention_width = j.at("attention_width").get<int>();
  c.se_reduction = j.at("se_reduction").get<int>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.init_seed = j.at("init_seed").get<uint64_t>();
  return c;
}

// ---------------- DilatedResidualBlock ----------------

DilatedResidualBlock::DilatedResidualBlock(int in_ch, int out_ch, int dilation, std::string name) {
  cs1_ = std::make_unique<ConvSet>(in_ch, out_ch, 3, 1, dilation, name + ".cs1");
  cs2_ = std::make_unique<ConvSet>(out_ch, out_ch, 3, 1, dilation, name + ".cs2");
  if (in_ch != out_ch) {
    proj_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, 1, 1, 1, true, name + ".proj");
  }
}

void DilatedResidualBlock::init_he(Rng& rng) {
  cs1_->init_he(rng);
  cs2_->init_he(rng);
  if (proj_) proj_->init_he(rng);
}

void DilatedResidualBlock::collect_params(std::vector<Param*>& out) {
  cs1_->collect_params(out);
  cs2_->collect_params(out);
  if (proj_) proj_->collect_params(out);
}

void DilatedResidualBlock::collect_buffers(std::vector<Buffer*>& out) {
  cs1_->collect_buffers(out);
  cs2_->collect_buffers(out);
}

Tensor DilatedResidualBlock::forward(const Tensor& x, bool train) {
  Tensor f = cs2_->forward(cs1_->forward(x, train), train);
  Tensor y = proj_ ? proj_->forward(x, train) : x;
  y += f;
  return y;
}

Tensor DilatedResidualBlock::backward(const Tensor& gout) {
  Tensor gx = cs1_->backward(cs2_->backward(gout));
  if (proj_) {
    gx += proj_->backward(gout);
  } else {
    gx += gout;
  }
  return gx;
}

// ---------------- JPU ----------------

Jpu::Jpu(int c3, int c4, const std::vector<int>& dilations, int branch_ch, std::string name)
    : c3_(c3), c4_(c4), branch_ch_(branch_ch) {
  for (size_t i = 0; i < dilations.size(); ++i) {
    branches_.push_back(std::make_unique<ConvSet>(c3 + c4, branch_ch, 3, 1, dilations[i],
                                                  name + ".d" + std::to_string(dilations[i])));
  }
}

void Jpu::init_he(Rng& rng) {
  for (auto& b : branches_) b->init_he(rng);
}

void Jpu::collect_params(std::vector<Param*>& out) {
  for (auto& b : branches_) b->collect_params(out);
}

void Jpu::collect_buffers(std::vector<Buffer*>& out) {
  for (auto& b : branches_) b->collect_buffers(out);
}

Tensor Jpu::forward(const Tensor& down3, const Tensor& down4, bool train) {
  if (down4.h() * 2 != down3.h() || down4.w() * 2 != down3.w()) {
    throw std::invalid_argument("Jpu: down4 " + down4.shape_str() +
                                " must be half of down3 " + down3.shape_str());
  }
  Tensor up4 = up_.forward(down4, train);
  Tensor cat = concat_channels({&down3, &up4});
  std::vector<Tensor> outs;
  outs.reserve(branches_.size());
  for (auto& b : branches_) outs.push_back(b->forward(cat, train));
  std::vector<const Tensor*> ptrs;
  for (const auto& t : outs) ptrs.push_back(&t);
  return concat_channels(ptrs);
}

std::pair<Tensor, Tensor> Jpu::backward(const Tensor& gout) {
  std::vector<int> widths(branches_.size(), branch_ch_);
  std::vector<Tensor> gparts = split_channels(gout, widths);
  Tensor gcat;
  for (size_t i = 0; i < branches_.size(); ++i) {
    Tensor g = branches_[i]->backward(gparts[i]);
    if (i == 0) {
      gcat = std::move(g);
    } else {
      gcat += g;
    }
  }
  std::vector<Tensor> split = split_channels(gcat, {c3_, c4_});
  Tensor g4 = up_.backward(split[1]);
  return {std::move(split[0]), std::move(g4)};
}

Tensor attention_combine(const Tensor& rux_features, const Tensor& attention_map) {
  return mul_broadcast_map(rux_features, attention_map);
}

// ---------------- Model base ----------------

std::vector<Param*> Model::params() {
  std::vector<Param*> ps;
  collect_params(ps);
  return ps;
}

std::vector<Buffer*> Model::buffers() {
  std::vector<Buffer*> bs;
  collect_buffers(bs);
  return bs;
}

std::string Model::config_hash() const { return hash_hex(config_json().dump()); }

void Model::zero_grads() {
  for (Param* p : params()) p->grad.fill(0.0);
}

size_t Model::param_count() {
  size_t n = 0;
  for (Param* p : params()) n += p->value.size();
  return n;
}

namespace {

int scaled_width(int w, double mult) {
  int s = static_cast<int>(std::lround(w * mult));
  return s < 1 ? 1 : s;
}

void check_input(const Tensor& x, const TensorSpec& spec, const char* who) {
  if (x.c() != spec.channels || x.h() != spec.height || x.w() != spec.width) {
    throw std::invalid_argument(std::string(who) + ": input " + x.shape_str() +
                                " does not match configured spec (" +
                                std::to_string(spec.channels) + "," + std::to_string(spec.height) +
                                "," + std::to_string(spec.width) + ")");
  }
}

// ---------------- DRN classifier ----------------

class DrnClassifier : public Model {
 public:
  explicit DrnClassifier(const ClassifierConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const double m = cfg.width_multiplier;
    const int stem_w = scaled_width(cfg.stem_width, m);
    const int stem_stride = cfg.scale == Scale::PAPER ? 2 : 1;
    stem_ = std::make_unique<ConvSet>(cfg.input.channels, stem_w, cfg.stem_kernel, stem_stride, 1,
                                      "stem");
    int prev = stem_w;
    for (size_t s = 0; s < cfg.stage_widths.size(); ++s) {
      Stage stage;
      const int w = scaled_width(cfg.stage_widths[s], m);
      const int dil = cfg.dilation_schedule[s];
      if (dil == 1) {
        stage.down = std::make_unique<ConvSet>(prev, w, 3, 2, 1, "s" + std::to_string(s) + ".down");
        prev = w;
      }
      for (int b = 0; b < cfg.blocks_per_stage; ++b) {
        stage.blocks.push_back(std::make_unique<DilatedResidualBlock>(
            prev, w, dil, "s" + std::to_string(s) + ".b" + std::to_string(b)));
        prev = w;
      }
      stages_.push_back(std::move(stage));
    }
    head_ = std::make_unique<Linear>(prev, 1, "head");
    Rng rng(cfg.init_seed);
    stem_->init_he(rng);
    for (auto& st : stages_) {
      if (st.down) st.down->init_he(rng);
      for (auto& b : st.blocks) b->init_he(rng);
    }
    head_->init_he(rng);
  }

  Tensor forward(const Tensor& x, bool train) override {
    check_input(x, cfg_.input, "DrnClassifier");
    Tensor t = stem_->forward(x, train);
    for (auto& st : stages_) {
      if (st.down) t = st.down->forward(t, train);
      for (auto& b : st.blocks) t = b->forward(t, train);
    }
    t = gap_.forward(t, train);
    t = head_->forward(t, train);
    return sig_.forward(t, train);
  }

  Tensor backward(const Tensor& gout) override {
    Tensor g = head_->backward(sig_.backward(gout));
    g = gap_.backward(g);
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
      for (auto bit = it->blocks.rbegin(); bit != it->blocks.rend(); ++bit) g = (*bit)->backward(g);
      if (it->down) g = it->down->backward(g);
    }
    return stem_->backward(g);
  }

  void collect_params(std::vector<Param*>& out) override {
    stem_->collect_params(out);
    for (auto& st : stages_) {
      if (st.down) st.down->collect_params(out);
      for (auto& b : st.blocks) b->collect_params(out);
    }
    head_->collect_params(out);
  }

  void collect_buffers(std::vector<Buffer*>& out) override {
    stem_->collect_buffers(out);
    for (auto& st : stages_) {
      if (st.down) st.down->collect_buffers(out);
      for (auto& b : st.blocks) b->collect_buffers(out);
    }
  }

  json config_json() const override { return cfg_.to_json(); }

 private:
  struct Stage {
    std::unique_ptr<ConvSet> down;
    std::vector<std::unique_ptr<DilatedResidualBlock>> blocks;
  };
  ClassifierConfig cfg_;
  std::unique_ptr<ConvSet> stem_;
  std::vector<Stage> stages_;
  GlobalAvgPool gap_;
  std::unique_ptr<Linear> head_;
  SigmoidLayer sig_;
};

// ---------------- MixNet classifier ----------------

class MixBlock : public Module {
 public:
  MixBlock(int in_ch, int out_ch, int expand, const std::vector<int>& kernel_sizes, int stride,
           std::string name)
      : in_ch_(in_ch), out_ch_(out_ch), stride_(stride) {
    const int mid = in_ch * expand;
    expand_ = std::make_unique<ConvSet>(in_ch, mid, 1, 1, 1, name + ".exp");
    mdw_ = std::make_unique<MixedDepthwiseConv>(mid, kernel_sizes, stride, /*bias=*/false,
                                                name + ".mdw");
    bn2_ = std::make_unique<BatchNorm2d>(mid, 0.1, 1e-5, name + ".bn2");
    proj_ = std::make_unique<Conv2d>(mid, out_ch, 1, 1, 1, 1, false, name + ".proj");
    bn3_ = std::make_unique<BatchNorm2d>(out_ch, 0.1, 1e-5, name + ".bn3");
    residual_ = stride == 1 && in_ch == out_ch;
  }

  void init_he(Rng& rng) {
    expand_->init_he(rng);
    mdw_->init_he(rng);
    Param dummy;
    init_he_conv(proj_->weight, dummy, proj_->in_ch(), rng);
  }

  Tensor forward(const Tensor& x, bool train) override {
    if (residual_) cached_x_ = x;
    Tensor t = expand_->forward(x, train);
    t = relu2_.forward(bn2_->forward(mdw_->forward(t, train), train), train);
    t = bn3_->forward(proj_->forward(t, train), train);
    if (residual_) t += cached_x_;
    return t;
  }

  Tensor backward(const Tensor& gout) override {
    Tensor g = proj_->backward(bn3_->backward(gout));
    g = mdw_->backward(bn2_->backward(relu2_.backward(g)));
    g = expand_->backward(g);
    if (residual_) g += gout;
    return g;
  }

  void collect_params(std::vector<Param*>& out) override {
    expand_->collect_params(out);
    mdw_->collect_params(out);
    bn2_->collect_params(out);
    proj_->collect_params(out);
    bn3_->collect_params(out);
  }

  void collect_buffers(std::vector<Buffer*>& out) override {
    expand_->collect_buffers(out);
    bn2_->collect_buffers(out);
    bn3_->collect_buffers(out);
  }

 private:
  int in_ch_, out_ch_, stride_;
  bool residual_;
  std::unique_ptr<ConvSet> expand_;
  std::unique_ptr<MixedDepthwiseConv> mdw_;
  std::unique_ptr<BatchNorm2d> bn2_, bn3_;
  std::unique_ptr<Conv2d> proj_;
  ReLU relu2_;
  Tensor cached_x_;
};

class MixNetClassifier : public Model {
 public:
  explicit MixNetClassifier(const ClassifierConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const double m = cfg.width_multiplier;
    const int stem_w = scaled_width(cfg.stem_width, m);
    stem_ = std::make_unique<ConvSet>(cfg.input.channels, stem_w, 3, 2, 1, "stem");
    int prev = stem_w;
    for (size_t s = 0; s < cfg.stage_widths.size(); ++s) {
      const int w = scaled_width(cfg.stage_widths[s], m);
      blocks_.push_back(std::make_unique<MixBlock>(prev, w, cfg.expand_ratios[s],
                                                   cfg.kernel_size_groups, cfg.stage_strides[s],
                                                   "s" + std::to_string(s)));
      prev = w;
      for (int b = 1; b < cfg.blocks_per_stage; ++b) {
        blocks_.push_back(std::make_unique<MixBlock>(prev, w, cfg.expand_ratios[s],
                                                     cfg.kernel_size_groups, 1,
                                                     "s" + std::to_string(s) + "b" +
                                                         std::to_string(b)));
      }
    }
    head_ = std::make_unique<Linear>(prev, 1, "head");
    Rng rng(cfg.init_seed);
    stem_->init_he(rng);
    for (auto& b : blocks_) b->init_he(rng);
    head_->init_he(rng);
  }

  Tensor forward(const Tensor& x, bool train) override {
    check_input(x, cfg_.input, "MixNetClassifier");
    Tensor t = stem_->forward(x, train);
    for (auto& b : blocks_) t = b->forward(t, train);
    t = gap_.forward(t, train);
    t = head_->forward(t, train);
    return sig_.forward(t, train);
  }

  Tensor backward(const Tensor& gout) override {
    Tensor g = head_->backward(sig_.backward(gout));
    g = gap_.backward(g);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
    return stem_->backward(g);
  }

  void collect_params(std::vector<Param*>& out) override {
    stem_->collect_params(out);
    for (auto& b : blocks_) b->collect_params(out);
    head_->collect_params(out);
  }

  void collect_buffers(std::vector<Buffer*>& out) override {
    stem_->collect_buffers(out);
    for (auto& b : blocks_) b->collect_buffers(out);
  }

  json config_json() const override { return cfg_.to_json(); }

 private:
  ClassifierConfig cfg_;
  std::unique_ptr<ConvSet> stem_;
  std::vector<std::unique_ptr<MixBlock>> blocks_;
  GlobalAvgPool gap_;
  std::unique_ptr<Linear> head_;
  SigmoidLayer sig_;
};

// ---------------- ARUX segmenter ----------------

class AruxSegmenter : public Model {
 public:
  explicit AruxSegmenter(const SegmenterConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto& ec = cfg.encoder_channels;
    int prev = cfg.input.channels;
    for (int s = 0; s < 4; ++s) {
      EncStage st;
      st.cs_a = std::make_unique<ConvSet>(prev, ec[s], 3, 1, 1, "down" + std::to_string(s + 1) + ".a");
      st.cs_b = std::make_unique<ConvSet>(ec[s], ec[s], 3, 1, 1, "down" + std::to_string(s + 1) + ".b");
      st.se = std::make_unique<SELayer>(ec[s], cfg.se_reduction, "down" + std::to_string(s + 1) + ".se");
      st.down = std::make_unique<ConvSet>(ec[s], ec[s], 3, 2, 1, "down" + std::to_string(s + 1) + ".ds");
      enc_.push_back(std::move(st));
      prev = ec[s];
    }
    jpu_ = std::make_unique<Jpu>(ec[2], ec[3], cfg.jpu_dilations, cfg.jpu_branch_ch);

    const auto& dc = cfg.decoder_channels;
    up1_cs_ = std::make_unique<ConvSet>(jpu_->out_ch() + ec[1], dc[0], 3, 1, 1, "up1");
    up2_cs_ = std::make_unique<ConvSet>(dc[0] + ec[0], dc[1], 3, 1, 1, "up2");
    up3_cs_ = std::make_unique<ConvSet>(dc[1], dc[2], 3, 1, 1, "up3");
    head_ = std::make_unique<Conv2d>(dc[2], 1, 1, 1, 1, 1, true, "head");

    anet_ = std::make_unique<Sequential>();
    int aw = cfg.attention_width;
    anet_->add(std::make_unique<ConvSet>(cfg.input.channels, aw, 3, 1, 1, "anet.0"));
    for (int i = 1; i < cfg.attention_layers - 1; ++i) {
      anet_->add(std::make_unique<ConvSet>(aw, aw, 3, 1, 1, "anet." + std::to_string(i)));
    }
    anet_->add(std::make_unique<Conv2d>(aw, 1, 3, 1, 1, 1, true, "anet.out"));
    anet_->add(std::make_unique<SigmoidLayer>());

    Rng rng(cfg.init_seed);
    for (auto& st : enc_) {
      st.cs_a->init_he(rng);
      st.cs_b->init_he(rng);
      st.se->init_he(rng);
      st.down->init_he(rng);
    }
    jpu_->init_he(rng);
    up1_cs_->init_he(rng);
    up2_cs_->init_he(rng);
    up3_cs_->init_he(rng);
    head_->init_he(rng);
    for (size_t i = 0; i + 2 < anet_->size(); ++i) {
      static_cast<ConvSet&>(anet_->at(i)).init_he(rng);
    }
    static_cast<Conv2d&>(anet_->at(anet_->size() - 2)).init_he(rng);
  }

  Tensor forward(const Tensor& x, bool train) override {
    check_input(x, cfg_.input, "AruxSegmenter");
    if (x.h() % 16 != 0 || x.w() % 16 != 0 || x.h() < 16 || x.w() < 16) {
      throw std::invalid_argument("AruxSegmenter: spatial size " + x.shape_str() +
                                  " not divisible by the 4-stage downsampling factor 16");
    }
    Tensor t = x;
    for (int s = 0; s < 4; ++s) {
      t = enc_[s].cs_a->forward(t, train);
      t = enc_[s].cs_b->forward(t, train);
      t = enc_[s].se->forward(t, train);
      t = enc_[s].down->forward(t, train);
      d_[s] = t;
    }
    Tensor fused = jpu_->forward(d_[2], d_[3], train);

    Tensor u = up1_up_.forward(fused, train);
    u = concat_channels({&u, &d_[1]});
    u = up1_cs_->forward(u, train);

    u = up2_up_.forward(u, train);
    u = concat_channels({&u, &d_[0]});
    u = up2_cs_->forward(u, train);

    u = up3_up_.forward(u, train);
    u = up3_cs_->forward(u, train);
    rux_out_ = u;

    if (cfg_.use_attention) {
      att_map_ = anet_->forward(x, train);
      u = attention_combine(u, att_map_);
    }
    Tensor logits = head_->forward(u, train);
    return out_sig_.forward(logits, train);
  }

  Tensor backward(const Tensor& gout) override {
    Tensor g = head_->backward(out_sig_.backward(gout));

    Tensor gx_att;
    if (cfg_.use_attention) {
      // Product rule through the gate: feature path and attention-map path.
      Tensor g_att(g.n(), 1, g.h(), g.w());
      const size_t plane = static_cast<size_t>(g.h()) * g.w();
      for (int n = 0; n < g.n(); ++n) {
        double* ga = g_att.plane(n, 0);
        const double* am = att_map_.plane(n, 0);
        for (int c = 0; c < g.c(); ++c) {
          const double* gp = g.plane(n, c);
          const double* rp = rux_out_.plane(n, c);
          double* gp_mut = g.plane(n, c);
          for (size_t i = 0; i < plane; ++i) {
            ga[i] += gp[i] * rp[i];
            gp_mut[i] = gp[i] * am[i];
          }
        }
      }
      gx_att = anet_->backward(g_att);
    }

    g = up3_cs_->backward(g);
    g = up3_up_.backward(g);

    g = up2_cs_->backward(g);
    auto parts2 = split_channels(g, {cfg_.decoder_channels[0], cfg_.encoder_channels[0]});
    Tensor g_skip1 = std::move(parts2[1]);
    g = up2_up_.backward(parts2[0]);

    g = up1_cs_->backward(g);
    auto parts1 = split_channels(g, {jpu_->out_ch(), cfg_.encoder_channels[1]});
    Tensor g_skip2 = std::move(parts1[1]);
    Tensor g_fused = std::move(parts1[0]);

    auto [g_d3, g_d4] = jpu_->backward(up1_up_.backward(g_fused));

    Tensor g_enc = backward_stage(3, g_d4);
    g_enc += g_d3;
    g_enc = backward_stage(2, g_enc);
    g_enc += g_skip2;
    g_enc = backward_stage(1, g_enc);
    g_enc += g_skip1;
    g_enc = backward_stage(0, g_enc);

    if (cfg_.use_attention) g_enc += gx_att;
    return g_enc;
  }

  void collect_params(std::vector<Param*>& out) override {
    for (auto& st : enc_) {
      st.cs_a->collect_params(out);
      st.cs_b->collect_params(out);
      st.se->collect_params(out);
      st.down->collect_params(out);
    }
    jpu_->collect_params(out);
    up1_cs_->collect_params(out);
    up2_cs_->collect_params(out);
    up3_cs_->collect_params(out);
    head_->collect_params(out);
    anet_->collect_params(out);
  }

  void collect_buffers(std::vector<Buffer*>& out) override {
    for (auto& st : enc_) {
      st.cs_a->collect_buffers(out);
      st.cs_b->collect_buffers(out);
      st.down->collect_buffers(out);
    }
    jpu_->collect_buffers(out);
    up1_cs_->collect_buffers(out);
    up2_cs_->collect_buffers(out);
    up3_cs_->collect_buffers(out);
    anet_->collect_buffers(out);
  }

  json config_json() const override { return cfg_.to_json(); }

 private:
  struct EncStage {
    std::unique_ptr<ConvSet> cs_a, cs_b;
    std::unique_ptr<SELayer> se;
    std::unique_ptr<ConvSet> down;
  };

  Tensor backward_stage(int s, const Tensor& g) {
    Tensor t = enc_[s].down->backward(g);
    t = enc_[s].se->backward(t);
    t = enc_[s].cs_b->backward(t);
    return enc_[s].cs_a->backward(t);
  }

  SegmenterConfig cfg_;
  std::vector<EncStage> enc_;
  Tensor d_[4];
  std::unique_ptr<Jpu> jpu_;
  BilinearUpsample2x up1_up_, up2_up_, up3_up_;
  std::unique_ptr<ConvSet> up1_cs_, up2_cs_, up3_cs_;
  std::unique_ptr<Conv2d> head_;
  std::unique_ptr<Sequential> anet_;
  SigmoidLayer out_sig_;
  Tensor rux_out_, att_map_;
};

}  // namespace

std::unique_ptr<Model> build_classifier(const ClassifierConfig& config) {
  if (config.arch == Arch::DRN) return std::make_unique<DrnClassifier>(config);
  return std::make_unique<MixNetClassifier>(config);
}

std::unique_ptr<Model> build_segmenter(const SegmenterConfig& config) {
  return std::make_unique<AruxSegmenter>(config);
}

ClassifierConfig classifier_preset(Arch arch, Scale scale) {
  ClassifierConfig c;
  c.arch = arch;
  c.scale = scale;
  if (arch == Arch::DRN) {
    if (scale == Scale::PAPER) {
      c.input = {1, 400, 400};
      c.stem_width = 16;
      c.stem_kernel = 7;
      c.stage_widths = {32, 64, 128, 256};
      c.blocks_per_stage = 2;
      c.dilation_schedule = {1, 1, 2, 4};
    } else {
      c.input = {1, 64, 64};
      c.stem_width = 8;
      c.stem_kernel = 3;
      c.stage_widths = {12, 16, 24, 32};
      c.blocks_per_stage = 1;
      c.dilation_schedule = {1, 1, 2, 4};
    }
  } else {
    c.kernel_size_groups = {3, 5, 7, 9};
    if (scale == Scale::PAPER) {
      c.input = {1, 400, 400};
      c.stem_width = 16;
      c.stem_kernel = 3;
      c.stage_widths = {24, 40, 80, 120};
      c.expand_ratios = {3, 6, 6, 6};
      c.stage_strides = {1, 2, 2, 2};
      c.blocks_per_stage = 2;
    } else {
      c.input = {1, 64, 64};
      c.stem_width = 8;
      c.stem_kernel = 3;
      c.stage_widths = {12, 16, 24, 32};
      c.expand_ratios = {2, 2, 2, 2};
      c.stage_strides = {1, 2, 2, 1};
      c.blocks_per_stage = 1;
    }
  }
  return c;
}

SegmenterConfig segmenter_preset(Scale scale) {
  SegmenterConfig c;
  c.scale = scale;
  if (scale == Scale::PAPER) {
    c.input = {1, 400, 400};
    c.encoder_channels = {32, 64, 128, 256};
    c.jpu_dilations = {1, 2, 4, 8};
    c.jpu_branch_ch = 64;
    c.decoder_channels = {128, 64, 32};
    c.attention_width = 16;
    c.se_reduction = 16;
  } else {
    c.input = {1, 64, 64};
    c.encoder_channels = {8, 12, 16, 24};
    c.jpu_dilations = {1, 2, 4, 8};
    c.jpu_branch_ch = 16;
    c.decoder_channels = {24, 16, 8};
    c.attention_width = 8;
    c.se_reduction = 4;
  }
  return c;
}

std::vector<double> classifier_forward(Model& model, const Tensor& images) {
  Tensor out = model.forward(images, /*train=*/false);
  if (out.c() != 1 || out.h() != 1 || out.w() != 1) {
    throw std::logic_error("classifier_forward: model output is not a single probability");
  }
  std::vector<double> probs(out.n());
  for (int n = 0; n < out.n(); ++n) probs[n] = out.at(n, 0, 0, 0);
  return probs;
}

Tensor segmenter_forward(Model& model, const Tensor& images) {
  return model.forward(images, /*train=*/false);
}

// ---------------- state & checkpoints ----------------

std::vector<Tensor> get_state(Model& model) {
  std::vector<Tensor> state;
  for (Param* p : model.params()) state.push_back(p->value);
  for (Buffer* b : model.buffers()) state.push_back(b->value);
  return state;
}

void set_state(Model& model, const std::vector<Tensor>& state) {
  auto ps = model.params();
  auto bs = model.buffers();
  if (state.size() != ps.size() + bs.size()) {
    throw std::invalid_argument("set_state: tensor count mismatch");
  }
  size_t i = 0;
  for (Param* p : ps) {
    p->value.require_same_shape(state[i], "set_state");
    p->value = state[i++];
  }
  for (Buffer* b : bs) {
    b->value.require_same_shape(state[i], "set_state");
    b->value = state[i++];
  }
}

namespace {

constexpr char kCkptMagic[8] = {'P', 'E', 'C', 'K', 'P', 'T', '0', '1'};

void append_tensor_bytes(std::string& blob, const std::string& name, const Tensor& t) {
  uint32_t nl = static_cast<uint32_t>(name.size());
  blob.append(reinterpret_cast<const char*>(&nl), 4);
  blob.append(name);
  int32_t dims[4] = {t.n(), t.c(), t.h(), t.w()};
  blob.append(reinterpret_cast<const char*>(dims), sizeof(dims));
  blob.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

std::string serialize_weights(Model& model) {
  std::string blob(kCkptMagic, sizeof(kCkptMagic));
  auto ps = model.params();
  auto bs = model.buffers();
  uint32_t count = static_cast<uint32_t>(ps.size() + bs.size());
  blob.append(reinterpret_cast<const char*>(&count), 4);
  for (Param* p : ps) append_tensor_bytes(blob, p->name, p->value);
  for (Buffer* b : bs) append_tensor_bytes(blob, b->name, b->value);
  return blob;
}

}  // namespace

std::string weights_digest(Model& model) {
  std::string blob = serialize_weights(model);
  return to_hex(fnv1a64(blob.data(), blob.size()));
}

void save_checkpoint(Model& model, const fs::path& path, const json& sidecar_extra) {
  std::string blob = serialize_weights(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());

  json sidecar = sidecar_extra;
  sidecar["config"] = model.config_json();
  sidecar["config_hash"] = model.config_hash();
  sidecar["weights_digest"] = to_hex(fnv1a64(blob.data(), blob.size()));
  fs::path side = path;
  side += ".json";
  std::ofstream sout(side, std::ios::trunc);
  if (!sout) throw std::runtime_error("cannot write checkpoint sidecar " + side.string());
  sout << sidecar.dump(2) << "\n";
}

json load_checkpoint(Model& model, const fs::path& path) {
  fs::path side = path;
  side += ".json";
  std::ifstream sin(side);
  if (!sin) throw std::runtime_error("cannot open checkpoint sidecar " + side.string());
  json sidecar;
  sin >> sidecar;
  const std::string stored_hash = sidecar.at("config_hash").get<std::string>();
  if (stored_hash != model.config_hash()) {
    throw std::runtime_error("checkpoint " + path.string() + " config hash " + stored_hash +
                             " does not match model config hash " + model.config_hash());
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
  }
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);

  auto ps = model.params();
  auto bs = model.buffers();
  if (count != ps.size() + bs.size()) {
    throw std::runtime_error("checkpoint " + path.string() + ": tensor count mismatch");
  }

  auto read_into = [&](Tensor& t, const std::string& expect_name) {
    uint32_t nl = 0;
    in.read(reinterpret_cast<char*>(&nl), 4);
    std::string name(nl, '\0');
    in.read(name.data(), nl);
    int32_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in) throw std::runtime_error("checkpoint truncated before " + expect_name);
    if (dims[0] != t.n() || dims[1] != t.c() || dims[2] != t.h() || dims[3] != t.w()) {
      throw std::runtime_error("checkpoint tensor " + name + " shape mismatch for " + expect_name);
    }
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated in " + expect_name);
  };

  for (Param* p : ps) read_into(p->value, p->name);
  for (Buffer* b : bs) read_into(b->value, b->name);
  return sidecar;
}

}  // namespace pecad::nn
