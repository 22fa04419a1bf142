#ifndef PECAD_NN_NETS_HPP_
#define PECAD_NN_NETS_HPP_

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pecad/nn/layers.hpp"
#include <nlohmann/json.hpp>

namespace pecad::nn {

struct TensorSpec {
  int channels = 1;
  int height = 400;
  int width = 400;
};

enum class Arch { DRN, MIXNET };
enum class Scale { PAPER, DESK };

const char* arch_name(Arch a);
const char* scale_name(Scale s);

/// Classifier hyperparameters. The preset tables in classifier_preset() are
/// the single source of the per-scale widths, depths, dilation schedules and
/// kernel groups.
struct ClassifierConfig {
  Arch arch = Arch::DRN;
  Scale scale = Scale::DESK;
  TensorSpec input{1, 400, 400};
  double width_multiplier = 1.0;

  // DRN: one stage per entry; dilation 1 stages downsample by stride-2 entry
  // convs, dilated stages hold resolution (dilated residual network layout).
  std::vector<int> dilation_schedule{1, 1, 2, 4};
  int stem_width = 16;
  int stem_kernel = 7;
  std::vector<int> stage_widths{32, 64, 128, 256};
  int blocks_per_stage = 2;

  // MixNet: inverted-bottleneck stages whose spatial convs are mixed
  // depthwise convolutions over kernel_size_groups.
  std::vector<int> kernel_size_groups{3, 5, 7, 9};
  std::vector<int> expand_ratios{3, 6, 6, 6};
  std::vector<int> stage_strides{1, 2, 2, 2};

  uint64_t init_seed = 1234;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

/// Segmenter hyperparameters: four SE-augmented downsampling stages, JPU
/// fusion of Down3/Down4, three upsampling stages with U-Net shortcuts from
/// Down2 and Down1, gated by the A-Net attention branch.
struct SegmenterConfig {
  Scale scale = Scale::DESK;
  TensorSpec input{1, 400, 400};
  std::vector<int> encoder_channels{32, 64, 128, 256};
  std::vector<int> jpu_dilations{1, 2, 4, 8};
  int jpu_branch_ch = 64;
  std::vector<int> decoder_channels{128, 64, 32};
  int attention_layers = 4;
  int attention_width = 16;
  int se_reduction = 16;
  bool use_attention = true;
  uint64_t init_seed = 1234;

  void validate() const;
  nlohmann::json to_json() const;
  static SegmenterConfig from_json(const nlohmann::json& j);
};

/// Residual unit y = x' + F(x): two dilated 3x3 conv sets, with a 1x1
/// projection on the shortcut when the channel count changes.
class DilatedResidualBlock : public Module {
 public:
  DilatedResidualBlock(int in_ch, int out_ch, int dilation, std::string name = "drb");

  void init_he(Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;

  ConvSet& cs1() { return *cs1_; }
  ConvSet& cs2() { return *cs2_; }

 private:
  std::unique_ptr<ConvSet> cs1_, cs2_;
  std::unique_ptr<Conv2d> proj_;  // null when in_ch == out_ch
};

/// Joint pyramid upsampling: upsample Down4 x2, concatenate with Down3, run
/// parallel dilated 3x3 conv sets and concatenate the branch outputs.
class Jpu {
 public:
  Jpu(int c3, int c4, const std::vector<int>& dilations, int branch_ch,
      std::string name = "jpu");

  void init_he(Rng& rng);
  Tensor forward(const Tensor& down3, const Tensor& down4, bool train);
  std::pair<Tensor, Tensor> backward(const Tensor& grad_out);
  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer*>& out);

  int out_ch() const { return branch_ch_ * static_cast<int>(branches_.size()); }
  ConvSet& branch(size_t i) { return *branches_[i]; }

 private:
  int c3_, c4_, branch_ch_;
  BilinearUpsample2x up_;
  std::vector<std::unique_ptr<ConvSet>> branches_;
};

/// Multiply every feature channel by the 1-channel attention map.
Tensor attention_combine(const Tensor& rux_features, const Tensor& attention_map);

/// Abstract trained model: a differentiable image-to-tensor function with
/// serializable parameters and a hashable architecture description.
class Model {
 public:
  virtual ~Model() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(std::vector<Param*>& out) = 0;
  virtual void collect_buffers(std::vector<Buffer*>& out) = 0;
  virtual nlohmann::json config_json() const = 0;

  std::vector<Param*> params();
  std::vector<Buffer*> buffers();
  std::string config_hash() const;
  void zero_grads();
  size_t param_count();
};

std::unique_ptr<Model> build_classifier(const ClassifierConfig& config);
std::unique_ptr<Model> build_segmenter(const SegmenterConfig& config);

ClassifierConfig classifier_preset(Arch arch, Scale scale);
SegmenterConfig segmenter_preset(Scale scale);

/// Batched inference: PE probability per image, eval mode.
std::vector<double> classifier_forward(Model& model, const Tensor& images);
/// Batched inference: per-pixel probability maps, eval mode.
Tensor segmenter_forward(Model& model, const Tensor& images);

// ---- weight state and checkpoint container ----

std::vector<Tensor> get_state(Model& model);
void set_state(Model& model, const std::vector<Tensor>& state);

/// FNV-1a digest over the serialized weight blob.
std::string weights_digest(Model& model);

/// Binary tensor container + JSON sidecar {arch config, config hash, epoch,
/// metrics, seed}. load verifies the stored config hash against the model.
void save_checkpoint(Model& model, const std::filesystem::path& path,
                     const nlohmann::json& sidecar_extra);
nlohmann::json load_checkpoint(Model& model, const std::filesystem::path& path);

}  // namespace pecad::nn

#endif  // PECAD_NN_NETS_HPP_
