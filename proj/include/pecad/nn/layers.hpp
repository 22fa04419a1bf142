#ifndef PECAD_NN_LAYERS_HPP_
#define PECAD_NN_LAYERS_HPP_

#include <memory>
#include <string>
#include <vector>

#include "pecad/rng.hpp"
#include "pecad/tensor.hpp"

namespace pecad::nn {

/// A trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros_like(value);
  }
};

/// Non-trainable state carried by a layer (batch-norm running statistics).
struct Buffer {
  std::string name;
  Tensor value;
};

/// Layer interface. forward caches whatever backward needs; backward consumes
/// the cached activations of the immediately preceding forward and accumulates
/// into param grads. Single-threaded by design: training needs exclusive
/// access, and concurrent inference should clone the module.
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(std::vector<Param*>& out) {}
  virtual void collect_buffers(std::vector<Buffer*>& out) {}

  void zero_grads() {
    std::vector<Param*> ps;
    collect_params(ps);
    for (Param* p : ps) p->grad.fill(0.0);
  }
};

/// 2D convolution with same-padding pad = dilation*(k-1)/2, odd kernels only.
/// Grouped: in_ch and out_ch must both divide by `groups`.
class Conv2d : public Module {
 public:
  Conv2d(int in_ch, int out_ch, int ksize, int stride = 1, int dilation = 1,
         int groups = 1, bool bias = true, std::string name = "conv");

  void init_he(Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

  Param weight;  // (out_ch, in_ch/groups, k, k)
  Param bias;    // (1, out_ch, 1, 1); empty when bias disabled

  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }

 private:
  int in_ch_, out_ch_, k_, stride_, dilation_, groups_, pad_;
  bool has_bias_;
  Tensor cached_x_;

  void im2col(const double* src, int h, int w, int ho, int wo, int icg,
              std::vector<double>& col) const;
  void col2im_add(const std::vector<double>& col, int h, int w, int ho, int wo, int icg,
                  double* dst) const;
};

/// Batch normalization over (N, H, W) per channel. Training mode normalizes by
/// biased batch statistics and updates running buffers; eval mode uses the
/// running buffers.
class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int ch, double momentum = 0.1, double eps = 1e-5,
                       std::string name = "bn");

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;

  Param gamma, beta;
  Buffer running_mean, running_var;

 private:
  int ch_;
  double momentum_, eps_;
  bool last_train_ = true;
  Tensor cached_xhat_;
  std::vector<double> cached_invstd_;
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor cached_x_;
};

class SigmoidLayer : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor cached_y_;
};

/// Fully connected layer on (N, C, 1, 1) tensors.
class Linear : public Module {
 public:
  Linear(int in_ch, int out_ch, std::string name = "fc");

  void init_he(Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

  Param weight;  // (out_ch, in_ch, 1, 1)
  Param bias;    // (1, out_ch, 1, 1)

 private:
  int in_ch_, out_ch_;
  Tensor cached_x_;
};

class GlobalAvgPool : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int h_ = 0, w_ = 0;
};

/// x2 bilinear upsampling (align_corners = false); backward is the exact
/// transpose of the interpolation.
class BilinearUpsample2x : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int in_h_ = 0, in_w_ = 0;
};

/// Depthwise convolution where channel groups use different kernel sizes.
/// Channels split into kernel_sizes.size() groups; the remainder goes to the
/// first group. Group g is convolved depthwise with kernel_sizes[g] and the
/// outputs are concatenated in input channel order.
class MixedDepthwiseConv : public Module {
 public:
  MixedDepthwiseConv(int channels, std::vector<int> kernel_sizes, int stride = 1,
                     bool bias = true, std::string name = "mdw");

  void init_he(Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

  const std::vector<int>& group_channels() const { return group_ch_; }
  Conv2d& group_conv(size_t g) { return *convs_[g]; }

 private:
  int channels_, stride_;
  std::vector<int> group_ch_;
  std::vector<std::unique_ptr<Conv2d>> convs_;
};

/// Squeeze-and-excitation: global average -> bottleneck (channels/reduction)
/// -> sigmoid gate -> per-channel rescale.
class SELayer : public Module {
 public:
  SELayer(int channels, int reduction, std::string name = "se");

  void init_he(Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

  Linear& fc1() { return *fc1_; }
  Linear& fc2() { return *fc2_; }

 private:
  int channels_, reduction_;
  std::unique_ptr<Linear> fc1_, fc2_;
  std::unique_ptr<ReLU> relu_;
  std::unique_ptr<SigmoidLayer> sig_;
  Tensor cached_x_, cached_gate_;
};

/// Convolution set: conv + batch norm + activation.
class ConvSet : public Module {
 public:
  ConvSet(int in_ch, int out_ch, int ksize, int stride = 1, int dilation = 1,
          std::string name = "cs");

  void init_he(Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;

  Conv2d& conv() { return *conv_; }
  BatchNorm2d& bn() { return *bn_; }

 private:
  std::unique_ptr<Conv2d> conv_;
  std::unique_ptr<BatchNorm2d> bn_;
  std::unique_ptr<ReLU> relu_;
};

/// Plain module chain; forward in order, backward reversed.
class Sequential : public Module {
 public:
  Sequential() = default;

  void add(std::unique_ptr<Module> m) { mods_.push_back(std::move(m)); }
  size_t size() const { return mods_.size(); }
  Module& at(size_t i) { return *mods_[i]; }

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;

 private:
  std::vector<std::unique_ptr<Module>> mods_;
};

// ---- free tensor helpers ----

Tensor concat_channels(const std::vector<const Tensor*>& parts);
std::vector<Tensor> split_channels(const Tensor& whole, const std::vector<int>& channels);

/// Elementwise product of each feature channel with a 1-channel spatial map.
Tensor mul_broadcast_map(const Tensor& features, const Tensor& map1);

void init_he_conv(Param& weight, Param& bias, int fan_in, Rng& rng);

}  // namespace pecad::nn

#endif  // PECAD_NN_LAYERS_HPP_
