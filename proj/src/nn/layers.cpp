#include "pecad/nn/layers.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include <Eigen/Core>

namespace pecad::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

void init_he_conv(Param& weight, Param& bias, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (size_t i = 0; i < weight.value.size(); ++i) weight.value[i] = rng.normal(0.0, std);
  if (!bias.value.empty()) bias.value.fill(0.0);
}

// ---------------- Conv2d ----------------

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride, int dilation, int groups,
               bool bias, std::string name)
    : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride), dilation_(dilation),
      groups_(groups), has_bias_(bias) {
  if (ksize % 2 == 0) throw std::invalid_argument(name + ": even kernel size " + std::to_string(ksize));
  if (ksize < 1 || stride < 1 || dilation < 1) throw std::invalid_argument(name + ": bad conv hyperparameters");
  if (in_ch % groups != 0 || out_ch % groups != 0) {
    throw std::invalid_argument(name + ": channels not divisible by groups");
  }
  pad_ = dilation * (ksize - 1) / 2;
  weight = Param(name + ".w", Tensor(out_ch, in_ch / groups, ksize, ksize));
  if (bias) this->bias = Param(name + ".b", Tensor(1, out_ch, 1, 1));
}

void Conv2d::init_he(Rng& rng) {
  init_he_conv(weight, bias, (in_ch_ / groups_) * k_ * k_, rng);
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

void Conv2d::im2col(const double* src, int h, int w, int ho, int wo, int icg,
                    std::vector<double>& col) const {
  // col is (icg*k*k) x (ho*wo), row-major. src points at icg contiguous planes.
  const size_t row_len = static_cast<size_t>(ho) * wo;
  size_t q = 0;
  for (int ic = 0; ic < icg; ++ic) {
    const double* plane = src + static_cast<size_t>(ic) * h * w;
    for (int ki = 0; ki < k_; ++ki) {
      for (int kj = 0; kj < k_; ++kj, ++q) {
        double* dst = col.data() + q * row_len;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ki * dilation_;
          double* drow = dst + static_cast<size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::memset(drow, 0, sizeof(double) * wo);
            continue;
          }
          const double* srow = plane + static_cast<size_t>(iy) * w;
          const int off = kj * dilation_ - pad_;
          if (stride_ == 1) {
            // valid output xs: 0 <= ox+off < w
            int x0 = std::max(0, -off);
            int x1 = std::min(wo, w - off);
            if (x0 > 0) std::memset(drow, 0, sizeof(double) * x0);
            if (x1 > x0) std::memcpy(drow + x0, srow + x0 + off, sizeof(double) * (x1 - x0));
            if (x1 < wo) std::memset(drow + std::max(x0, x1), 0, sizeof(double) * (wo - std::max(x0, x1)));
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ + off;
              drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void Conv2d::col2im_add(const std::vector<double>& col, int h, int w, int ho, int wo, int icg,
                        double* dst) const {
  size_t q = 0;
  for (int ic = 0; ic < icg; ++ic) {
    double* plane = dst + static_cast<size_t>(ic) * h * w;
    for (int ki = 0; ki < k_; ++ki) {
      for (int kj = 0; kj < k_; ++kj, ++q) {
        const double* srow_base = col.data() + q * static_cast<size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ki * dilation_;
          if (iy < 0 || iy >= h) continue;
          const double* srow = srow_base + static_cast<size_t>(oy) * wo;
          double* drow = plane + static_cast<size_t>(iy) * w;
          const int off = kj * dilation_ - pad_;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ + off;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x, bool /*train*/) {
  if (x.c() != in_ch_) {
    throw std::invalid_argument("Conv2d: input has " + std::to_string(x.c()) +
                                " channels, expected " + std::to_string(in_ch_));
  }
  const int h = x.h(), w = x.w();
  const int ho = (h + 2 * pad_ - dilation_ * (k_ - 1) - 1) / stride_ + 1;
  const int wo = (w + 2 * pad_ - dilation_ * (k_ - 1) - 1) / stride_ + 1;
  const int icg = in_ch_ / groups_;
  const int ocg = out_ch_ / groups_;

  cached_x_ = x;
  Tensor y(x.n(), out_ch_, ho, wo);
  std::vector<double> col(static_cast<size_t>(icg) * k_ * k_ * ho * wo);

  const size_t spatial = static_cast<size_t>(ho) * wo;
  for (int n = 0; n < x.n(); ++n) {
    for (int g = 0; g < groups_; ++g) {
      im2col(x.plane(n, g * icg), h, w, ho, wo, icg, col);
      MapConstMat W(weight.value.plane(g * ocg, 0), ocg, static_cast<Eigen::Index>(icg) * k_ * k_);
      MapConstMat C(col.data(), static_cast<Eigen::Index>(icg) * k_ * k_, spatial);
      MapMat Y(y.plane(n, g * ocg), ocg, spatial);
      Y.noalias() = W * C;
    }
    if (has_bias_) {
      for (int oc = 0; oc < out_ch_; ++oc) {
        double b = bias.value[oc];
        double* p = y.plane(n, oc);
        for (size_t i = 0; i < spatial; ++i) p[i] += b;
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& gout) {
  const Tensor& x = cached_x_;
  const int h = x.h(), w = x.w();
  const int ho = gout.h(), wo = gout.w();
  const int icg = in_ch_ / groups_;
  const int ocg = out_ch_ / groups_;
  const size_t spatial = static_cast<size_t>(ho) * wo;

  Tensor gx = Tensor::zeros_like(x);
  std::vector<double> col(static_cast<size_t>(icg) * k_ * k_ * spatial);
  std::vector<double> gcol(col.size());

  for (int n = 0; n < x.n(); ++n) {
    for (int g = 0; g < groups_; ++g) {
      im2col(x.plane(n, g * icg), h, w, ho, wo, icg, col);
      MapConstMat C(col.data(), static_cast<Eigen::Index>(icg) * k_ * k_, spatial);
      MapConstMat GY(gout.plane(n, g * ocg), ocg, spatial);
      MapMat GW(weight.grad.plane(g * ocg, 0), ocg, static_cast<Eigen::Index>(icg) * k_ * k_);
      GW.noalias() += GY * C.transpose();

      MapConstMat W(weight.value.plane(g * ocg, 0), ocg, static_cast<Eigen::Index>(icg) * k_ * k_);
      MapMat GC(gcol.data(), static_cast<Eigen::Index>(icg) * k_ * k_, spatial);
      GC.noalias() = W.transpose() * GY;
      col2im_add(gcol, h, w, ho, wo, icg, gx.plane(n, g * icg));
    }
    if (has_bias_) {
      for (int oc = 0; oc < out_ch_; ++oc) {
        const double* p = gout.plane(n, oc);
        double s = 0.0;
        for (size_t i = 0; i < spatial; ++i) s += p[i];
        bias.grad[oc] += s;
      }
    }
  }
  return gx;
}

// ---------------- BatchNorm2d ----------------

BatchNorm2d::BatchNorm2d(int ch, double momentum, double eps, std::string name)
    : ch_(ch), momentum_(momentum), eps_(eps) {
  gamma = Param(name + ".gamma", Tensor(1, ch, 1, 1));
  beta = Param(name + ".beta", Tensor(1, ch, 1, 1));
  gamma.value.fill(1.0);
  running_mean = Buffer{name + ".running_mean", Tensor(1, ch, 1, 1)};
  running_var = Buffer{name + ".running_var", Tensor(1, ch, 1, 1)};
  running_var.value.fill(1.0);
}

void BatchNorm2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void BatchNorm2d::collect_buffers(std::vector<Buffer*>& out) {
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  if (x.c() != ch_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
  last_train_ = train;
  const size_t plane = static_cast<size_t>(x.h()) * x.w();
  const double m = static_cast<double>(x.n()) * plane;

  Tensor y = Tensor::zeros_like(x);
  cached_xhat_ = Tensor::zeros_like(x);
  cached_invstd_.assign(ch_, 0.0);

  for (int c = 0; c < ch_; ++c) {
    double mean, var;
    if (train) {
      double s = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean = s / m;
      double sq = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (size_t i = 0; i < plane; ++i) {
          double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / m;
      running_mean.value[c] = (1.0 - momentum_) * running_mean.value[c] + momentum_ * mean;
      running_var.value[c] = (1.0 - momentum_) * running_var.value[c] + momentum_ * var;
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const double invstd = 1.0 / std::sqrt(var + eps_);
    cached_invstd_[c] = invstd;
    const double g = gamma.value[c], b = beta.value[c];
    for (int n = 0; n < x.n(); ++n) {
      const double* p = x.plane(n, c);
      double* xh = cached_xhat_.plane(n, c);
      double* py = y.plane(n, c);
      for (size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean) * invstd;
        py[i] = g * xh[i] + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& gout) {
  const size_t plane = static_cast<size_t>(gout.h()) * gout.w();
  const double m = static_cast<double>(gout.n()) * plane;
  Tensor gx = Tensor::zeros_like(gout);

  for (int c = 0; c < ch_; ++c) {
    double s1 = 0.0, s2 = 0.0;
    for (int n = 0; n < gout.n(); ++n) {
      const double* gy = gout.plane(n, c);
      const double* xh = cached_xhat_.plane(n, c);
      for (size_t i = 0; i < plane; ++i) {
        s1 += gy[i];
        s2 += gy[i] * xh[i];
      }
    }
    beta.grad[c] += s1;
    gamma.grad[c] += s2;

    const double g = gamma.value[c];
    const double invstd = cached_invstd_[c];
    if (last_train_) {
      const double k1 = s1 / m, k2 = s2 / m;
      for (int n = 0; n < gout.n(); ++n) {
        const double* gy = gout.plane(n, c);
        const double* xh = cached_xhat_.plane(n, c);
        double* px = gx.plane(n, c);
        for (size_t i = 0; i < plane; ++i) {
          px[i] = g * invstd * (gy[i] - k1 - xh[i] * k2);
        }
      }
    } else {
      for (int n = 0; n < gout.n(); ++n) {
        const double* gy = gout.plane(n, c);
        double* px = gx.plane(n, c);
        for (size_t i = 0; i < plane; ++i) px[i] = g * invstd * gy[i];
      }
    }
  }
  return gx;
}

// ---------------- ReLU / Sigmoid ----------------

Tensor ReLU::forward(const Tensor& x, bool /*train*/) {
  cached_x_ = x;
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0) y[i] = 0.0;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& gout) {
  Tensor gx = gout;
  for (size_t i = 0; i < gx.size(); ++i) {
    if (cached_x_[i] <= 0.0) gx[i] = 0.0;
  }
  return gx;
}

Tensor SigmoidLayer::forward(const Tensor& x, bool /*train*/) {
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
  cached_y_ = y;
  return y;
}

Tensor SigmoidLayer::backward(const Tensor& gout) {
  Tensor gx = gout;
  for (size_t i = 0; i < gx.size(); ++i) {
    double s = cached_y_[i];
    gx[i] *= s * (1.0 - s);
  }
  return gx;
}

// ---------------- Linear ----------------

Linear::Linear(int in_ch, int out_ch, std::string name) : in_ch_(in_ch), out_ch_(out_ch) {
  weight = Param(name + ".w", Tensor(out_ch, in_ch, 1, 1));
  bias = Param(name + ".b", Tensor(1, out_ch, 1, 1));
}

void Linear::init_he(Rng& rng) { init_he_conv(weight, bias, in_ch_, rng); }

void Linear::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Tensor Linear::forward(const Tensor& x, bool /*train*/) {
  if (x.c() != in_ch_ || x.h() != 1 || x.w() != 1) {
    throw std::invalid_argument("Linear: expected (N," + std::to_string(in_ch_) + ",1,1), got " +
                                x.shape_str());
  }
  cached_x_ = x;
  Tensor y(x.n(), out_ch_, 1, 1);
  for (int n = 0; n < x.n(); ++n) {
    const double* xi = x.plane(n, 0);
    for (int o = 0; o < out_ch_; ++o) {
      const double* w = weight.value.plane(o, 0);
      double s = bias.value[o];
      for (int i = 0; i < in_ch_; ++i) s += w[i] * xi[i];
      y.at(n, o, 0, 0) = s;
    }
  }
  return y;
}

Tensor Linear::backward(const Tensor& gout) {
  Tensor gx(cached_x_.n(), in_ch_, 1, 1);
  for (int n = 0; n < gout.n(); ++n) {
    const double* xi = cached_x_.plane(n, 0);
    double* gxi = gx.plane(n, 0);
    for (int o = 0; o < out_ch_; ++o) {
      const double gy = gout.at(n, o, 0, 0);
      const double* w = weight.value.plane(o, 0);
      double* gw = weight.grad.plane(o, 0);
      bias.grad[o] += gy;
      for (int i = 0; i < in_ch_; ++i) {
        gw[i] += gy * xi[i];
        gxi[i] += gy * w[i];
      }
    }
  }
  return gx;
}

// ---------------- GlobalAvgPool ----------------

Tensor GlobalAvgPool::forward(const Tensor& x, bool /*train*/) {
  h_ = x.h();
  w_ = x.w();
  const size_t plane = static_cast<size_t>(h_) * w_;
  Tensor y(x.n(), x.c(), 1, 1);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* p = x.plane(n, c);
      double s = 0.0;
      for (size_t i = 0; i < plane; ++i) s += p[i];
      y.at(n, c, 0, 0) = s / static_cast<double>(plane);
    }
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& gout) {
  const size_t plane = static_cast<size_t>(h_) * w_;
  Tensor gx(gout.n(), gout.c(), h_, w_);
  for (int n = 0; n < gout.n(); ++n) {
    for (int c = 0; c < gout.c(); ++c) {
      const double g = gout.at(n, c, 0, 0) / static_cast<double>(plane);
      double* p = gx.plane(n, c);
      for (size_t i = 0; i < plane; ++i) p[i] = g;
    }
  }
  return gx;
}

// ---------------- BilinearUpsample2x ----------------

namespace {
// Sample positions for align_corners=false, x2: src = (dst + 0.5)/2 - 0.5.
inline void bilerp_coeff(int dst, int src_len, int& i0, int& i1, double& w1) {
  double src = (dst + 0.5) * 0.5 - 0.5;
  double f = std::floor(src);
  i0 = static_cast<int>(f);
  w1 = src - f;
  i1 = i0 + 1;
  if (i0 < 0) i0 = 0;
  if (i1 > src_len - 1) i1 = src_len - 1;
}
}  // namespace

Tensor BilinearUpsample2x::forward(const Tensor& x, bool /*train*/) {
  in_h_ = x.h();
  in_w_ = x.w();
  const int oh = in_h_ * 2, ow = in_w_ * 2;
  Tensor y(x.n(), x.c(), oh, ow);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.plane(n, c);
      double* dst = y.plane(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        int y0, y1;
        double wy;
        bilerp_coeff(oy, in_h_, y0, y1, wy);
        for (int ox = 0; ox < ow; ++ox) {
          int x0, x1;
          double wx;
          bilerp_coeff(ox, in_w_, x0, x1, wx);
          double v00 = src[static_cast<size_t>(y0) * in_w_ + x0];
          double v01 = src[static_cast<size_t>(y0) * in_w_ + x1];
          double v10 = src[static_cast<size_t>(y1) * in_w_ + x0];
          double v11 = src[static_cast<size_t>(y1) * in_w_ + x1];
          dst[static_cast<size_t>(oy) * ow + ox] =
              (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        }
      }
    }
  }
  return y;
}

Tensor BilinearUpsample2x::backward(const Tensor& gout) {
  const int oh = gout.h(), ow = gout.w();
  Tensor gx(gout.n(), gout.c(), in_h_, in_w_);
  for (int n = 0; n < gout.n(); ++n) {
    for (int c = 0; c < gout.c(); ++c) {
      const double* gy = gout.plane(n, c);
      double* gsrc = gx.plane(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        int y0, y1;
        double wy;
        bilerp_coeff(oy, in_h_, y0, y1, wy);
        for (int ox = 0; ox < ow; ++ox) {
          int x0, x1;
          double wx;
          bilerp_coeff(ox, in_w_, x0, x1, wx);
          const double g = gy[static_cast<size_t>(oy) * ow + ox];
          gsrc[static_cast<size_t>(y0) * in_w_ + x0] += (1 - wy) * (1 - wx) * g;
          gsrc[static_cast<size_t>(y0) * in_w_ + x1] += (1 - wy) * wx * g;
          gsrc[static_cast<size_t>(y1) * in_w_ + x0] += wy * (1 - wx) * g;
          gsrc[static_cast<size_t>(y1) * in_w_ + x1] += wy * wx * g;
        }
      }
    }
  }
  return gx;
}

// ---------------- MixedDepthwiseConv ----------------

MixedDepthwiseConv::MixedDepthwiseConv(int channels, std::vector<int> kernel_sizes, int stride,
                                       bool bias, std::string name)
    : channels_(channels), stride_(stride) {
  if (kernel_sizes.empty()) throw std::invalid_argument(name + ": empty kernel size list");
  const int g = static_cast<int>(kernel_sizes.size());
  if (channels < g) throw std::invalid_argument(name + ": fewer channels than kernel groups");
  const int base = channels / g;
  const int rem = channels - base * g;
  for (int i = 0; i < g; ++i) {
    int k = kernel_sizes[i];
    if (k % 2 == 0) throw std::invalid_argument(name + ": even kernel size " + std::to_string(k));
    int ch = base + (i == 0 ? rem : 0);
    group_ch_.push_back(ch);
    convs_.push_back(std::make_unique<Conv2d>(ch, ch, k, stride, 1, ch, bias,
                                              name + ".k" + std::to_string(k)));
  }
}

void MixedDepthwiseConv::init_he(Rng& rng) {
  for (auto& c : convs_) c->init_he(rng);
}

void MixedDepthwiseConv::collect_params(std::vector<Param*>& out) {
  for (auto& c : convs_) c->collect_params(out);
}

Tensor MixedDepthwiseConv::forward(const Tensor& x, bool train) {
  if (x.c() != channels_) throw std::invalid_argument("MixedDepthwiseConv: channel mismatch");
  std::vector<Tensor> parts = split_channels(x, group_ch_);
  std::vector<Tensor> outs;
  outs.reserve(parts.size());
  for (size_t g = 0; g < parts.size(); ++g) outs.push_back(convs_[g]->forward(parts[g], train));
  std::vector<const Tensor*> ptrs;
  for (const auto& t : outs) ptrs.push_back(&t);
  return concat_channels(ptrs);
}

Tensor MixedDepthwiseConv::backward(const Tensor& gout) {
  std::vector<Tensor> gparts = split_channels(gout, group_ch_);
  std::vector<Tensor> gins;
  gins.reserve(gparts.size());
  for (size_t g = 0; g < gparts.size(); ++g) gins.push_back(convs_[g]->backward(gparts[g]));
  std::vector<const Tensor*> ptrs;
  for (const auto& t : gins) ptrs.push_back(&t);
  return concat_channels(ptrs);
}

// ---------------- SELayer ----------------

SELayer::SELayer(int channels, int reduction, std::string name)
    : channels_(channels), reduction_(reduction) {
  if (reduction > channels) {
    throw std::invalid_argument(name + ": reduction " + std::to_string(reduction) +
                                " exceeds channels " + std::to_string(channels));
  }
  const int mid = channels / reduction;
  fc1_ = std::make_unique<Linear>(channels, mid, name + ".fc1");
  fc2_ = std::make_unique<Linear>(mid, channels, name + ".fc2");
  relu_ = std::make_unique<ReLU>();
  sig_ = std::make_unique<SigmoidLayer>();
}

void SELayer::init_he(Rng& rng) {
  fc1_->init_he(rng);
  fc2_->init_he(rng);
}

void SELayer::collect_params(std::vector<Param*>& out) {
  fc1_->collect_params(out);
  fc2_->collect_params(out);
}

Tensor SELayer::forward(const Tensor& x, bool train) {
  cached_x_ = x;
  GlobalAvgPool gap;
  Tensor s = gap.forward(x, train);
  Tensor g = sig_->forward(fc2_->forward(relu_->forward(fc1_->forward(s, train), train), train), train);
  cached_gate_ = g;

  Tensor y = Tensor::zeros_like(x);
  const size_t plane = static_cast<size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < channels_; ++c) {
      const double gv = g.at(n, c, 0, 0);
      const double* px = x.plane(n, c);
      double* py = y.plane(n, c);
      for (size_t i = 0; i < plane; ++i) py[i] = px[i] * gv;
    }
  }
  return y;
}

Tensor SELayer::backward(const Tensor& gout) {
  const Tensor& x = cached_x_;
  const size_t plane = static_cast<size_t>(x.h()) * x.w();

  // Gate path: dL/dgate_c = sum_hw gout * x.
  Tensor ggate(x.n(), channels_, 1, 1);
  Tensor gx = Tensor::zeros_like(x);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < channels_; ++c) {
      const double gv = cached_gate_.at(n, c, 0, 0);
      const double* po = gout.plane(n, c);
      const double* px = x.plane(n, c);
      double* pgx = gx.plane(n, c);
      double s = 0.0;
      for (size_t i = 0; i < plane; ++i) {
        s += po[i] * px[i];
        pgx[i] = po[i] * gv;
      }
      ggate.at(n, c, 0, 0) = s;
    }
  }

  Tensor gsq = fc1_->backward(relu_->backward(fc2_->backward(sig_->backward(ggate))));

  // Squeeze path spreads evenly over the pooled window.
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < channels_; ++c) {
      const double g = gsq.at(n, c, 0, 0) / static_cast<double>(plane);
      double* pgx = gx.plane(n, c);
      for (size_t i = 0; i < plane; ++i) pgx[i] += g;
    }
  }
  return gx;
}

// ---------------- ConvSet ----------------

ConvSet::ConvSet(int in_ch, int out_ch, int ksize, int stride, int dilation, std::string name) {
  // No conv bias: batch normalization absorbs any uniform channel shift.
  conv_ = std::make_unique<Conv2d>(in_ch, out_ch, ksize, stride, dilation, 1, false, name + ".conv");
  bn_ = std::make_unique<BatchNorm2d>(out_ch, 0.1, 1e-5, name + ".bn");
  relu_ = std::make_unique<ReLU>();
}

void ConvSet::init_he(Rng& rng) { conv_->init_he(rng); }

void ConvSet::collect_params(std::vector<Param*>& out) {
  conv_->collect_params(out);
  bn_->collect_params(out);
}

void ConvSet::collect_buffers(std::vector<Buffer*>& out) { bn_->collect_buffers(out); }

Tensor ConvSet::forward(const Tensor& x, bool train) {
  return relu_->forward(bn_->forward(conv_->forward(x, train), train), train);
}

Tensor ConvSet::backward(const Tensor& gout) {
  return conv_->backward(bn_->backward(relu_->backward(gout)));
}

// ---------------- Sequential ----------------

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor t = x;
  for (auto& m : mods_) t = m->forward(t, train);
  return t;
}

Tensor Sequential::backward(const Tensor& gout) {
  Tensor g = gout;
  for (auto it = mods_.rbegin(); it != mods_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (auto& m : mods_) m->collect_params(out);
}

void Sequential::collect_buffers(std::vector<Buffer*>& out) {
  for (auto& m : mods_) m->collect_buffers(out);
}

// ---------------- free helpers ----------------

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Tensor& first = *parts[0];
  int total_c = 0;
  for (const Tensor* t : parts) {
    if (t->n() != first.n() || t->h() != first.h() || t->w() != first.w()) {
      throw std::invalid_argument("concat_channels: spatial/batch mismatch " + t->shape_str() +
                                  " vs " + first.shape_str());
    }
    total_c += t->c();
  }
  Tensor y(first.n(), total_c, first.h(), first.w());
  const size_t plane = static_cast<size_t>(first.h()) * first.w();
  for (int n = 0; n < first.n(); ++n) {
    int c0 = 0;
    for (const Tensor* t : parts) {
      std::memcpy(y.plane(n, c0), t->plane(n, 0), sizeof(double) * plane * t->c());
      c0 += t->c();
    }
  }
  return y;
}

std::vector<Tensor> split_channels(const Tensor& whole, const std::vector<int>& channels) {
  int total = 0;
  for (int c : channels) total += c;
  if (total != whole.c()) throw std::invalid_argument("split_channels: channel sum mismatch");
  std::vector<Tensor> parts;
  const size_t plane = static_cast<size_t>(whole.h()) * whole.w();
  int c0 = 0;
  for (int c : channels) {
    Tensor t(whole.n(), c, whole.h(), whole.w());
    for (int n = 0; n < whole.n(); ++n) {
      std::memcpy(t.plane(n, 0), whole.plane(n, c0), sizeof(double) * plane * c);
    }
    parts.push_back(std::move(t));
    c0 += c;
  }
  return parts;
}

Tensor mul_broadcast_map(const Tensor& features, const Tensor& map1) {
  if (map1.c() != 1 || map1.n() != features.n() || map1.h() != features.h() ||
      map1.w() != features.w()) {
    throw std::invalid_argument("mul_broadcast_map: attention map shape " + map1.shape_str() +
                                " incompatible with features " + features.shape_str());
  }
  Tensor y = features;
  const size_t plane = static_cast<size_t>(features.h()) * features.w();
  for (int n = 0; n < features.n(); ++n) {
    const double* m = map1.plane(n, 0);
    for (int c = 0; c < features.c(); ++c) {
      double* p = y.plane(n, c);
      for (size_t i = 0; i < plane; ++i) p[i] *= m[i];
    }
  }
  return y;
}

}  // namespace pecad::nn
