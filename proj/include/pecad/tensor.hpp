#ifndef PECAD_TENSOR_HPP_
#define PECAD_TENSOR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pecad::nn {

/// Dense 4D array in NCHW order, double precision throughout.
/// Weight tensors reuse the same layout as (out_ch, in_ch_per_group, kh, kw);
/// vectors (biases, pooled features) live in the channel axis.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w)
      : n_(n), c_(c), h_(h), w_(w),
        data_(static_cast<size_t>(n) * c * h * w, 0.0) {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
      throw std::invalid_argument("Tensor: negative dimension");
    }
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.n_, t.c_, t.h_, t.w_); }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," +
           std::to_string(h_) + "," + std::to_string(w_) + ")";
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) { return data_[idx(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return data_[idx(n, c, h, w)]; }

  size_t idx(int n, int c, int h, int w) const {
    return ((static_cast<size_t>(n) * c_ + c) * h_ + h) * w_ + w;
  }

  /// Pointer to the start of one (n, c) plane.
  double* plane(int n, int c) { return data_.data() + idx(n, c, 0, 0); }
  const double* plane(int n, int c) const { return data_.data() + idx(n, c, 0, 0); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "-=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (!same_shape(o)) {
      throw std::invalid_argument(std::string("Tensor shape mismatch in ") + what +
                                  ": " + shape_str() + " vs " + o.shape_str());
    }
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

}  // namespace pecad::nn

#endif  // PECAD_TENSOR_HPP_
