#pragma once

#include <limits>

#include "progrow/nn/module.hpp"

namespace progrow::nn {

// Affine map over the last dimension: y = x W^T + b, W is (out, in).
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool bias = true)
      : in_(in), out_(out), has_bias_(bias), weight_({out, in}), weight_grad_({out, in}), bias_({bias ? out : 0}), bias_grad_(bias_.shape()) {}

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  void reset(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    fill_uniform(weight_, rng, bound);
    fill_uniform(bias_, rng, bound);
  }

  // Xavier-uniform weights with zero bias, the usual choice inside
  // transformer encoders.
  void reset_xavier(Rng& rng) {
    fill_uniform(weight_, rng, std::sqrt(6.0 / static_cast<double>(in_ + out_)));
    bias_.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.empty() || x.shape().back() != in_)
      throw ShapeError("linear: expected last dim " + std::to_string(in_) + ", got " + shape_str(x.shape()));
    input_ = x;
    const std::size_t rows = x.size() / in_;
    Shape ys = x.shape();
    ys.back() = out_;
    Tensor<T> y(ys);
    auto ym = as_mat(y.data(), rows, out_);
    ym.noalias() = as_mat(x.data(), rows, in_) * as_mat(weight_.data(), out_, in_).transpose();
    if (has_bias_) ym.rowwise() += as_mat(bias_.data(), 1, out_).row(0);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t rows = gy.size() / out_;
    auto gym = as_mat(gy.data(), rows, out_);
    as_mat(weight_grad_.data(), out_, in_).noalias() += gym.transpose() * as_mat(input_.data(), rows, in_);
    if (has_bias_) as_mat(bias_grad_.data(), 1, out_).noalias() += gym.colwise().sum();
    Tensor<T> gx(input_.shape());
    as_mat(gx.data(), rows, in_).noalias() = gym * as_mat(weight_.data(), out_, in_);
    return gx;
  }

  void collect(Collector<T>& c, const std::string& prefix) {
    c.param(join(prefix, "weight"), weight_, weight_grad_);
    if (has_bias_) c.param(join(prefix, "bias"), bias_, bias_grad_);
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  bool has_bias_ = true;
  Tensor<T> weight_, weight_grad_, bias_, bias_grad_;
  Tensor<T> input_;
};

template <class T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T{}) {
        y[i] = x[i];
        mask_[i] = 1;
      } else if (std::isnan(x[i])) {
        y[i] = x[i];  // keep NaN visible downstream
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = mask_[i] ? gy[i] : T{};
    return gx;
  }

 private:
  std::vector<unsigned char> mask_;
};

// Exact (erf-based) GELU.
template <class T>
class GELU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    input_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx(gy.shape());
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const double v = input_[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      gx[i] = static_cast<T>(gy[i] * (cdf + v * pdf));
    }
    return gx;
  }

 private:
  Tensor<T> input_;
};

template <class T>
class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding) : k_(kernel), s_(stride), p_(padding) {}

  Tensor<T> forward(const Tensor<T>& x) {
    require_rank(x, 4, "maxpool2d");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h + 2 * p_ < k_ || w + 2 * p_ < k_) throw ShapeError("maxpool2d: input smaller than window " + shape_str(x.shape()));
    const std::size_t oh = (h + 2 * p_ - k_) / s_ + 1, ow = (w + 2 * p_ - k_) / s_ + 1;
    in_shape_ = x.shape();
    Tensor<T> y({n, c, oh, ow});
    argmax_.assign(y.size(), 0);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const T* src = x.data() + plane * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = 0;
          for (std::size_t ky = 0; ky < k_; ++ky)
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * s_ + ky) - static_cast<std::ptrdiff_t>(p_);
              const auto ix = static_cast<std::ptrdiff_t>(ox * s_ + kx) - static_cast<std::ptrdiff_t>(p_);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
              if (src[idx] > best) {
                best = src[idx];
                best_i = idx;
              }
            }
          const std::size_t o = (plane * oh + oy) * ow + ox;
          y[o] = best;
          argmax_[o] = plane * h * w + best_i;
        }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx(in_shape_);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax_[i]] += gy[i];
    return gx;
  }

 private:
  std::size_t k_ = 3, s_ = 2, p_ = 1;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

// NCHW -> (N, C) mean over spatial positions.
template <class T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    require_rank(x, 4, "global_avg_pool");
    in_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
      T s{};
      for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
      y[i] = s / static_cast<T>(hw);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx(in_shape_);
    const std::size_t hw = in_shape_[2] * in_shape_[3];
    for (std::size_t i = 0; i < gy.size(); ++i)
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] = gy[i] / static_cast<T>(hw);
    return gx;
  }

 private:
  Shape in_shape_;
};

}  // namespace progrow::nn
