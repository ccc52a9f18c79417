#pragma once

#include "progrow/nn/module.hpp"

namespace progrow::nn {

// Batch normalization over (N, H, W) per channel. Training mode uses batch
// statistics and updates the running estimates; evaluation mode uses the
// running estimates and is a fixed affine map.
template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : channels_(channels),
        momentum_(momentum),
        eps_(eps),
        gamma_({channels}, T{1}),
        gamma_grad_({channels}),
        beta_({channels}),
        beta_grad_({channels}),
        running_mean_({channels}),
        running_var_({channels}, T{1}) {}

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }

  void reset(bool zero_gamma = false) {
    gamma_.fill(zero_gamma ? T{0} : T{1});
    beta_.zero();
    running_mean_.zero();
    running_var_.fill(T{1});
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    require_rank(x, 4, "batchnorm2d");
    if (x.dim(1) != channels_) throw ShapeError("batchnorm2d: channel mismatch " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3), m = n * hw;
    train_ = train;
    Tensor<T> y(x.shape());
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(channels_, T{});
    for (std::size_t c = 0; c < channels_; ++c) {
      T mean, var;
      if (train) {
        double s = 0, ss = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const T* p = x.data() + (b * channels_ + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) s += p[i];
        }
        const double mu = s / static_cast<double>(m);
        for (std::size_t b = 0; b < n; ++b) {
          const T* p = x.data() + (b * channels_ + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mu) * (p[i] - mu);
        }
        mean = static_cast<T>(mu);
        var = static_cast<T>(ss / static_cast<double>(m));
        const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : ss;
        running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mu);
        running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps_));
      inv_std_[c] = inv;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const T xh = (x[off + i] - mean) * inv;
          xhat_[off + i] = xh;
          y[off + i] = gamma_[c] * xh + beta_[c];
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t n = gy.dim(0), hw = gy.dim(2) * gy.dim(3);
    const T m = static_cast<T>(n * hw);
    Tensor<T> gx(gy.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      T sum_g{}, sum_gx{};
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_g += gy[off + i];
          sum_gx += gy[off + i] * xhat_[off + i];
        }
      }
      gamma_grad_[c] += sum_gx;
      beta_grad_[c] += sum_g;
      const T scale = gamma_[c] * inv_std_[c];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          gx[off + i] = train_ ? scale * (gy[off + i] - sum_g / m - xhat_[off + i] * sum_gx / m) : scale * gy[off + i];
        }
      }
    }
    return gx;
  }

  void collect(Collector<T>& c, const std::string& prefix) {
    c.param(join(prefix, "weight"), gamma_, gamma_grad_);
    c.param(join(prefix, "bias"), beta_, beta_grad_);
    c.buffer(join(prefix, "running_mean"), running_mean_);
    c.buffer(join(prefix, "running_var"), running_var_);
  }

 private:
  std::size_t channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  Tensor<T> gamma_, gamma_grad_, beta_, beta_grad_, running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool train_ = false;
};

// Layer normalization over the last dimension.
template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim, double eps = 1e-6)
      : dim_(dim), eps_(eps), gamma_({dim}, T{1}), gamma_grad_({dim}), beta_({dim}), beta_grad_({dim}) {}

  void reset() {
    gamma_.fill(T{1});
    beta_.zero();
  }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.empty() || x.shape().back() != dim_) throw ShapeError("layernorm: last dim mismatch " + shape_str(x.shape()));
    const std::size_t rows = x.size() / dim_;
    Tensor<T> y(x.shape());
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(rows, T{});
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = x.data() + r * dim_;
      double s = 0, ss = 0;
      for (std::size_t i = 0; i < dim_; ++i) s += p[i];
      const double mu = s / static_cast<double>(dim_);
      for (std::size_t i = 0; i < dim_; ++i) ss += (p[i] - mu) * (p[i] - mu);
      const T inv = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(dim_) + eps_));
      inv_std_[r] = inv;
      for (std::size_t i = 0; i < dim_; ++i) {
        const T xh = static_cast<T>(p[i] - mu) * inv;
        xhat_[r * dim_ + i] = xh;
        y[r * dim_ + i] = gamma_[i] * xh + beta_[i];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t rows = gy.size() / dim_;
    Tensor<T> gx(gy.shape());
    const T d = static_cast<T>(dim_);
    for (std::size_t r = 0; r < rows; ++r) {
      T sum_g{}, sum_gx{};
      for (std::size_t i = 0; i < dim_; ++i) {
        const T g = gy[r * dim_ + i];
        const T xh = xhat_[r * dim_ + i];
        gamma_grad_[i] += g * xh;
        beta_grad_[i] += g;
        sum_g += g * gamma_[i];
        sum_gx += g * gamma_[i] * xh;
      }
      for (std::size_t i = 0; i < dim_; ++i) {
        const T g = gy[r * dim_ + i] * gamma_[i];
        gx[r * dim_ + i] = inv_std_[r] * (g - sum_g / d - xhat_[r * dim_ + i] * sum_gx / d);
      }
    }
    return gx;
  }

  void collect(Collector<T>& c, const std::string& prefix) {
    c.param(join(prefix, "weight"), gamma_, gamma_grad_);
    c.param(join(prefix, "bias"), beta_, beta_grad_);
  }

 private:
  std::size_t dim_ = 0;
  double eps_ = 1e-6;
  Tensor<T> gamma_, gamma_grad_, beta_, beta_grad_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

}  // namespace progrow::nn
