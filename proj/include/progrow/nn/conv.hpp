#pragma once

#include "progrow/nn/module.hpp"

namespace progrow::nn {

struct ConvGeometry {
  std::size_t in_channels, out_channels, kernel, stride, padding;

  std::size_t out_extent(std::size_t in) const {
    if (in + 2 * padding < kernel)
      throw ShapeError("conv: input extent " + std::to_string(in) + " smaller than kernel " + std::to_string(kernel));
    return (in + 2 * padding - kernel) / stride + 1;
  }
};

namespace detail {

template <class T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t oh,
            std::size_t ow, T* col) {
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix < static_cast<std::ptrdiff_t>(w);
            row[y * ow + x] = inside ? img[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : T{};
          }
        }
      }
}

template <class T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t oh,
            std::size_t ow, T* img) {
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            img[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[y * ow + x];
          }
        }
      }
}

}  // namespace detail

// 2-D convolution over NCHW input, lowered to GEMM through im2col.
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ConvGeometry g, bool bias)
      : geom_(g),
        has_bias_(bias),
        weight_({g.out_channels, g.in_channels, g.kernel, g.kernel}),
        weight_grad_(weight_.shape()),
        bias_({bias ? g.out_channels : 0}),
        bias_grad_(bias_.shape()) {}

  const ConvGeometry& geometry() const { return geom_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  // Fan-in scaled normal init (He et al.) for rectifier networks.
  void reset(Rng& rng) {
    const double fan_in = static_cast<double>(geom_.in_channels * geom_.kernel * geom_.kernel);
    fill_normal(weight_, rng, std::sqrt(2.0 / fan_in));
    bias_.zero();
  }

  // Uniform fan-in init, used where the conv acts as a linear embedding.
  void reset_linear(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(geom_.in_channels * geom_.kernel * geom_.kernel));
    fill_uniform(weight_, rng, bound);
    fill_uniform(bias_, rng, bound);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    require_rank(x, 4, "conv2d");
    if (x.dim(1) != geom_.in_channels)
      throw ShapeError("conv2d: expected " + std::to_string(geom_.in_channels) + " channels, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = geom_.out_extent(h), ow = geom_.out_extent(w);
    input_ = x;
    Tensor<T> y({n, geom_.out_channels, oh, ow});
    const std::size_t kk = geom_.in_channels * geom_.kernel * geom_.kernel;
    std::vector<T> col(kk * oh * ow);
    auto wm = as_mat(weight_.data(), geom_.out_channels, kk);
    for (std::size_t b = 0; b < n; ++b) {
      const T* img = x.data() + b * geom_.in_channels * h * w;
      const T* src = img;
      if (!is_pointwise()) {
        detail::im2col(img, geom_.in_channels, h, w, geom_, oh, ow, col.data());
        src = col.data();
      }
      auto ym = as_mat(y.data() + b * geom_.out_channels * oh * ow, geom_.out_channels, oh * ow);
      ym.noalias() = wm * as_mat(src, kk, oh * ow);
      if (has_bias_)
        for (std::size_t c = 0; c < geom_.out_channels; ++c) ym.row(static_cast<Eigen::Index>(c)).array() += bias_[c];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const std::size_t oh = gy.dim(2), ow = gy.dim(3);
    const std::size_t kk = geom_.in_channels * geom_.kernel * geom_.kernel;
    Tensor<T> gx(input_.shape());
    std::vector<T> col(kk * oh * ow), gcol(kk * oh * ow);
    auto wm = as_mat(weight_.data(), geom_.out_channels, kk);
    auto gwm = as_mat(weight_grad_.data(), geom_.out_channels, kk);
    for (std::size_t b = 0; b < n; ++b) {
      const T* img = input_.data() + b * geom_.in_channels * h * w;
      auto gym = as_mat(gy.data() + b * geom_.out_channels * oh * ow, geom_.out_channels, oh * ow);
      T* gimg = gx.data() + b * geom_.in_channels * h * w;
      if (is_pointwise()) {
        gwm.noalias() += gym * as_mat(img, kk, oh * ow).transpose();
        as_mat(gimg, kk, oh * ow).noalias() = wm.transpose() * gym;
      } else {
        detail::im2col(img, geom_.in_channels, h, w, geom_, oh, ow, col.data());
        gwm.noalias() += gym * as_mat(col.data(), kk, oh * ow).transpose();
        as_mat(gcol.data(), kk, oh * ow).noalias() = wm.transpose() * gym;
        detail::col2im(gcol.data(), geom_.in_channels, h, w, geom_, oh, ow, gimg);
      }
      if (has_bias_)
        for (std::size_t c = 0; c < geom_.out_channels; ++c) bias_grad_[c] += gym.row(static_cast<Eigen::Index>(c)).sum();
    }
    return gx;
  }

  void collect(Collector<T>& c, const std::string& prefix) {
    c.param(join(prefix, "weight"), weight_, weight_grad_);
    if (has_bias_) c.param(join(prefix, "bias"), bias_, bias_grad_);
  }

 private:
  bool is_pointwise() const { return geom_.kernel == 1 && geom_.stride == 1 && geom_.padding == 0; }

  ConvGeometry geom_{};
  bool has_bias_ = false;
  Tensor<T> weight_, weight_grad_, bias_, bias_grad_;
  Tensor<T> input_;
};

}  // namespace progrow::nn
