#pragma once

#include "progrow/nn/layers.hpp"

namespace progrow::nn {

// Multi-head scaled dot-product self-attention over (batch, tokens, dim).
template <class T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t dim, std::size_t heads) : dim_(dim), heads_(heads), qkv_(dim, 3 * dim), proj_(dim, dim) {
    if (heads == 0 || dim % heads != 0)
      throw std::invalid_argument("attention: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }

  void reset(Rng& rng) {
    qkv_.reset_xavier(rng);
    proj_.reset_xavier(rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    require_rank(x, 3, "attention");
    const std::size_t b = x.dim(0), t = x.dim(1), dh = dim_ / heads_;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    qkv_out_ = qkv_.forward(x);
    probs_ = Tensor<T>({b, heads_, t, t});
    Tensor<T> ctx({b, t, dim_});
    for (std::size_t n = 0; n < b; ++n) {
      auto all = as_mat(qkv_out_.data() + n * t * 3 * dim_, t, 3 * dim_);
      auto out = as_mat(ctx.data() + n * t * dim_, t, dim_);
      for (std::size_t h = 0; h < heads_; ++h) {
        const auto hi = static_cast<Eigen::Index>(h * dh), d = static_cast<Eigen::Index>(dh), ti = static_cast<Eigen::Index>(t);
        auto p = as_mat(probs_.data() + (n * heads_ + h) * t * t, t, t);
        p.noalias() = all.block(0, hi, ti, d) * all.block(0, static_cast<Eigen::Index>(dim_) + hi, ti, d).transpose();
        p *= scale;
        for (Eigen::Index r = 0; r < ti; ++r) {
          const T mx = p.row(r).maxCoeff();
          p.row(r) = (p.row(r).array() - mx).exp();
          p.row(r) /= p.row(r).sum();
        }
        out.block(0, hi, ti, d).noalias() = p * all.block(0, 2 * static_cast<Eigen::Index>(dim_) + hi, ti, d);
      }
    }
    return proj_.forward(ctx);
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gctx = proj_.backward(gy);
    const std::size_t b = gctx.dim(0), t = gctx.dim(1), dh = dim_ / heads_;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<T> gqkv(qkv_out_.shape());
    RowMat<T> gp, gs;
    for (std::size_t n = 0; n < b; ++n) {
      auto all = as_mat(qkv_out_.data() + n * t * 3 * dim_, t, 3 * dim_);
      auto gall = as_mat(gqkv.data() + n * t * 3 * dim_, t, 3 * dim_);
      auto go = as_mat(gctx.data() + n * t * dim_, t, dim_);
      for (std::size_t h = 0; h < heads_; ++h) {
        const auto hi = static_cast<Eigen::Index>(h * dh), d = static_cast<Eigen::Index>(dh), ti = static_cast<Eigen::Index>(t);
        const auto D = static_cast<Eigen::Index>(dim_);
        auto p = as_mat(probs_.data() + (n * heads_ + h) * t * t, t, t);
        auto q = all.block(0, hi, ti, d);
        auto k = all.block(0, D + hi, ti, d);
        auto v = all.block(0, 2 * D + hi, ti, d);
        auto god = go.block(0, hi, ti, d);
        gp.noalias() = god * v.transpose();
        gall.block(0, 2 * D + hi, ti, d).noalias() = p.transpose() * god;
        gs = p.array() * (gp.array().colwise() - (gp.array() * p.array()).rowwise().sum());
        gs *= scale;
        gall.block(0, hi, ti, d).noalias() = gs * k;
        gall.block(0, D + hi, ti, d).noalias() = gs.transpose() * q;
      }
    }
    return qkv_.backward(gqkv);
  }

  void collect(Collector<T>& c, const std::string& prefix) {
    qkv_.collect(c, join(prefix, "qkv"));
    proj_.collect(c, join(prefix, "proj"));
  }

 private:
  std::size_t dim_ = 0, heads_ = 1;
  Linear<T> qkv_, proj_;
  Tensor<T> qkv_out_, probs_;
};

}  // namespace progrow::nn
