#pragma once

#include <memory>

#include "progrow/backbone/spec.hpp"
#include "progrow/nn/conv.hpp"
#include "progrow/nn/layers.hpp"
#include "progrow/nn/norm.hpp"

namespace progrow {

// Always-active input stage that precedes block 1.
template <class T>
class Stem {
 public:
  virtual ~Stem() = default;
  virtual Tensor<T> forward(const Tensor<T>& images, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& gy) = 0;
  virtual void collect(nn::Collector<T>& c, const std::string& prefix) = 0;
  virtual void reset(Rng& rng) = 0;
};

template <class T>
class ConvStem final : public Stem<T> {
 public:
  ConvStem(std::size_t in_channels, const ConvStemSpec& s)
      : conv_({in_channels, s.out_channels, s.kernel, s.stride, s.kernel / 2}, false), bn_(s.out_channels), pool_(s.max_pool) {}

  void reset(Rng& rng) override {
    conv_.reset(rng);
    bn_.reset();
  }
  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    auto h = relu_.forward(bn_.forward(conv_.forward(x), train));
    return pool_ ? maxpool_.forward(h) : h;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    auto g = pool_ ? maxpool_.backward(gy) : gy;
    return conv_.backward(bn_.backward(relu_.backward(g)));
  }
  void collect(nn::Collector<T>& c, const std::string& p) override {
    conv_.collect(c, nn::join(p, "conv"));
    bn_.collect(c, nn::join(p, "bn"));
  }

 private:
  nn::Conv2d<T> conv_;
  nn::BatchNorm2d<T> bn_;
  nn::ReLU<T> relu_;
  bool pool_;
  nn::MaxPool2d<T> maxpool_{3, 2, 1};
};

// Patch embedding: strided conv projection of each patch, a learned class
// token prepended, learned positional encodings added. Output is
// (batch, 1 + patch_tokens, embed_dim) with the class token at position 0.
template <class T>
class PatchStem final : public Stem<T> {
 public:
  PatchStem(const InputShape& in, const PatchTokenizerSpec& tok)
      : tok_(tok),
        proj_({in.channels, tok.embed_dim, tok.patch_size, tok.stride, 0}, true),
        tokens_(tok.patch_tokens(in.height, in.width) + 1),
        cls_({tok.embed_dim}),
        cls_grad_({tok.embed_dim}),
        pos_({tokens_, tok.embed_dim}),
        pos_grad_({tokens_, tok.embed_dim}) {}

  std::size_t token_count() const { return tokens_; }

  void reset(Rng& rng) override {
    proj_.reset_linear(rng);
    nn::fill_normal(cls_, rng, 0.02);
    nn::fill_normal(pos_, rng, 0.02);
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    auto grid = proj_.forward(x);  // (B, D, gh, gw)
    const std::size_t b = grid.dim(0), d = grid.dim(1), p = grid.dim(2) * grid.dim(3);
    if (p + 1 != tokens_)
      throw ShapeError("patch stem: input " + shape_str(x.shape()) + " yields " + std::to_string(p) + " patches, expected " +
                       std::to_string(tokens_ - 1));
    Tensor<T> y({b, tokens_, d});
    for (std::size_t n = 0; n < b; ++n) {
      T* out = y.data() + n * tokens_ * d;
      for (std::size_t j = 0; j < d; ++j) out[j] = cls_[j] + pos_[j];
      const T* g = grid.data() + n * d * p;
      for (std::size_t t = 0; t < p; ++t)
        for (std::size_t j = 0; j < d; ++j) out[(t + 1) * d + j] = g[j * p + t] + pos_[(t + 1) * d + j];
    }
    grid_shape_ = grid.shape();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const std::size_t b = gy.dim(0), d = gy.dim(2), p = tokens_ - 1;
    Tensor<T> ggrid(grid_shape_);
    for (std::size_t n = 0; n < b; ++n) {
      const T* g = gy.data() + n * tokens_ * d;
      for (std::size_t i = 0; i < tokens_ * d; ++i) pos_grad_[i] += g[i];
      for (std::size_t j = 0; j < d; ++j) cls_grad_[j] += g[j];
      T* gg = ggrid.data() + n * d * p;
      for (std::size_t t = 0; t < p; ++t)
        for (std::size_t j = 0; j < d; ++j) gg[j * p + t] = g[(t + 1) * d + j];
    }
    return proj_.backward(ggrid);
  }

  void collect(nn::Collector<T>& c, const std::string& p) override {
    proj_.collect(c, nn::join(p, "patch_embed"));
    c.param(nn::join(p, "cls_token"), cls_, cls_grad_);
    c.param(nn::join(p, "pos_embed"), pos_, pos_grad_);
  }

 private:
  PatchTokenizerSpec tok_;
  nn::Conv2d<T> proj_;
  std::size_t tokens_;
  Tensor<T> cls_, cls_grad_, pos_, pos_grad_;
  Shape grid_shape_;
};

template <class T>
std::unique_ptr<Stem<T>> make_stem(const BackboneSpec& spec) {
  if (is_residual(spec.family)) return std::make_unique<ConvStem<T>>(spec.input_shape.channels, spec.conv_stem);
  return std::make_unique<PatchStem<T>>(spec.input_shape, spec.tokenizer);
}

// Token sequence for a batch under a tokenizer geometry: class token plus one
// token per (possibly overlapping) patch. Weights come from `rng`.
template <class T>
Tensor<T> tokenize(const Tensor<T>& images, const PatchTokenizerSpec& tok, Rng& rng) {
  nn::require_rank(images, 4, "tokenize");
  tok.validate();
  PatchStem<T> stem({images.dim(1), images.dim(2), images.dim(3)}, tok);
  stem.reset(rng);
  return stem.forward(images, false);
}

}  // namespace progrow
