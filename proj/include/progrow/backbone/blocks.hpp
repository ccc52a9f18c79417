#pragma once

#include <memory>
#include <optional>

#include "progrow/backbone/spec.hpp"
#include "progrow/nn/attention.hpp"
#include "progrow/nn/conv.hpp"
#include "progrow/nn/norm.hpp"

namespace progrow {

// One atomic unit of depth growth.
template <class T>
class Block {
 public:
  virtual ~Block() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& gy) = 0;
  virtual void collect(nn::Collector<T>& c, const std::string& prefix) = 0;
  virtual void reset(Rng& rng) = 0;
  virtual std::string kind() const = 0;
};

template <class T>
class Projection {
 public:
  Projection(std::size_t in, std::size_t out, std::size_t stride) : conv_({in, out, 1, stride, 0}, false), bn_(out) {}
  void reset(Rng& rng) {
    conv_.reset(rng);
    bn_.reset();
  }
  Tensor<T> forward(const Tensor<T>& x, bool train) { return bn_.forward(conv_.forward(x), train); }
  Tensor<T> backward(const Tensor<T>& g) { return conv_.backward(bn_.backward(g)); }
  void collect(nn::Collector<T>& c, const std::string& prefix) {
    conv_.collect(c, nn::join(prefix, "conv"));
    bn_.collect(c, nn::join(prefix, "bn"));
  }

 private:
  nn::Conv2d<T> conv_;
  nn::BatchNorm2d<T> bn_;
};

// 3x3 -> 3x3 residual block with an optional 1x1 projection shortcut.
template <class T>
class BasicBlock final : public Block<T> {
 public:
  BasicBlock(std::size_t in, std::size_t planes, std::size_t stride, bool zero_init_last)
      : conv1_({in, planes, 3, stride, 1}, false),
        bn1_(planes),
        conv2_({planes, planes, 3, 1, 1}, false),
        bn2_(planes),
        zero_init_last_(zero_init_last) {
    if (stride != 1 || in != planes) down_.emplace(in, planes, stride);
  }

  void reset(Rng& rng) override {
    conv1_.reset(rng);
    bn1_.reset();
    conv2_.reset(rng);
    bn2_.reset(zero_init_last_);
    if (down_) down_->reset(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    auto h = relu1_.forward(bn1_.forward(conv1_.forward(x), train));
    h = bn2_.forward(conv2_.forward(h), train);
    h += down_ ? down_->forward(x, train) : x;
    return relu_out_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    auto g = relu_out_.backward(gy);
    auto gx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
    gx += down_ ? down_->backward(g) : g;
    return gx;
  }

  void collect(nn::Collector<T>& c, const std::string& p) override {
    conv1_.collect(c, nn::join(p, "conv1"));
    bn1_.collect(c, nn::join(p, "bn1"));
    conv2_.collect(c, nn::join(p, "conv2"));
    bn2_.collect(c, nn::join(p, "bn2"));
    if (down_) down_->collect(c, nn::join(p, "downsample"));
  }

  std::string kind() const override { return down_ ? "basic+projection" : "basic"; }

 private:
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::ReLU<T> relu1_;
  nn::Conv2d<T> conv2_;
  nn::BatchNorm2d<T> bn2_;
  nn::ReLU<T> relu_out_;
  std::optional<Projection<T>> down_;
  bool zero_init_last_;
};

// 1x1 reduce -> 3x3 (strided) -> 1x1 expand residual block.
template <class T>
class Bottleneck final : public Block<T> {
 public:
  Bottleneck(std::size_t in, std::size_t planes, std::size_t stride, bool zero_init_last)
      : conv1_({in, planes, 1, 1, 0}, false),
        bn1_(planes),
        conv2_({planes, planes, 3, stride, 1}, false),
        bn2_(planes),
        conv3_({planes, planes * BackboneSpec::bottleneck_expansion, 1, 1, 0}, false),
        bn3_(planes * BackboneSpec::bottleneck_expansion),
        zero_init_last_(zero_init_last) {
    const std::size_t out = planes * BackboneSpec::bottleneck_expansion;
    if (stride != 1 || in != out) down_.emplace(in, out, stride);
  }

  void reset(Rng& rng) override {
    conv1_.reset(rng);
    bn1_.reset();
    conv2_.reset(rng);
    bn2_.reset();
    conv3_.reset(rng);
    bn3_.reset(zero_init_last_);
    if (down_) down_->reset(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    auto h = relu1_.forward(bn1_.forward(conv1_.forward(x), train));
    h = relu2_.forward(bn2_.forward(conv2_.forward(h), train));
    h = bn3_.forward(conv3_.forward(h), train);
    h += down_ ? down_->forward(x, train) : x;
    return relu_out_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    auto g = relu_out_.backward(gy);
    auto h = conv3_.backward(bn3_.backward(g));
    h = conv2_.backward(bn2_.backward(relu2_.backward(h)));
    auto gx = conv1_.backward(bn1_.backward(relu1_.backward(h)));
    gx += down_ ? down_->backward(g) : g;
    return gx;
  }

  void collect(nn::Collector<T>& c, const std::string& p) override {
    conv1_.collect(c, nn::join(p, "conv1"));
    bn1_.collect(c, nn::join(p, "bn1"));
    conv2_.collect(c, nn::join(p, "conv2"));
    bn2_.collect(c, nn::join(p, "bn2"));
    conv3_.collect(c, nn::join(p, "conv3"));
    bn3_.collect(c, nn::join(p, "bn3"));
    if (down_) down_->collect(c, nn::join(p, "downsample"));
  }

  std::string kind() const override { return down_ ? "bottleneck+projection" : "bottleneck"; }

 private:
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::ReLU<T> relu1_;
  nn::Conv2d<T> conv2_;
  nn::BatchNorm2d<T> bn2_;
  nn::ReLU<T> relu2_;
  nn::Conv2d<T> conv3_;
  nn::BatchNorm2d<T> bn3_;
  nn::ReLU<T> relu_out_;
  std::optional<Projection<T>> down_;
  bool zero_init_last_;
};

// Pre-norm transformer encoder layer: x + MHSA(LN(x)), then x + MLP(LN(x)).
template <class T>
class EncoderLayer final : public Block<T> {
 public:
  EncoderLayer(std::size_t dim, std::size_t heads, std::size_t mlp_dim)
      : ln1_(dim), attn_(dim, heads), ln2_(dim), fc1_(dim, mlp_dim), fc2_(mlp_dim, dim) {}

  void reset(Rng& rng) override {
    ln1_.reset();
    attn_.reset(rng);
    ln2_.reset();
    fc1_.reset_xavier(rng);
    fc2_.reset_xavier(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    nn::require_rank(x, 3, "encoder layer");
    auto h = attn_.forward(ln1_.forward(x));
    h += x;
    auto y = fc2_.forward(act_.forward(fc1_.forward(ln2_.forward(h))));
    y += h;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    auto gh = ln2_.backward(fc1_.backward(act_.backward(fc2_.backward(gy))));
    gh += gy;
    auto gx = ln1_.backward(attn_.backward(gh));
    gx += gh;
    return gx;
  }

  void collect(nn::Collector<T>& c, const std::string& p) override {
    ln1_.collect(c, nn::join(p, "ln1"));
    attn_.collect(c, nn::join(p, "attn"));
    ln2_.collect(c, nn::join(p, "ln2"));
    fc1_.collect(c, nn::join(p, "mlp.fc1"));
    fc2_.collect(c, nn::join(p, "mlp.fc2"));
  }

  std::string kind() const override { return "encoder"; }

 private:
  nn::LayerNorm<T> ln1_;
  nn::MultiHeadSelfAttention<T> attn_;
  nn::LayerNorm<T> ln2_;
  nn::Linear<T> fc1_;
  nn::GELU<T> act_;
  nn::Linear<T> fc2_;
};

template <class T>
std::unique_ptr<Block<T>> make_block(const BackboneSpec& spec, std::size_t i) {
  switch (spec.family) {
    case Family::ResidualBasic:
      return std::make_unique<BasicBlock<T>>(spec.block_in_width(i), spec.block_widths[i], spec.block_strides[i],
                                             spec.zero_init_residual);
    case Family::ResidualBottleneck:
      return std::make_unique<Bottleneck<T>>(spec.block_in_width(i), spec.block_widths[i], spec.block_strides[i],
                                             spec.zero_init_residual);
    case Family::TransformerEncoder:
      return std::make_unique<EncoderLayer<T>>(spec.tokenizer.embed_dim, spec.heads, spec.mlp_dim);
  }
  throw SpecError("unsupported family");
}

}  // namespace progrow
