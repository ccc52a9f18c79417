#pragma once

#include <memory>

#include "progrow/backbone/spec.hpp"
#include "progrow/nn/layers.hpp"
#include "progrow/nn/norm.hpp"

namespace progrow {

// Which classifier sits on top of the active depth. `Progressive` is the
// temporary stage head; `Standard` is the preset's own final classifier.
enum class HeadKind { Progressive, Standard };
NLOHMANN_JSON_SERIALIZE_ENUM(HeadKind, {{HeadKind::Progressive, "progressive"}, {HeadKind::Standard, "standard"}})

inline constexpr std::size_t kProgressiveEmbedWidth = 256;

template <class T>
class Head {
 public:
  virtual ~Head() = default;
  virtual Tensor<T> forward(const Tensor<T>& features, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& glogits) = 0;
  virtual void collect(nn::Collector<T>& c, const std::string& prefix) = 0;
  virtual void reset(Rng& rng) = 0;
};

// Global average pool -> 1x1 projection to a fixed embedding width -> ReLU ->
// affine classifier. The 1x1 conv on a pooled 1x1 map is a linear map.
template <class T>
class ProgressiveHead final : public Head<T> {
 public:
  ProgressiveHead(std::size_t in_width, std::size_t num_classes, std::size_t embed_width = kProgressiveEmbedWidth)
      : proj_(in_width, embed_width), fc_(embed_width, num_classes) {}

  void reset(Rng& rng) override {
    proj_.reset(rng);
    fc_.reset(rng);
  }
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    return fc_.forward(relu_.forward(proj_.forward(pool_.forward(x))));
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    return pool_.backward(proj_.backward(relu_.backward(fc_.backward(g))));
  }
  void collect(nn::Collector<T>& c, const std::string& p) override {
    proj_.collect(c, nn::join(p, "proj"));
    fc_.collect(c, nn::join(p, "fc"));
  }
  nn::Linear<T>& classifier() { return fc_; }

 private:
  nn::GlobalAvgPool<T> pool_;
  nn::Linear<T> proj_;
  nn::ReLU<T> relu_;
  nn::Linear<T> fc_;
};

// Global average pool -> affine classifier (standard residual-network head).
template <class T>
class PooledLinearHead final : public Head<T> {
 public:
  PooledLinearHead(std::size_t in_width, std::size_t num_classes) : fc_(in_width, num_classes) {}
  void reset(Rng& rng) override { fc_.reset(rng); }
  Tensor<T> forward(const Tensor<T>& x, bool) override { return fc_.forward(pool_.forward(x)); }
  Tensor<T> backward(const Tensor<T>& g) override { return pool_.backward(fc_.backward(g)); }
  void collect(nn::Collector<T>& c, const std::string& p) override { fc_.collect(c, nn::join(p, "fc")); }
  nn::Linear<T>& classifier() { return fc_; }

 private:
  nn::GlobalAvgPool<T> pool_;
  nn::Linear<T> fc_;
};

// Class token -> layer norm -> affine classifier (transformer head, used at
// every stage).
template <class T>
class ClassTokenHead final : public Head<T> {
 public:
  ClassTokenHead(std::size_t dim, std::size_t num_classes) : ln_(dim), fc_(dim, num_classes) {}
  void reset(Rng& rng) override {
    ln_.reset();
    fc_.reset(rng);
  }
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    nn::require_rank(x, 3, "class token head");
    in_shape_ = x.shape();
    const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    Tensor<T> cls({b, d});
    for (std::size_t n = 0; n < b; ++n) std::copy_n(x.data() + n * t * d, d, cls.data() + n * d);
    return fc_.forward(ln_.forward(cls));
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    auto gcls = ln_.backward(fc_.backward(g));
    Tensor<T> gx(in_shape_);
    const std::size_t b = in_shape_[0], t = in_shape_[1], d = in_shape_[2];
    for (std::size_t n = 0; n < b; ++n) std::copy_n(gcls.data() + n * d, d, gx.data() + n * t * d);
    return gx;
  }
  void collect(nn::Collector<T>& c, const std::string& p) override {
    ln_.collect(c, nn::join(p, "norm"));
    fc_.collect(c, nn::join(p, "fc"));
  }
  nn::Linear<T>& classifier() { return fc_; }

 private:
  nn::LayerNorm<T> ln_;
  nn::Linear<T> fc_;
  Shape in_shape_;
};

template <class T>
std::unique_ptr<Head<T>> make_head(const BackboneSpec& spec, std::size_t active_blocks, HeadKind kind) {
  const std::size_t width = spec.block_out_width(active_blocks - 1);
  if (!is_residual(spec.family)) return std::make_unique<ClassTokenHead<T>>(width, spec.num_classes);
  if (kind == HeadKind::Progressive) return std::make_unique<ProgressiveHead<T>>(width, spec.num_classes);
  return std::make_unique<PooledLinearHead<T>>(width, spec.num_classes);
}

}  // namespace progrow
