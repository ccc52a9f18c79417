#pragma once

#include <memory>

#include "progrow/backbone/blocks.hpp"
#include "progrow/backbone/head.hpp"
#include "progrow/backbone/stem.hpp"
#include "progrow/partition.hpp"

namespace progrow {

// Stem plus the full ordered list of atomic blocks (b_1 .. b_N). Blocks that
// are not yet active still exist here but are never touched by a prefix
// network's forward or backward pass.
template <class T>
class OrderedBlockList {
 public:
  explicit OrderedBlockList(BackboneSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    stem_ = make_stem<T>(spec_);
    for (std::size_t i = 0; i < spec_.block_count; ++i) blocks_.push_back(make_block<T>(spec_, i));
  }

  const BackboneSpec& spec() const { return spec_; }
  std::size_t size() const { return blocks_.size(); }
  Stem<T>& stem() { return *stem_; }
  Block<T>& block(std::size_t i) { return *blocks_.at(i); }

  void reset_stem(std::uint64_t seed) {
    auto rng = stream(seed, "stem");
    stem_->reset(rng);
  }
  void reset_block(std::size_t i, std::uint64_t seed) {
    auto rng = stream(seed, "block", i);
    blocks_.at(i)->reset(rng);
  }
  void reset_all(std::uint64_t seed) {
    reset_stem(seed);
    for (std::size_t i = 0; i < blocks_.size(); ++i) reset_block(i, seed);
  }

  static std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i); }

 private:
  BackboneSpec spec_;
  std::unique_ptr<Stem<T>> stem_;
  std::vector<std::unique_ptr<Block<T>>> blocks_;
};

template <class T>
std::shared_ptr<OrderedBlockList<T>> build_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  auto blocks = std::make_shared<OrderedBlockList<T>>(spec);
  blocks->reset_all(seed);
  return blocks;
}

// Head used at stage k: the temporary progressive head before the last stage,
// `final_head` at stage K.
inline HeadKind head_for_stage(std::size_t stage, std::size_t stage_count, HeadKind final_head = HeadKind::Standard) {
  return stage == stage_count ? final_head : HeadKind::Progressive;
}

// Stem + blocks of stages 1..k + a classification head: the trainable unit at
// curriculum stage k.
template <class T>
class PrefixNetwork {
 public:
  PrefixNetwork(std::shared_ptr<OrderedBlockList<T>> blocks, StagePlan plan, std::size_t stage, HeadKind head_kind,
                std::uint64_t head_seed)
      : blocks_(std::move(blocks)), plan_(std::move(plan)), stage_(stage), head_kind_(head_kind) {
    if (plan_.block_count != blocks_->size())
      throw PartitionError("plan covers " + std::to_string(plan_.block_count) + " blocks but backbone has " +
                           std::to_string(blocks_->size()));
    active_ = plan_.active_blocks(stage_);
    head_ = make_head<T>(blocks_->spec(), active_, head_kind_);
    auto rng = stream(head_seed, "head", stage_);
    head_->reset(rng);
  }

  const BackboneSpec& spec() const { return blocks_->spec(); }
  const StagePlan& plan() const { return plan_; }
  std::size_t stage() const { return stage_; }
  std::size_t active_blocks() const { return active_; }
  HeadKind head_kind() const { return head_kind_; }
  OrderedBlockList<T>& blocks() { return *blocks_; }
  std::shared_ptr<OrderedBlockList<T>> shared_blocks() const { return blocks_; }
  Head<T>& head() { return *head_; }

  void check_input(const Tensor<T>& images) const {
    const auto& in = spec().input_shape;
    if (images.rank() != 4 || images.dim(1) != in.channels || images.dim(2) != in.height || images.dim(3) != in.width)
      throw ShapeError("network " + spec().name + " expects (B," + std::to_string(in.channels) + "," +
                       std::to_string(in.height) + "," + std::to_string(in.width) + ") input, got " + shape_str(images.shape()));
  }

  // Activation at the current cut point (output of block n_k).
  Tensor<T> features(const Tensor<T>& images, bool train) {
    check_input(images);
    auto h = blocks_->stem().forward(images, train);
    for (std::size_t i = 0; i < active_; ++i) h = blocks_->block(i).forward(h, train);
    return h;
  }

  Tensor<T> forward(const Tensor<T>& images, bool train) { return head_->forward(features(images, train), train); }

  Tensor<T> backward(const Tensor<T>& glogits) {
    auto g = head_->backward(glogits);
    for (std::size_t i = active_; i-- > 0;) g = blocks_->block(i).backward(g);
    return blocks_->stem().backward(g);
  }

  nn::Collector<T> collect() {
    nn::Collector<T> c;
    blocks_->stem().collect(c, "stem");
    for (std::size_t i = 0; i < active_; ++i) blocks_->block(i).collect(c, OrderedBlockList<T>::block_prefix(i));
    head_->collect(c, "head");
    return c;
  }

  std::size_t parameter_count() { return collect().parameter_count(); }

  void zero_grad() {
    for (auto& p : collect().params) p.grad->zero();
  }

 private:
  std::shared_ptr<OrderedBlockList<T>> blocks_;
  StagePlan plan_;
  std::size_t stage_;
  std::size_t active_;
  HeadKind head_kind_;
  std::unique_ptr<Head<T>> head_;
};

template <class T>
PrefixNetwork<T> build_prefix(std::shared_ptr<OrderedBlockList<T>> blocks, const StagePlan& plan, std::size_t stage,
                              HeadKind head_kind, std::uint64_t head_seed) {
  if (stage < 1 || stage > plan.stage_count)
    throw PartitionError("stage " + std::to_string(stage) + " outside 1.." + std::to_string(plan.stage_count));
  return PrefixNetwork<T>(std::move(blocks), plan, stage, head_kind, head_seed);
}

// Full network: single-stage plan with the preset's own classifier.
template <class T>
PrefixNetwork<T> build_full(std::shared_ptr<OrderedBlockList<T>> blocks, std::uint64_t head_seed) {
  const auto n = blocks->size();
  return PrefixNetwork<T>(std::move(blocks), make_plan(n, 1), 1, HeadKind::Standard, head_seed);
}

}  // namespace progrow
