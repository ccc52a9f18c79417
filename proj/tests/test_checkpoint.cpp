#include <gtest/gtest.h>

#include <filesystem>

#include "progrow/backbone/checkpoint.hpp"

using namespace progrow;

namespace {

PrefixNetwork<float> small_net(const std::string& preset_name, std::size_t stage, std::uint64_t seed) {
  const auto spec = preset(preset_name);
  auto blocks = build_backbone<float>(spec, seed);
  const auto plan = make_plan(spec.block_count, 2);
  return build_prefix(blocks, plan, stage, head_for_stage(stage, 2), seed);
}

}  // namespace

TEST(Checkpoint, EncodeDecodeRoundTripsEveryTensor) {
  for (const auto& name : {"tiny-resnet", "tiny-bottleneck", "tiny-vit"})
    for (std::size_t stage : {1, 2}) {
      auto net = small_net(name, stage, 4);
      const auto ck = capture(net, 4, 17);
      const auto back = Checkpoint::decode(ck.encode());
      EXPECT_EQ(back.tensors, ck.tensors) << name;
      EXPECT_EQ(back.manifest.spec_hash, ck.manifest.spec_hash);
      EXPECT_EQ(back.manifest.epoch, 17u);
      EXPECT_EQ(back.manifest.active_blocks, net.active_blocks());
      EXPECT_EQ(back.weights_hash(), ck.weights_hash());
    }
}

TEST(Checkpoint, FileRoundTripRestoresForwardPass) {
  auto net = small_net("tiny-resnet", 2, 5);
  const auto path = (std::filesystem::temp_directory_path() / "progrow_ck_test.bin").string();
  capture(net, 5, 3).save(path);
  auto back = network_from_checkpoint<float>(Checkpoint::load(path));
  Tensor<float> x({2, 3, 64, 64});
  auto rng = stream(1, "x");
  nn::fill_normal(x, rng, 1.0);
  EXPECT_EQ(back.forward(x, false), net.forward(x, false));
  std::filesystem::remove(path);
}

TEST(Checkpoint, BuffersAreFlagged) {
  auto net = small_net("tiny-resnet", 1, 1);
  const auto ck = capture(net, 1, 0);
  EXPECT_TRUE(ck.tensors.at("stem.bn.running_mean").buffer);
  EXPECT_FALSE(ck.tensors.at("stem.bn.weight").buffer);
  for (const auto& n : ck.parameter_names()) EXPECT_EQ(n.find("running"), std::string::npos);
}

TEST(Checkpoint, TruncatedAndCorruptFilesAreRejected) {
  auto net = small_net("tiny-vit", 1, 2);
  const auto bytes = capture(net, 2, 0).encode();
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(Checkpoint::decode(bytes.substr(0, cut)), CheckpointError) << cut;
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(Checkpoint::decode(bad), CheckpointError);
  EXPECT_THROW(Checkpoint::decode(bytes + "junk"), CheckpointError);
  EXPECT_THROW(Checkpoint::load("/nonexistent/ck.bin"), CheckpointError);
}

TEST(Checkpoint, SpecMismatchIsRejected) {
  auto net = small_net("tiny-resnet", 1, 2);
  const auto ck = capture(net, 2, 0);
  auto other = build_backbone<float>(preset("tiny-bottleneck"), 2);
  EXPECT_THROW(restore_prefix(ck, *other, 1), CheckpointError);
  auto wider = preset("tiny-resnet", 7);
  EXPECT_THROW(restore_prefix(ck, *build_backbone<float>(wider, 2), 1), CheckpointError);
  auto same = build_backbone<float>(preset("tiny-resnet"), 2);
  EXPECT_THROW(restore_prefix(ck, *same, 3), CheckpointError);
  EXPECT_NO_THROW(restore_prefix(ck, *same, 2));
}
