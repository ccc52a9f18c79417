#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "progrow/data/augment.hpp"
#include "progrow/data/cifar10.hpp"
#include "progrow/data/folder.hpp"
#include "progrow/data/synth_fusion.hpp"
#include "progrow/nn/module.hpp"

using namespace progrow;
using namespace progrow::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("progrow_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SynthFusionConfig small_synth(std::uint64_t seed) {
  SynthFusionConfig cfg;
  cfg.image_size = 32;
  cfg.seed = seed;
  return cfg;
}

void write_cifar_file(const fs::path& p, std::size_t first, std::size_t bytes_to_drop = 0) {
  std::string buf(Cifar10Layout::kFileBytes, '\0');
  for (std::size_t r = 0; r < Cifar10Layout::kRecords; ++r) {
    buf[r * Cifar10Layout::kRecordBytes] = static_cast<char>((first + r) % 10);
    buf[r * Cifar10Layout::kRecordBytes + 1] = static_cast<char>((first + r) % 251);
  }
  buf.resize(buf.size() - bytes_to_drop);
  std::ofstream(p, std::ios::binary).write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

TEST(SynthFusion, SizesAndStratification) {
  const auto d = generate_synth_fusion(small_synth(1));
  EXPECT_EQ(d.train.size() + d.val.size() + d.test.size(), 723u);
  EXPECT_EQ(d.class_counts, (std::vector<std::size_t>{159, 92, 92, 125, 255}));
  const auto val = count_classes({&d.val}, 5), test = count_classes({&d.test}, 5);
  const std::vector<std::size_t> n = {159, 92, 92, 125, 255};
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_NEAR(static_cast<double>(val[c]), 0.1 * static_cast<double>(n[c]), 1.0);
    EXPECT_NEAR(static_cast<double>(test[c]), 0.2 * static_cast<double>(n[c]), 1.0);
  }
  std::set<std::size_t> ids;
  for (const auto* p : {&d.train, &d.val, &d.test}) ids.insert(p->ids.begin(), p->ids.end());
  EXPECT_EQ(ids.size(), 723u);
}

TEST(SynthFusion, ByteIdenticalPerSeed) {
  const auto a = generate_synth_fusion(small_synth(3));
  const auto b = generate_synth_fusion(small_synth(3));
  const auto c = generate_synth_fusion(small_synth(4));
  EXPECT_EQ(a.train.pixels, b.train.pixels);
  EXPECT_EQ(a.test.ids, b.test.ids);
  EXPECT_EQ(a.manifest().dump(), b.manifest().dump());
  EXPECT_NE(a.train.hash(), c.train.hash());
}

TEST(SynthFusion, GapShrinksMonotonicallyWithStage) {
  auto cfg = small_synth(2);
  cfg.image_size = 64;
  cfg.noise_level = 0;
  cfg.pose_jitter = 0;
  cfg.fraction_jitter = 0;
  const auto d = generate_synth_fusion(cfg);
  const auto gaps = d.provenance.at("mean_gap_pixels_per_stage").get<std::vector<double>>();
  ASSERT_EQ(gaps.size(), 5u);
  for (std::size_t s = 1; s < 5; ++s) EXPECT_LT(gaps[s], gaps[s - 1]);
  EXPECT_EQ(gaps[4], 0.0);
  EXPECT_GT(gaps[0], 0.0);
}

TEST(SynthFusion, RejectsBadConfig) {
  auto cfg = small_synth(0);
  cfg.gap_fraction_per_stage = {1.0, 0.8, 0.9, 0.2, 0.0};
  EXPECT_THROW(generate_synth_fusion(cfg), DataError);
  cfg = small_synth(0);
  cfg.class_counts = {10, 10};
  EXPECT_THROW(generate_synth_fusion(cfg), DataError);
}

TEST(Dataset, NormalizationComesFromTrainPartition) {
  const auto d = generate_synth_fusion(small_synth(5));
  const auto n = compute_normalization(d.train);
  EXPECT_EQ(d.normalization.mean, n.mean);
  auto batch = make_batch(d.train, {0, 1, 2}, d.normalization, 3);
  EXPECT_EQ(batch.shape(), (Shape{3, 3, 32, 32}));
  for (std::size_t i = 0; i < 32 * 32; ++i) {
    EXPECT_EQ(batch[i], batch[32 * 32 + i]);
    EXPECT_EQ(batch[i], batch[2 * 32 * 32 + i]);
  }
  const float expect = (static_cast<float>(d.train.image(0)[7]) / 255.0f - n.mean[0]) / n.stddev[0];
  EXPECT_FLOAT_EQ(batch[7], expect);
}

TEST(Dataset, SplitRejectsBadFractions) {
  LabeledImages all{1, 1, 1, {}, {}, {}};
  std::uint8_t px = 0;
  for (int i = 0; i < 10; ++i) all.push(&px, i % 2, static_cast<std::size_t>(i));
  LabeledImages a, b, c;
  EXPECT_THROW(stratified_split(all, 2, {0.5, 0.5}, 0, a, b, c), DataError);
  EXPECT_THROW(stratified_split(all, 2, {-0.1, 0.2}, 0, a, b, c), DataError);
}

TEST(Cifar10, LoadsWellFormedFilesAndRejectsTruncation) {
  TempDir dir("cifar");
  for (std::size_t f = 0; f < 5; ++f) write_cifar_file(dir.path / Cifar10Layout::kTrainFiles[f], f * 10000);
  write_cifar_file(dir.path / Cifar10Layout::kTestFile, 50000);
  Cifar10Options opt;
  opt.seed = 1;
  const auto d = load_cifar10(dir.path, opt);
  EXPECT_EQ(d.train.size() + d.val.size(), 50000u);
  EXPECT_EQ(d.test.size(), 10000u);
  EXPECT_EQ(d.val.size(), 5000u);
  EXPECT_EQ(d.test.ids.front(), 50000u);
  EXPECT_EQ(d.class_counts, std::vector<std::size_t>(10, 6000));
  EXPECT_EQ(d.test.image(3)[0], static_cast<std::uint8_t>(50003 % 251));
  EXPECT_EQ(d.provenance.at("file_checksums_fnv1a").size(), 6u);

  opt.train_subset = 10000;
  opt.test_subset = 2000;
  const auto s = load_cifar10(dir.path, opt);
  EXPECT_EQ(s.train.size() + s.val.size(), 10000u);
  EXPECT_EQ(s.test.size(), 2000u);
  EXPECT_EQ(count_classes({&s.test}, 10), std::vector<std::size_t>(10, 200));

  write_cifar_file(dir.path / "data_batch_3.bin", 20000, 100);
  try {
    load_cifar10(dir.path, opt);
    FAIL() << "truncated file accepted";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("data_batch_3.bin"), std::string::npos) << msg;
    EXPECT_NE(msg.find("missing 100 bytes"), std::string::npos) << msg;
  }
  fs::remove(dir.path / Cifar10Layout::kTestFile);
  EXPECT_THROW(load_cifar10(dir.path, opt), DataError);
}

TEST(Augment, IdentityPolicyIsNoOp) {
  Tensor<float> x({2, 1, 4, 4});
  std::iota(x.vec().begin(), x.vec().end(), 0.0f);
  Rng rng(1);
  EXPECT_EQ(augment(x, AugmentPolicy{}, rng), x);
}

TEST(Augment, AlwaysFlipMirrorsColumns) {
  Tensor<float> x({1, 2, 3, 4});
  std::iota(x.vec().begin(), x.vec().end(), 0.0f);
  Rng rng(1);
  AugmentPolicy p;
  p.hflip_prob = 1.0;
  const auto y = augment(x, p, rng);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t col = 0; col < 4; ++col) EXPECT_EQ(y[(c * 3 + r) * 4 + col], x[(c * 3 + r) * 4 + 3 - col]);
  EXPECT_EQ(augment(y, p, rng), x);
}

TEST(Augment, SameStreamSameOutput) {
  Tensor<float> x({4, 1, 8, 8});
  auto r0 = stream(3, "x");
  nn::fill_normal(x, r0, 1.0);
  AugmentPolicy p{0.5, 2, 0.1};
  auto a = stream(9, "augment", 0), b = stream(9, "augment", 0), c = stream(9, "augment", 1);
  const auto ya = augment(x, p, a);
  EXPECT_EQ(ya, augment(x, p, b));
  EXPECT_FALSE(ya == augment(x, p, c));
}

TEST(Folder, LoadsNetpbmAndPngClassDirectories) {
  TempDir dir("folder");
  for (const std::string cls : {"a_fused", "b_open"}) fs::create_directories(dir.path / cls);
  for (int i = 0; i < 10; ++i) {
    std::ofstream f(dir.path / "a_fused" / ("img" + std::to_string(i) + ".pgm"), std::ios::binary);
    f << "P5\n# comment\n4 4\n255\n" << std::string(16, static_cast<char>(200));
  }
  for (int i = 0; i < 10; ++i) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = 6;
    img.height = 6;
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(6 * 6 * 3, 0);
    for (std::size_t j = 0; j < px.size(); j += 3) px[j] = 255;
    ASSERT_TRUE(png_image_write_to_file(&img, (dir.path / "b_open" / ("img" + std::to_string(i) + ".png")).c_str(), 0,
                                        px.data(), 0, nullptr));
  }
  FolderOptions opt;
  opt.image_size = 8;
  const auto d = load_labeled_folder(dir.path, opt);
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"a_fused", "b_open"}));
  EXPECT_EQ(d.class_counts, (std::vector<std::size_t>{10, 10}));
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const std::uint8_t expect = d.train.labels[i] == 0 ? 200 : 76;  // pure red -> luma 0.299 * 255
    for (std::size_t j = 0; j < 64; ++j) ASSERT_EQ(d.train.image(i)[j], expect);
  }

  std::ofstream(dir.path / "a_fused" / "broken.pgm", std::ios::binary) << "P5\n4 4\n255\n" << std::string(3, 'x');
  EXPECT_THROW(load_labeled_folder(dir.path, opt), DataError);
  EXPECT_THROW(load_labeled_folder(dir.path / "nope", opt), DataError);
}
