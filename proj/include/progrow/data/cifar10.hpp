#pragma once

#include <filesystem>
#include <fstream>

#include "progrow/data/dataset.hpp"

namespace progrow::data {

// CIFAR-10 binary version: each file holds 10,000 records of 3,073 bytes,
// a label byte followed by the 1024-byte red, green and blue planes.
struct Cifar10Layout {
  static constexpr std::size_t kRecords = 10000;
  static constexpr std::size_t kImageBytes = 3 * 32 * 32;
  static constexpr std::size_t kRecordBytes = 1 + kImageBytes;
  static constexpr std::size_t kFileBytes = kRecords * kRecordBytes;
  static inline const std::vector<std::string> kTrainFiles = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                                              "data_batch_4.bin", "data_batch_5.bin"};
  static inline const std::string kTestFile = "test_batch.bin";
  static inline const std::vector<std::string> kClassNames = {"airplane", "automobile", "bird",  "cat",  "deer",
                                                              "dog",      "frog",       "horse", "ship", "truck"};
};

struct Cifar10Options {
  double val_fraction = 0.1;
  std::size_t train_subset = 0;  // 0 = all 50,000; otherwise a stratified subset carved before the val split
  std::size_t test_subset = 0;
  std::uint64_t seed = 0;
};

// Reads one batch file, validating its size and labels. `first_id` numbers the
// records in source order.
inline void read_cifar_file(const std::filesystem::path& path, std::size_t first_id, LabeledImages& out,
                            std::uint64_t& checksum) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing CIFAR-10 file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != Cifar10Layout::kFileBytes) {
    const bool short_file = bytes.size() < Cifar10Layout::kFileBytes;
    const auto diff = short_file ? Cifar10Layout::kFileBytes - bytes.size() : bytes.size() - Cifar10Layout::kFileBytes;
    throw DataError("corrupt CIFAR-10 file " + path.string() + ": expected " + std::to_string(Cifar10Layout::kFileBytes) +
                    " bytes, found " + std::to_string(bytes.size()) + " (" + (short_file ? "missing " : "excess ") +
                    std::to_string(diff) + " bytes)");
  }
  checksum = Fnv1a{}.update(bytes).digest();
  for (std::size_t r = 0; r < Cifar10Layout::kRecords; ++r) {
    const auto* rec = reinterpret_cast<const std::uint8_t*>(bytes.data()) + r * Cifar10Layout::kRecordBytes;
    if (rec[0] > 9)
      throw DataError("corrupt CIFAR-10 file " + path.string() + ": record " + std::to_string(r) + " has label " +
                      std::to_string(rec[0]));
    out.push(rec + 1, rec[0], first_id + r);
  }
}

inline std::vector<std::size_t> stratified_subset(const LabeledImages& imgs, std::size_t keep, std::size_t num_classes,
                                                  std::uint64_t seed, const char* purpose) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < imgs.size(); ++i) by_class[static_cast<std::size_t>(imgs.labels[i])].push_back(i);
  std::vector<std::size_t> rows;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto rng = stream(seed, purpose, c);
    auto& m = by_class[c];
    std::shuffle(m.begin(), m.end(), rng);
    const auto take = static_cast<std::size_t>(
        std::lround(static_cast<double>(m.size()) * static_cast<double>(keep) / static_cast<double>(imgs.size())));
    rows.insert(rows.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(std::min(take, m.size())));
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

inline DatasetSplit load_cifar10(const std::filesystem::path& dir, const Cifar10Options& opt = {}) {
  LabeledImages train_all{3, 32, 32, {}, {}, {}}, test{3, 32, 32, {}, {}, {}};
  nlohmann::json checksums = nlohmann::json::object();
  for (std::size_t f = 0; f < Cifar10Layout::kTrainFiles.size(); ++f) {
    std::uint64_t sum = 0;
    read_cifar_file(dir / Cifar10Layout::kTrainFiles[f], f * Cifar10Layout::kRecords, train_all, sum);
    checksums[Cifar10Layout::kTrainFiles[f]] = to_hex(sum);
  }
  std::uint64_t sum = 0;
  read_cifar_file(dir / Cifar10Layout::kTestFile, 5 * Cifar10Layout::kRecords, test, sum);
  checksums[Cifar10Layout::kTestFile] = to_hex(sum);

  const std::size_t classes = Cifar10Layout::kClassNames.size();
  if (opt.train_subset > 0 && opt.train_subset < train_all.size())
    train_all = train_all.subset(stratified_subset(train_all, opt.train_subset, classes, opt.seed, "cifar-train-subset"));
  if (opt.test_subset > 0 && opt.test_subset < test.size())
    test = test.subset(stratified_subset(test, opt.test_subset, classes, opt.seed, "cifar-test-subset"));

  DatasetSplit split;
  LabeledImages unused;
  stratified_split(train_all, classes, {opt.val_fraction, 0.0}, opt.seed, split.train, split.val, unused);
  split.test = std::move(test);
  split.class_names = Cifar10Layout::kClassNames;
  split.class_counts = count_classes({&split.train, &split.val, &split.test}, classes);
  split.normalization = compute_normalization(split.train);
  split.provenance = {{"source", "cifar10"},
                      {"path", dir.string()},
                      {"seed", opt.seed},
                      {"val_fraction", opt.val_fraction},
                      {"train_subset", opt.train_subset},
                      {"test_subset", opt.test_subset},
                      {"file_checksums_fnv1a", checksums}};
  split.validate();
  return split;
}

}  // namespace progrow::data
