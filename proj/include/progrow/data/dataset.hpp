#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "progrow/rng.hpp"
#include "progrow/tensor.hpp"

namespace progrow::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit images stored CHW, one after another.
struct LabeledImages {
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::vector<std::size_t> ids;  // position in the source ordering

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return channels * height * width; }
  const std::uint8_t* image(std::size_t i) const { return pixels.data() + i * image_bytes(); }

  void push(const std::uint8_t* img, int label, std::size_t id) {
    pixels.insert(pixels.end(), img, img + image_bytes());
    labels.push_back(label);
    ids.push_back(id);
  }

  LabeledImages subset(const std::vector<std::size_t>& rows) const {
    LabeledImages out{channels, height, width, {}, {}, {}};
    out.pixels.reserve(rows.size() * image_bytes());
    for (auto r : rows) out.push(image(r), labels[r], ids[r]);
    return out;
  }

  std::uint64_t hash() const {
    Fnv1a h;
    h.update(pixels.data(), pixels.size());
    h.update(labels.data(), labels.size() * sizeof(int));
    h.update(ids.data(), ids.size() * sizeof(std::size_t));
    return h.digest();
  }
};

struct Normalization {
  std::vector<float> mean, stddev;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Normalization, mean, stddev)

struct DatasetSplit {
  LabeledImages train, val, test;
  std::vector<std::string> class_names;
  std::vector<std::size_t> class_counts;  // over all three partitions
  Normalization normalization;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t num_classes() const { return class_names.size(); }

  const LabeledImages& partition(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw DataError("unknown split '" + name + "' (expected train, val or test)");
  }

  // Checks the DatasetSplit invariants; throws DataError on violation.
  void validate() const {
    const std::size_t c = num_classes();
    std::vector<std::size_t> counts(c, 0);
    std::vector<std::size_t> seen;
    for (const auto* p : {&train, &val, &test}) {
      if (p->pixels.size() != p->size() * p->image_bytes()) throw DataError("pixel buffer size does not match image count");
      for (auto l : p->labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= c) throw DataError("label " + std::to_string(l) + " outside class range");
        ++counts[static_cast<std::size_t>(l)];
      }
      seen.insert(seen.end(), p->ids.begin(), p->ids.end());
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) throw DataError("train/val/test partitions overlap");
    if (counts != class_counts) throw DataError("class_counts inconsistent with partition contents");
  }

  nlohmann::json manifest() const {
    nlohmann::json j;
    j["class_names"] = class_names;
    j["class_counts"] = class_counts;
    j["sizes"] = {{"train", train.size()}, {"val", val.size()}, {"test", test.size()}};
    j["image_shape"] = {train.channels, train.height, train.width};
    j["normalization"] = normalization;
    j["provenance"] = provenance;
    j["membership_hash"] = {{"train", to_hex(membership_hash(train))},
                            {"val", to_hex(membership_hash(val))},
                            {"test", to_hex(membership_hash(test))}};
    return j;
  }

  static std::uint64_t membership_hash(const LabeledImages& p) {
    auto ids = p.ids;
    std::sort(ids.begin(), ids.end());
    return Fnv1a{}.update(ids.data(), ids.size() * sizeof(std::size_t)).digest();
  }
};

struct SplitFractions {
  double val = 0.1, test = 0.2;
};

// Stratified split: within each class the members are shuffled by a
// class-specific stream and the first round(n * val) go to val, the next
// round(n * test) to test, the rest to train. Partitions keep source order.
inline void stratified_split(const LabeledImages& all, std::size_t num_classes, SplitFractions f, std::uint64_t seed,
                             LabeledImages& train, LabeledImages& val, LabeledImages& test) {
  if (f.val < 0 || f.test < 0 || f.val + f.test >= 1) throw DataError("split fractions must be >= 0 and sum below 1");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < all.size(); ++i) by_class.at(static_cast<std::size_t>(all.labels[i])).push_back(i);
  std::vector<int> where(all.size(), 0);  // 0 train, 1 val, 2 test
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    auto rng = stream(seed, "split", c);
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<double>(members.size());
    const auto nv = static_cast<std::size_t>(std::lround(n * f.val));
    const auto nt = std::min(members.size() - nv, static_cast<std::size_t>(std::lround(n * f.test)));
    for (std::size_t i = 0; i < members.size(); ++i) where[members[i]] = i < nv ? 1 : (i < nv + nt ? 2 : 0);
  }
  std::vector<std::size_t> rows[3];
  for (std::size_t i = 0; i < all.size(); ++i) rows[where[i]].push_back(i);
  train = all.subset(rows[0]);
  val = all.subset(rows[1]);
  test = all.subset(rows[2]);
}

inline Normalization compute_normalization(const LabeledImages& imgs) {
  Normalization n;
  const std::size_t hw = imgs.height * imgs.width;
  for (std::size_t c = 0; c < imgs.channels; ++c) {
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      const std::uint8_t* p = imgs.image(i) + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const double v = p[j] / 255.0;
        s += v;
        ss += v * v;
      }
    }
    const double count = static_cast<double>(std::max<std::size_t>(1, imgs.size() * hw));
    const double mean = s / count;
    const double var = std::max(ss / count - mean * mean, 1e-8);
    n.mean.push_back(static_cast<float>(mean));
    n.stddev.push_back(static_cast<float>(std::sqrt(var)));
  }
  return n;
}

inline std::vector<std::size_t> count_classes(const std::vector<const LabeledImages*>& parts, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto* p : parts)
    for (auto l : p->labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

// Normalized float batch (B, target_channels, H, W). Single-channel images
// are replicated across target channels.
inline Tensor<float> make_batch(const LabeledImages& imgs, const std::vector<std::size_t>& rows, const Normalization& norm,
                                std::size_t target_channels) {
  if (imgs.channels != target_channels && imgs.channels != 1)
    throw DataError("cannot map " + std::to_string(imgs.channels) + "-channel images to " + std::to_string(target_channels) +
                    " channels");
  const std::size_t hw = imgs.height * imgs.width;
  Tensor<float> out({rows.size(), target_channels, imgs.height, imgs.width});
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const std::uint8_t* src = imgs.image(rows[b]);
    for (std::size_t c = 0; c < target_channels; ++c) {
      const std::size_t sc = imgs.channels == 1 ? 0 : c;
      const float m = norm.mean.at(sc), s = norm.stddev.at(sc);
      float* dst = out.data() + (b * target_channels + c) * hw;
      for (std::size_t j = 0; j < hw; ++j) dst[j] = (static_cast<float>(src[sc * hw + j]) / 255.0f - m) / s;
    }
  }
  return out;
}

}  // namespace progrow::data
