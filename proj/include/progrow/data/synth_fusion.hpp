#pragma once

#include <numbers>

#include "progrow/data/dataset.hpp"

namespace progrow::data {

// Parameters of the synthetic ordinal fusion dataset: single-channel images of
// a bony bar split by a radiolucent gap that closes from one end as the stage
// index grows. Stage s (0-based) leaves `gap_fraction_per_stage[s]` of the gap
// length open.
struct SynthFusionConfig {
  std::vector<std::size_t> class_counts = {159, 92, 92, 125, 255};
  std::size_t image_size = 96;
  std::vector<double> gap_fraction_per_stage = {1.0, 0.75, 0.5, 0.25, 0.0};
  double fraction_jitter = 0.05;
  double noise_level = 0.08;  // gaussian noise std as a fraction of full scale
  double pose_jitter = 1.0;   // scales translation / rotation / size jitter; 0 = canonical pose
  SplitFractions split;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return class_counts.size(); }

  void validate() const {
    if (class_counts.empty()) throw DataError("synth-fusion: at least one class required");
    for (auto c : class_counts)
      if (c == 0) throw DataError("synth-fusion: class counts must be positive");
    if (gap_fraction_per_stage.size() != class_counts.size())
      throw DataError("synth-fusion: need one gap fraction per class");
    for (std::size_t i = 0; i < gap_fraction_per_stage.size(); ++i) {
      const double g = gap_fraction_per_stage[i];
      if (g < 0 || g > 1) throw DataError("synth-fusion: gap fractions must lie in [0,1]");
      if (i > 0 && g >= gap_fraction_per_stage[i - 1]) throw DataError("synth-fusion: gap fractions must strictly decrease");
    }
    if (image_size < 16) throw DataError("synth-fusion: image_size must be at least 16 pixels");
    if (noise_level < 0 || fraction_jitter < 0 || pose_jitter < 0) throw DataError("synth-fusion: jitter/noise must be >= 0");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SynthFusionConfig, class_counts, image_size, gap_fraction_per_stage, fraction_jitter,
                                   noise_level, pose_jitter, seed)

struct FusionSample {
  std::vector<std::uint8_t> pixels;
  std::size_t gap_pixels = 0;  // radiolucent pixels inside the bar, before noise
};

inline FusionSample render_fusion_sample(const SynthFusionConfig& cfg, std::size_t stage, Rng& rng) {
  const std::size_t n = cfg.image_size;
  const double size = static_cast<double>(n);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double j = cfg.pose_jitter;
  const double cx = size / 2 + u(rng) * 0.06 * size * j, cy = size / 2 + u(rng) * 0.06 * size * j;
  const double angle = u(rng) * 12.0 * j * std::numbers::pi / 180.0;
  const double scale = 1.0 + u(rng) * 0.1 * j;
  const double half_w = 0.36 * size * scale, half_h = 0.16 * size * scale;
  const double open = std::clamp(cfg.gap_fraction_per_stage[stage] + u(rng) * cfg.fraction_jitter, 0.0, 1.0);
  const double gap_half = 0.035 * size * scale * (0.5 + 0.5 * open);
  const double fused_until = -half_h + (1.0 - open) * 2.0 * half_h;
  const double bone = 185 + u(rng) * 15, soft = 55 + u(rng) * 10, lucent = 70 + u(rng) * 10;
  const double ca = std::cos(angle), sa = std::sin(angle);

  FusionSample s;
  s.pixels.resize(n * n);
  std::normal_distribution<double> noise(0.0, cfg.noise_level * 255.0);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      const double along = ca * dx + sa * dy, across = -sa * dx + ca * dy;
      const bool in_bar = (along / half_w) * (along / half_w) + (across / half_h) * (across / half_h) <= 1.0;
      double v = soft + 10.0 * (static_cast<double>(y) / size);
      if (in_bar) {
        const bool gap = std::abs(along) < gap_half && across >= fused_until && open > 0.0;
        if (gap) {
          v = lucent;
          ++s.gap_pixels;
        } else {
          v = bone;
        }
      }
      if (cfg.noise_level > 0) v += noise(rng);
      s.pixels[y * n + x] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return s;
}

inline DatasetSplit generate_synth_fusion(const SynthFusionConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.image_size;
  LabeledImages all{1, n, n, {}, {}, {}};
  std::vector<double> gap_sum(cfg.num_classes(), 0.0);
  std::size_t id = 0;
  for (std::size_t stage = 0; stage < cfg.num_classes(); ++stage)
    for (std::size_t i = 0; i < cfg.class_counts[stage]; ++i, ++id) {
      auto rng = stream(cfg.seed, "synth-fusion", id);
      const auto sample = render_fusion_sample(cfg, stage, rng);
      gap_sum[stage] += static_cast<double>(sample.gap_pixels);
      all.push(sample.pixels.data(), static_cast<int>(stage), id);
    }

  DatasetSplit split;
  stratified_split(all, cfg.num_classes(), cfg.split, cfg.seed, split.train, split.val, split.test);
  for (std::size_t s = 0; s < cfg.num_classes(); ++s) {
    split.class_names.push_back("stage" + std::to_string(s + 1));
    gap_sum[s] /= static_cast<double>(cfg.class_counts[s]);
  }
  split.class_counts = count_classes({&split.train, &split.val, &split.test}, cfg.num_classes());
  split.normalization = compute_normalization(split.train);
  split.provenance = {{"source", "synth-fusion"},
                      {"config", cfg},
                      {"split", {{"val", cfg.split.val}, {"test", cfg.split.test}}},
                      {"seed", cfg.seed},
                      {"mean_gap_pixels_per_stage", gap_sum}};
  split.validate();
  return split;
}

}  // namespace progrow::data
