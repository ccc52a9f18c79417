#pragma once

#include <json.hpp>

#include "progrow/rng.hpp"
#include "progrow/tensor.hpp"

namespace progrow::data {

struct AugmentPolicy {
  double hflip_prob = 0.0;
  std::size_t crop_padding = 0;   // random translation by up to this many pixels (zero fill)
  double intensity_jitter = 0.0;  // per-image gain and offset drawn from [-j, j]

  bool is_identity() const { return hflip_prob <= 0 && crop_padding == 0 && intensity_jitter <= 0; }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AugmentPolicy, hflip_prob, crop_padding, intensity_jitter)

// Applies the policy to an NCHW batch. All randomness comes from `rng`, drawn
// in a fixed per-image order (flip, shift y, shift x, gain, offset), so the
// same stream state always yields the same output.
inline Tensor<float> augment(const Tensor<float>& batch, const AugmentPolicy& policy, Rng& rng) {
  if (batch.rank() != 4) throw ShapeError("augment: expected NCHW batch, got " + shape_str(batch.shape()));
  if (policy.is_identity()) return batch;
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor<float> out(batch.shape());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto pad = static_cast<std::ptrdiff_t>(policy.crop_padding);
  for (std::size_t b = 0; b < n; ++b) {
    const bool flip = policy.hflip_prob > 0 && unit(rng) < policy.hflip_prob;
    std::ptrdiff_t dy = 0, dx = 0;
    if (pad > 0) {
      std::uniform_int_distribution<std::ptrdiff_t> shift(-pad, pad);
      dy = shift(rng);
      dx = shift(rng);
    }
    float gain = 1.0f, offset = 0.0f;
    if (policy.intensity_jitter > 0) {
      gain = static_cast<float>(1.0 + (2 * unit(rng) - 1) * policy.intensity_jitter);
      offset = static_cast<float>((2 * unit(rng) - 1) * policy.intensity_jitter);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* src = batch.data() + (b * c + ch) * h * w;
      float* dst = out.data() + (b * c + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
          auto sx = static_cast<std::ptrdiff_t>(flip ? w - 1 - x : x) + dx;
          float v = 0.0f;
          if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx < static_cast<std::ptrdiff_t>(w))
            v = src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
          dst[y * w + x] = v * gain + offset;
        }
    }
  }
  return out;
}

}  // namespace progrow::data
