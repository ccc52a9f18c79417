#pragma once

#include "progrow/backbone/head.hpp"
#include "progrow/backbone/spec.hpp"
#include "progrow/partition.hpp"

namespace progrow {

// Closed-form parameter and multiply-accumulate counts derived from a
// BackboneSpec, without allocating the network. Canonical presets (hundreds
// of millions of weights for the large transformers) are costed this way.
namespace analytic {

inline std::size_t conv(std::size_t in, std::size_t out, std::size_t k, bool bias = false) {
  return in * out * k * k + (bias ? out : 0);
}
inline std::size_t batchnorm(std::size_t c) { return 2 * c; }
inline std::size_t linear(std::size_t in, std::size_t out) { return in * out + out; }
inline std::size_t layernorm(std::size_t d) { return 2 * d; }

inline bool has_projection(const BackboneSpec& s, std::size_t i) {
  return s.block_strides[i] != 1 || s.block_in_width(i) != s.block_out_width(i);
}

inline std::size_t stem_params(const BackboneSpec& s) {
  if (is_residual(s.family)) return conv(s.input_shape.channels, s.conv_stem.out_channels, s.conv_stem.kernel) +
                                    batchnorm(s.conv_stem.out_channels);
  const auto& t = s.tokenizer;
  const std::size_t tokens = t.patch_tokens(s.input_shape.height, s.input_shape.width) + 1;
  return conv(s.input_shape.channels, t.embed_dim, t.patch_size, true) + t.embed_dim + tokens * t.embed_dim;
}

inline std::size_t block_params(const BackboneSpec& s, std::size_t i) {
  const std::size_t in = s.block_in_width(i), p = s.block_widths[i], out = s.block_out_width(i);
  switch (s.family) {
    case Family::ResidualBasic:
      return conv(in, p, 3) + batchnorm(p) + conv(p, p, 3) + batchnorm(p) +
             (has_projection(s, i) ? conv(in, out, 1) + batchnorm(out) : 0);
    case Family::ResidualBottleneck:
      return conv(in, p, 1) + batchnorm(p) + conv(p, p, 3) + batchnorm(p) + conv(p, out, 1) + batchnorm(out) +
             (has_projection(s, i) ? conv(in, out, 1) + batchnorm(out) : 0);
    case Family::TransformerEncoder: {
      const std::size_t d = s.tokenizer.embed_dim;
      return 2 * layernorm(d) + linear(d, 3 * d) + linear(d, d) + linear(d, s.mlp_dim) + linear(s.mlp_dim, d);
    }
  }
  return 0;
}

inline std::size_t head_params(const BackboneSpec& s, std::size_t active_blocks, HeadKind kind) {
  const std::size_t w = s.block_out_width(active_blocks - 1), c = s.num_classes;
  if (!is_residual(s.family)) return layernorm(w) + linear(w, c);
  if (kind == HeadKind::Progressive) return linear(w, kProgressiveEmbedWidth) + linear(kProgressiveEmbedWidth, c);
  return linear(w, c);
}

inline std::size_t prefix_params(const BackboneSpec& s, std::size_t active_blocks, HeadKind kind) {
  std::size_t n = stem_params(s);
  for (std::size_t i = 0; i < active_blocks; ++i) n += block_params(s, i);
  return n + head_params(s, active_blocks, kind);
}

inline std::size_t full_params(const BackboneSpec& s) { return prefix_params(s, s.block_count, HeadKind::Standard); }

// Forward multiply-accumulates for one sample through stem, the first
// `active_blocks` blocks and the head. Counts convolutions, affine maps and
// the two attention matmuls; normalization and pointwise ops are ignored.
inline double prefix_forward_macs(const BackboneSpec& s, std::size_t active_blocks, HeadKind kind) {
  double macs = 0;
  const auto conv_out = [](std::size_t extent, std::size_t k, std::size_t stride, std::size_t pad) {
    return (extent + 2 * pad - k) / stride + 1;
  };
  if (is_residual(s.family)) {
    const auto& st = s.conv_stem;
    std::size_t h = conv_out(s.input_shape.height, st.kernel, st.stride, st.kernel / 2);
    std::size_t w = conv_out(s.input_shape.width, st.kernel, st.stride, st.kernel / 2);
    macs += static_cast<double>(conv(s.input_shape.channels, st.out_channels, st.kernel)) * static_cast<double>(h * w);
    if (st.max_pool) {
      h = conv_out(h, 3, 2, 1);
      w = conv_out(w, 3, 2, 1);
    }
    for (std::size_t i = 0; i < active_blocks; ++i) {
      const std::size_t in = s.block_in_width(i), p = s.block_widths[i], out = s.block_out_width(i), st2 = s.block_strides[i];
      const std::size_t oh = conv_out(h, 3, st2, 1), ow = conv_out(w, 3, st2, 1);
      const double in_px = static_cast<double>(h * w), out_px = static_cast<double>(oh * ow);
      if (s.family == Family::ResidualBasic) {
        macs += static_cast<double>(conv(in, p, 3)) * out_px + static_cast<double>(conv(p, p, 3)) * out_px;
      } else {
        macs += static_cast<double>(conv(in, p, 1)) * in_px + static_cast<double>(conv(p, p, 3)) * out_px +
                static_cast<double>(conv(p, out, 1)) * out_px;
      }
      if (has_projection(s, i)) macs += static_cast<double>(conv(in, out, 1)) * out_px;
      h = oh;
      w = ow;
    }
    const double width = static_cast<double>(s.block_out_width(active_blocks - 1));
    const double c = static_cast<double>(s.num_classes);
    macs += kind == HeadKind::Progressive ? width * kProgressiveEmbedWidth + kProgressiveEmbedWidth * c : width * c;
  } else {
    const auto& t = s.tokenizer;
    const double d = static_cast<double>(t.embed_dim);
    const double patches = static_cast<double>(t.patch_tokens(s.input_shape.height, s.input_shape.width));
    const double tokens = patches + 1;
    macs += patches * static_cast<double>(s.input_shape.channels * t.patch_size * t.patch_size) * d;
    const double per_block = tokens * (3 * d * d + d * d + 2 * d * static_cast<double>(s.mlp_dim)) + 2 * tokens * tokens * d;
    macs += per_block * static_cast<double>(active_blocks);
    macs += d * static_cast<double>(s.num_classes);
  }
  return macs;
}

}  // namespace analytic

enum class CostMode { ParameterUpdates, Flops };
NLOHMANN_JSON_SERIALIZE_ENUM(CostMode, {{CostMode::ParameterUpdates, "parameter-updates"}, {CostMode::Flops, "flops"}})

inline CostMode parse_cost_mode(const std::string& s) {
  if (s == "parameter-updates" || s == "params") return CostMode::ParameterUpdates;
  if (s == "flops") return CostMode::Flops;
  throw std::invalid_argument("unknown cost mode '" + s + "' (expected parameter-updates or flops)");
}

// Forward + backward is costed as three forward passes.
inline constexpr double kTrainingPassFactor = 3.0;

// Cost of one training epoch at stage k. Parameter-updates mode: trainable
// parameter count of the stage-k prefix including its head. FLOPs mode:
// forward+backward multiply-accumulates over `samples_per_epoch` samples.
inline double stage_cost(const BackboneSpec& spec, const StagePlan& plan, std::size_t stage, CostMode mode,
                         HeadKind final_head = HeadKind::Standard, std::size_t samples_per_epoch = 1) {
  const std::size_t active = plan.active_blocks(stage);
  const HeadKind kind = stage == plan.stage_count ? final_head : HeadKind::Progressive;
  switch (mode) {
    case CostMode::ParameterUpdates: return static_cast<double>(analytic::prefix_params(spec, active, kind));
    case CostMode::Flops:
      return kTrainingPassFactor * analytic::prefix_forward_macs(spec, active, kind) * static_cast<double>(samples_per_epoch);
  }
  throw std::invalid_argument("unknown cost mode");
}

struct CostModel {
  CostMode mode = CostMode::ParameterUpdates;
  std::vector<double> per_stage_cost;
  double full_cost = 0;
};

inline CostModel make_cost_model(const BackboneSpec& spec, const StagePlan& plan, CostMode mode,
                                 HeadKind final_head = HeadKind::Standard, std::size_t samples_per_epoch = 1) {
  CostModel m;
  m.mode = mode;
  for (std::size_t k = 1; k <= plan.stage_count; ++k)
    m.per_stage_cost.push_back(stage_cost(spec, plan, k, mode, final_head, samples_per_epoch));
  const auto full = make_plan(spec.block_count, 1);
  m.full_cost = stage_cost(spec, full, 1, mode, HeadKind::Standard, samples_per_epoch);
  return m;
}

// Progressive cost relative to training the full network for the same total
// number of epochs: sum_k e_k c_k / (sum_k e_k * c_full).
inline double overall_computation(const std::vector<std::size_t>& epochs, const CostModel& model) {
  if (epochs.size() != model.per_stage_cost.size())
    throw std::invalid_argument("schedule has " + std::to_string(epochs.size()) + " stages, cost model has " +
                                std::to_string(model.per_stage_cost.size()));
  double spent = 0, total = 0;
  for (std::size_t k = 0; k < epochs.size(); ++k) {
    spent += static_cast<double>(epochs[k]) * model.per_stage_cost[k];
    total += static_cast<double>(epochs[k]);
  }
  if (total == 0) throw std::invalid_argument("schedule has zero total epochs");
  return spent / (total * model.full_cost);
}

}  // namespace progrow
