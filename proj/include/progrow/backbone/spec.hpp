#pragma once

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "progrow/rng.hpp"
#include "progrow/tensor.hpp"

namespace progrow {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Family { ResidualBasic, ResidualBottleneck, TransformerEncoder };

NLOHMANN_JSON_SERIALIZE_ENUM(Family, {{Family::ResidualBasic, "residual-basic"},
                                      {Family::ResidualBottleneck, "residual-bottleneck"},
                                      {Family::TransformerEncoder, "transformer-encoder"}})

inline bool is_residual(Family f) { return f != Family::TransformerEncoder; }

struct InputShape {
  std::size_t channels = 3, height = 224, width = 224;
  friend bool operator==(const InputShape&, const InputShape&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(InputShape, channels, height, width)

// Convolutional stem: conv(kernel, stride) -> BN -> ReLU [-> 3x3/2 max pool].
struct ConvStemSpec {
  std::size_t out_channels = 64, kernel = 7, stride = 2;
  bool max_pool = true;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ConvStemSpec, out_channels, kernel, stride, max_pool)

// Square patches of side patch_size taken every stride pixels; stride equal
// to patch_size tiles the image, stride = patch_size / 2 overlaps by half.
struct PatchTokenizerSpec {
  std::size_t patch_size = 16, stride = 16, embed_dim = 768;

  void validate() const {
    if (patch_size == 0 || stride == 0 || embed_dim == 0) throw SpecError("tokenizer: patch_size, stride, embed_dim must be >= 1");
    if (stride > patch_size) throw SpecError("tokenizer: stride must not exceed patch_size");
  }
  std::size_t grid(std::size_t extent) const {
    if (extent < patch_size)
      throw SpecError("tokenizer: image extent " + std::to_string(extent) + " smaller than patch " + std::to_string(patch_size));
    return (extent - patch_size) / stride + 1;
  }
  std::size_t patch_tokens(std::size_t h, std::size_t w) const { return grid(h) * grid(w); }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PatchTokenizerSpec, patch_size, stride, embed_dim)

// Declarative block-sequence architecture. For residual families
// block_widths holds each block's inner ("planes") width; its output width is
// planes for basic blocks and 4 * planes for bottlenecks. For transformers
// every entry equals the embedding dimension.
struct BackboneSpec {
  std::string name = "custom";
  Family family = Family::ResidualBasic;
  std::size_t block_count = 1;
  ConvStemSpec conv_stem;
  PatchTokenizerSpec tokenizer;
  std::vector<std::size_t> block_widths;
  std::vector<std::size_t> block_strides;
  std::size_t heads = 0, mlp_dim = 0;
  std::size_t num_classes = 5;
  InputShape input_shape;
  bool zero_init_residual = true;

  static constexpr std::size_t bottleneck_expansion = 4;

  std::size_t block_out_width(std::size_t i) const {
    switch (family) {
      case Family::ResidualBasic: return block_widths.at(i);
      case Family::ResidualBottleneck: return block_widths.at(i) * bottleneck_expansion;
      case Family::TransformerEncoder: return tokenizer.embed_dim;
    }
    return 0;
  }
  std::size_t block_in_width(std::size_t i) const {
    if (i > 0) return block_out_width(i - 1);
    return is_residual(family) ? conv_stem.out_channels : tokenizer.embed_dim;
  }

  void validate() const {
    if (block_count < 1) throw SpecError(name + ": block_count must be >= 1");
    if (num_classes < 1) throw SpecError(name + ": num_classes must be >= 1");
    if (input_shape.channels < 1 || input_shape.height < 1 || input_shape.width < 1)
      throw SpecError(name + ": input shape must be positive");
    if (block_widths.size() != block_count)
      throw SpecError(name + ": block_widths has " + std::to_string(block_widths.size()) + " entries, expected " +
                      std::to_string(block_count));
    for (auto w : block_widths)
      if (w < 1) throw SpecError(name + ": block widths must be >= 1");
    if (is_residual(family)) {
      if (conv_stem.out_channels < 1 || conv_stem.kernel < 1 || conv_stem.stride < 1)
        throw SpecError(name + ": stem fields must be >= 1");
      if (block_strides.size() != block_count) throw SpecError(name + ": block_strides must have one entry per block");
      for (auto s : block_strides)
        if (s != 1 && s != 2) throw SpecError(name + ": block strides must be 1 or 2");
    } else {
      tokenizer.validate();
      for (std::size_t i = 0; i < block_count; ++i)
        if (block_widths[i] != tokenizer.embed_dim)
          throw SpecError(name + ": encoder block " + std::to_string(i + 1) + " width " + std::to_string(block_widths[i]) +
                          " does not match embedding width " + std::to_string(tokenizer.embed_dim));
      if (heads < 1 || tokenizer.embed_dim % heads != 0) throw SpecError(name + ": embed_dim must be divisible by heads");
      if (mlp_dim < 1) throw SpecError(name + ": mlp_dim must be >= 1");
      tokenizer.patch_tokens(input_shape.height, input_shape.width);
    }
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BackboneSpec, name, family, block_count, conv_stem, tokenizer, block_widths, block_strides,
                                   heads, mlp_dim, num_classes, input_shape, zero_init_residual)

inline std::uint64_t spec_hash(const BackboneSpec& spec) { return fnv1a(nlohmann::json(spec).dump()); }

namespace detail {

inline BackboneSpec resnet(std::string name, Family family, const std::vector<std::size_t>& layers, std::size_t base) {
  BackboneSpec s;
  s.name = std::move(name);
  s.family = family;
  s.conv_stem = {base, 7, 2, true};
  for (std::size_t g = 0; g < layers.size(); ++g)
    for (std::size_t b = 0; b < layers[g]; ++b) {
      s.block_widths.push_back(base << g);
      s.block_strides.push_back(g > 0 && b == 0 ? 2 : 1);
    }
  s.block_count = s.block_widths.size();
  s.input_shape = {3, 224, 224};
  return s;
}

inline BackboneSpec vit(std::string name, std::size_t layers, std::size_t dim, std::size_t heads, std::size_t mlp,
                        std::size_t patch, std::size_t stride) {
  BackboneSpec s;
  s.name = std::move(name);
  s.family = Family::TransformerEncoder;
  s.block_count = layers;
  s.tokenizer = {patch, stride, dim};
  s.block_widths.assign(layers, dim);
  s.heads = heads;
  s.mlp_dim = mlp;
  s.input_shape = {3, 224, 224};
  return s;
}

}  // namespace detail

// Canonical and desk-scale presets. Canonical residual presets follow the
// standard ImageNet layer graph; "tiny-*" presets are small enough to train
// on a single CPU core.
inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "resnet18",    "resnet34",          "resnet50",          "resnet101",     "resnet152",     "vit-b16",
      "vit-l16",     "vit-b32-overlap",   "vit-l32-overlap",   "tiny-resnet",   "tiny-bottleneck", "tiny-vit"};
  return names;
}

inline BackboneSpec preset(const std::string& name, std::size_t num_classes = 5) {
  using detail::resnet;
  using detail::vit;
  BackboneSpec s;
  if (name == "resnet18") s = resnet(name, Family::ResidualBasic, {2, 2, 2, 2}, 64);
  else if (name == "resnet34") s = resnet(name, Family::ResidualBasic, {3, 4, 6, 3}, 64);
  else if (name == "resnet50") s = resnet(name, Family::ResidualBottleneck, {3, 4, 6, 3}, 64);
  else if (name == "resnet101") s = resnet(name, Family::ResidualBottleneck, {3, 4, 23, 3}, 64);
  else if (name == "resnet152") s = resnet(name, Family::ResidualBottleneck, {3, 8, 36, 3}, 64);
  else if (name == "vit-b16") s = vit(name, 12, 768, 12, 3072, 16, 16);
  else if (name == "vit-l16") s = vit(name, 24, 1024, 16, 4096, 16, 16);
  else if (name == "vit-b32-overlap") s = vit(name, 12, 768, 12, 3072, 32, 16);
  else if (name == "vit-l32-overlap") s = vit(name, 24, 1024, 16, 4096, 32, 16);
  else if (name == "tiny-resnet") {
    s.name = name;
    s.family = Family::ResidualBasic;
    s.conv_stem = {16, 3, 2, true};
    s.block_widths = {16, 32, 32, 64};
    s.block_strides = {1, 2, 1, 2};
    s.block_count = 4;
    s.input_shape = {3, 64, 64};
  } else if (name == "tiny-bottleneck") {
    s.name = name;
    s.family = Family::ResidualBottleneck;
    s.conv_stem = {16, 3, 2, true};
    s.block_widths = {4, 8, 8, 16};
    s.block_strides = {1, 2, 1, 2};
    s.block_count = 4;
    s.input_shape = {3, 64, 64};
  } else if (name == "tiny-vit") {
    s = vit(name, 6, 128, 4, 256, 4, 4);
    s.input_shape = {3, 32, 32};
  } else {
    throw SpecError("unknown backbone preset '" + name + "'");
  }
  s.num_classes = num_classes;
  s.validate();
  return s;
}

// Same block sequence and family as `spec` at a drastically reduced width and
// input size, for fast structural tests of the canonical presets.
inline BackboneSpec tiny_width(BackboneSpec spec, std::size_t width_divisor = 16) {
  spec.name += "@tiny";
  if (is_residual(spec.family)) {
    spec.conv_stem.out_channels = std::max<std::size_t>(1, spec.conv_stem.out_channels / width_divisor);
    for (auto& w : spec.block_widths) w = std::max<std::size_t>(1, w / width_divisor);
    spec.input_shape = {spec.input_shape.channels, 32, 32};
  } else {
    const std::size_t dim = 16;
    spec.tokenizer.embed_dim = dim;
    spec.block_widths.assign(spec.block_count, dim);
    spec.heads = 2;
    spec.mlp_dim = 32;
    const std::size_t side = spec.tokenizer.patch_size + spec.tokenizer.stride;
    spec.input_shape = {spec.input_shape.channels, side, side};
  }
  spec.validate();
  return spec;
}

}  // namespace progrow
