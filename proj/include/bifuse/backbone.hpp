#pragma once

// Vision-transformer encoder exposing a four-level intermediate feature pyramid.
//
// Weight-file manifest (tensor archive names, weights stored [in, out]):
//   patch_embed.weight        [patch*patch*3, dim]  rows ordered (dy, dx, rgb)
//   patch_embed.bias          [dim]
//   cls_token                 [1, dim]        optional, dropped from the pyramid
//   register_tokens           [R, dim]        optional, dropped from the pyramid
//   blocks.{i}.norm1.weight / .bias           [dim]
//   blocks.{i}.attn.{q,k,v,proj}.weight       [dim, dim]
//   blocks.{i}.attn.{q,k,v,proj}.bias         [dim]
//   blocks.{i}.norm2.weight / .bias           [dim]
//   blocks.{i}.mlp.fc1.weight / .bias         [dim, dim*mlp_ratio] / [dim*mlp_ratio]
//   blocks.{i}.mlp.fc2.weight / .bias         [dim*mlp_ratio, dim] / [dim]

#include <array>
#include <cstdint>
#include <optional>

#include "bifuse/config.hpp"
#include "bifuse/nn.hpp"

namespace bifuse {

/// Four [h, w, dim] maps, shallow to deep.
struct FeaturePyramid {
  std::array<Tensor, 4> levels;
};

class FrozenEncoder {
 public:
  /// Weights come from config.weight_file when set, otherwise from `seed`.
  /// A trainable encoder (config.trainable) registers requires-grad tensors.
  static FrozenEncoder build(const EncoderConfig& config, std::uint64_t seed);

  /// image: [H, W, C] with C in {1, 3}; H and W multiples of the patch size.
  FeaturePyramid extract(const Tensor& image) const;

  /// Tensors keyed by the weight-file manifest names.
  ParamSet params() const;
  std::uint64_t weights_checksum() const { return checksum(params()); }
  const EncoderConfig& config() const { return config_; }
  bool trainable() const { return config_.trainable; }

 private:
  FrozenEncoder() = default;
  Tensor patchify(const Tensor& image) const;
  Tensor position_code(std::size_t gh, std::size_t gw) const;

  EncoderConfig config_;
  Linear patch_embed_;
  std::optional<Tensor> cls_token_;
  std::optional<Tensor> register_tokens_;
  std::vector<TransformerBlock> blocks_;
};

/// Save an encoder's weights in the manifest layout.
void save_encoder_weights(const FrozenEncoder& encoder, const std::string& path);

}  // namespace bifuse
