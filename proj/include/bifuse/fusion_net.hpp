#pragma once

#include <vector>

#include "bifuse/config.hpp"
#include "bifuse/nn.hpp"

namespace bifuse {

/// Adapted features of the two modalities, [h, w, c] each.
struct LatentPair {
  Tensor x;
  Tensor y;
};

/// One bidirectional stage: x attends to y and y attends to x, each with its
/// own parameters, both reading the stage inputs.
struct BidirectionalBlock {
  CrossAttentionBlock x_from_y;
  CrossAttentionBlock y_from_x;

  BidirectionalBlock() = default;
  BidirectionalBlock(std::size_t width, std::size_t heads, std::size_t mlp_hidden, InitRng& rng)
      : x_from_y(width, heads, mlp_hidden, rng), y_from_x(width, heads, mlp_hidden, rng) {}
};

class FusionNet {
 public:
  FusionNet() = default;
  /// `scale` is the pixel-reassembly factor from latent to image resolution.
  FusionNet(std::size_t width, const FusionConfig& config, std::size_t scale, InitRng& rng);

  /// Fused luminance [h*scale, w*scale, 1] in (0, 1).
  Tensor operator()(const LatentPair& pair) const;
  /// The two streams after the last block, channel-concatenated: [h, w, 2*width].
  Tensor fused_stream(const LatentPair& pair) const;

  ParamSet params() const;
  std::vector<BidirectionalBlock>& blocks() { return blocks_; }
  PixelHead& head() { return head_; }

 private:
  std::vector<BidirectionalBlock> blocks_;
  LayerNorm head_norm_;
  PixelHead head_;
};

}  // namespace bifuse
