#pragma once

#include <vector>

#include "bifuse/config.hpp"
#include "bifuse/nn.hpp"

namespace bifuse {

/// Decoder mapping an adapted feature back to its source image: transformer
/// blocks over the flattened map, then the same pixel head as the fusion net.
class ReconstructionBranch {
 public:
  ReconstructionBranch() = default;
  ReconstructionBranch(std::size_t width, std::size_t out_channels, const ReconConfig& config, std::size_t scale,
                       InitRng& rng);

  /// feature [h, w, width] -> image [h*scale, w*scale, out_channels] in (0, 1).
  Tensor operator()(const Tensor& feature) const;

  ParamSet params() const;
  std::size_t out_channels() const { return head_.channels; }
  PixelHead& head() { return head_; }

 private:
  std::size_t width_ = 0;
  std::vector<TransformerBlock> blocks_;
  LayerNorm norm_;
  PixelHead head_;
};

}  // namespace bifuse
