#include "bifuse/reconstruction.hpp"

namespace bifuse {

ReconstructionBranch::ReconstructionBranch(std::size_t width, std::size_t out_channels, const ReconConfig& config,
                                           std::size_t scale, InitRng& rng)
    : width_(width), norm_(width) {
  blocks_.reserve(config.blocks);
  for (std::size_t i = 0; i < config.blocks; ++i)
    blocks_.emplace_back(width, config.heads, width * config.mlp_ratio, rng);
  head_ = PixelHead(width, out_channels, scale, rng);
}

Tensor ReconstructionBranch::operator()(const Tensor& feature) const {
  if (feature.rank() != 3 || feature.dim(2) != width_) {
    throw ShapeError("reconstruct: expected [h,w," + std::to_string(width_) + "] feature, got " +
                     shape_str(feature.shape()));
  }
  const std::size_t h = feature.dim(0), w = feature.dim(1);
  Tensor t = to_tokens(feature) + sincos_position_code(h, w, width_, 1.0);
  for (const auto& b : blocks_) t = b(t);
  return head_(to_map(norm_(t), h, w));
}

ParamSet ReconstructionBranch::params() const {
  ParamSet ps;
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), ps);
  norm_.collect("norm", ps);
  head_.collect("head", ps);
  return ps;
}

}  // namespace bifuse
