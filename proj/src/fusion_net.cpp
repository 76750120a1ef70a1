#include "bifuse/fusion_net.hpp"

namespace bifuse {

FusionNet::FusionNet(std::size_t width, const FusionConfig& config, std::size_t scale, InitRng& rng)
    : head_norm_(2 * width) {
  blocks_.reserve(config.blocks);
  for (std::size_t i = 0; i < config.blocks; ++i)
    blocks_.emplace_back(width, config.heads, width * config.mlp_ratio, rng);
  head_ = PixelHead(2 * width, 1, scale, rng);
}

Tensor FusionNet::fused_stream(const LatentPair& pair) const {
  if (pair.x.shape() != pair.y.shape() || pair.x.rank() != 3) {
    throw ShapeError("fuse: latent shapes differ, " + shape_str(pair.x.shape()) + " vs " + shape_str(pair.y.shape()));
  }
  const std::size_t h = pair.x.dim(0), w = pair.x.dim(1);
  const Tensor pos = sincos_position_code(h, w, pair.x.dim(2), 1.0);
  Tensor x = to_tokens(pair.x) + pos, y = to_tokens(pair.y) + pos;
  for (const auto& b : blocks_) {
    Tensor nx = b.x_from_y(x, y);
    Tensor ny = b.y_from_x(y, x);
    x = nx;
    y = ny;
  }
  return to_map(concat_cols({x, y}), h, w);
}

Tensor FusionNet::operator()(const LatentPair& pair) const {
  Tensor stream = fused_stream(pair);
  const std::size_t h = stream.dim(0), w = stream.dim(1);
  return head_(to_map(head_norm_(to_tokens(stream)), h, w));
}

ParamSet FusionNet::params() const {
  ParamSet ps;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    blocks_[i].x_from_y.collect(p + ".x_from_y", ps);
    blocks_[i].y_from_x.collect(p + ".y_from_x", ps);
  }
  head_norm_.collect("head_norm", ps);
  head_.collect("head", ps);
  return ps;
}

}  // namespace bifuse
