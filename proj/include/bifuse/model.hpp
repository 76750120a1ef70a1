#pragma once

// Full two-stream model: frozen encoder(s) -> per-modality adapters ->
// bidirectional fusion network, plus the reconstruction branches used by the
// inner objective.

#include <memory>
#include <optional>

#include "bifuse/adapter.hpp"
#include "bifuse/backbone.hpp"
#include "bifuse/bilevel.hpp"
#include "bifuse/config.hpp"
#include "bifuse/fusion_net.hpp"
#include "bifuse/image.hpp"
#include "bifuse/reconstruction.hpp"

namespace bifuse {

struct PyramidPair {
  FeaturePyramid x;
  FeaturePyramid y;
};

class FusionModel {
 public:
  /// Builds every module from cfg (already validated). Trainable modules are
  /// initialized from cfg.seed, the encoder from cfg.encoder.
  FusionModel(const RunConfig& cfg, std::size_t channels_x, std::size_t channels_y);

  const RunConfig& config() const { return cfg_; }
  std::size_t channels_x() const { return cx_; }
  std::size_t channels_y() const { return cy_; }
  /// Latent-to-image factor of the pixel heads.
  std::size_t latent_scale() const { return scale_; }

  PyramidPair encode(const Tensor& x, const Tensor& y) const;
  LatentPair adapt(const PyramidPair& p) const;
  Tensor fuse(const LatentPair& z) const { return fusion_(z); }
  Tensor fused_stream(const LatentPair& z) const { return fusion_.fused_stream(z); }
  bool has_reconstruction() const { return recon_x_.has_value(); }
  /// (rec_x, rec_y); throws std::logic_error when the branches are disabled.
  std::pair<Tensor, Tensor> reconstruct(const LatentPair& z) const;
  /// Replace the reconstruction branches by freshly initialized ones.
  void reset_reconstruction(std::uint64_t seed);

  /// Adapters, reconstruction branches and a trainable encoder.
  ParamSet phi() const;
  /// Fusion network.
  ParamSet theta() const;
  /// Frozen encoder tensors (empty when the encoder is trainable).
  ParamSet frozen() const;
  ParamPartition partition() const { return {phi(), theta()}; }
  std::uint64_t encoder_checksum() const;

  /// Gradient-free fused luminance of a full image pair of any size: reflect
  /// pad to the patch size, fuse, crop back. Output is 1 channel in [0, 1].
  Image fuse_image(const Image& x, const Image& y) const;
  /// Latents and fused stream for a padded image pair (no gradients).
  struct Features {
    Tensor zx, zy, fused;
  };
  Features features(const Image& x, const Image& y) const;

 private:
  Tensor adapt_one(const Adapter* adapter, const FeaturePyramid& p) const;

  RunConfig cfg_;
  std::size_t cx_, cy_;
  std::size_t scale_ = 1;
  std::shared_ptr<FrozenEncoder> enc_x_;
  std::shared_ptr<FrozenEncoder> enc_y_;  // same object unless separate_instances
  std::optional<Adapter> adapter_x_;
  std::optional<Adapter> adapter_y_;  // empty when shared or disabled
  FusionNet fusion_;
  std::optional<ReconstructionBranch> recon_x_;
  std::optional<ReconstructionBranch> recon_y_;
};

}  // namespace bifuse
