#pragma once

// Hierarchical adapter: folds the pyramid deep -> shallow through three
// residual fusion stages, upsampling along the way.

#include <array>

#include "bifuse/backbone.hpp"
#include "bifuse/config.hpp"
#include "bifuse/nn.hpp"

namespace bifuse {

struct FuseStage {
  Linear deep_proj;     // deep path -> width
  Linear shallow_proj;  // shallow level -> width
  Linear out_proj;      // zero-initialized; the stage starts as its residual path
  std::optional<Linear> skip;  // only when the shallow width differs from the stage width
  std::size_t upsample = 1;

  FuseStage() = default;
  FuseStage(std::size_t deep_width, std::size_t shallow_width, std::size_t width, std::size_t upsample,
            InitRng& rng);

  /// deep, shallow: [h, w, c] maps; the coarser one is nearest-upsampled to the
  /// finer resolution. Returns residual(shallow) + out(gelu(deep' + shallow')),
  /// upsampled by `upsample`.
  Tensor operator()(const Tensor& deep, const Tensor& shallow) const;
  void collect(const std::string& prefix, ParamSet& out) const;
};

class Adapter {
 public:
  Adapter() = default;
  Adapter(std::size_t in_width, const AdapterConfig& config, InitRng& rng);

  /// pyramid levels [h, w, d] -> [h*U, w*U, width], U = product of stage factors.
  Tensor operator()(const FeaturePyramid& pyramid) const;
  Tensor adapt(const std::vector<Tensor>& levels) const;

  ParamSet params() const;
  std::size_t upsample_factor() const;
  std::array<FuseStage, 3>& stages() { return stages_; }

 private:
  std::array<FuseStage, 3> stages_;
};

/// The parameter-free replacement used by the no-adapter ablation: nearest
/// upsampling of the deepest level.
Tensor upsample_only(const FeaturePyramid& pyramid, std::size_t factor);

}  // namespace bifuse
