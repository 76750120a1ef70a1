#pragma once

// Inner (reconstruction) and outer (fusion) training objectives.

#include <map>
#include <string>
#include <vector>

#include "bifuse/config.hpp"
#include "bifuse/tensor.hpp"

namespace bifuse {

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> terms;
  std::map<std::string, double> weights;
};

/// Differentiable scalar plus its per-term report.
struct Loss {
  Tensor value;
  LossBreakdown parts;
};

/// Normalized size x size Gaussian window, row-major.
std::vector<double> gaussian_window(std::size_t size, double sigma);

/// Mean SSIM over all fully-contained windows (valid filtering) of two
/// single-channel images [H, W] or [H, W, 1] in [0, 1]; C1 = 0.01^2, C2 = 0.03^2.
Tensor ssim(const Tensor& a, const Tensor& b, std::size_t window = 11, double sigma = 1.5);

/// Sobel magnitude |Gx| + |Gy| with edge-replicated borders; [H, W] -> [H, W].
Tensor sobel_magnitude(const Tensor& img);

/// recon_x = mean|rec_x - I_x|, recon_y likewise, total = recon_x + recon_y.
Loss reconstruction_loss(const Tensor& rec_x, const Tensor& target_x, const Tensor& rec_y, const Tensor& target_y);

/// Intensity, gradient and SSIM terms against the two sources (all luminance,
/// [H, W] or [H, W, 1]); only `fused` is expected to carry gradients.
Loss fusion_loss(const Tensor& fused, const Tensor& source_x, const Tensor& source_y, const LossConfig& weights);

/// Weighted sum of two breakdowns (used by the joint-update ablation).
LossBreakdown combine(const LossBreakdown& a, const LossBreakdown& b);

}  // namespace bifuse
