#pragma once

#include <cstddef>
#include <vector>

#include "bifuse/tensor.hpp"

namespace bifuse {

/// H x W x C intensities in [0, 1], row-major, channels interleaved.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t ch = 0) { return data[(y * width + x) * channels + ch]; }
  double at(std::size_t y, std::size_t x, std::size_t ch = 0) const {
    return data[(y * width + x) * channels + ch];
  }
  std::size_t size() const { return data.size(); }
  bool same_geometry(const Image& o) const { return height == o.height && width == o.width; }
};

// BT.601 luma weights.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

/// Single-channel luminance; 1-channel inputs are returned unchanged.
Image luminance(const Image& img);
/// Replicate a 1-channel image to `channels`; no-op when already matching.
Image expand_channels(const Image& img, std::size_t channels);
/// Convert to the requested channel count (luma for 3->1, replication for 1->3).
Image to_channels(const Image& img, std::size_t channels);
Image crop(const Image& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w);
Image hflip(const Image& img);
Image clamp01(const Image& img);

/// [H, W, C] tensor view of an image (no grad).
Tensor to_tensor(const Image& img);
/// Tensor [H, W, C] or [H, W] back to an image.
Image from_tensor(const Tensor& t);

}  // namespace bifuse
