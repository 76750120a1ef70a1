#include "bifuse/image.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace bifuse {

Image luminance(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw ShapeError("luminance: expected 1 or 3 channels, got " + std::to_string(img.channels));
  Image out(img.height, img.width, 1);
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    const double* p = &img.data[i * 3];
    out.data[i] = kLumaR * p[0] + kLumaG * p[1] + kLumaB * p[2];
  }
  return out;
}

Image expand_channels(const Image& img, std::size_t channels) {
  if (img.channels == channels) return img;
  if (img.channels != 1) {
    throw ShapeError("expand_channels: cannot expand " + std::to_string(img.channels) + " channels");
  }
  Image out(img.height, img.width, channels);
  for (std::size_t i = 0; i < img.height * img.width; ++i)
    for (std::size_t c = 0; c < channels; ++c) out.data[i * channels + c] = img.data[i];
  return out;
}

Image to_channels(const Image& img, std::size_t channels) {
  if (img.channels == channels) return img;
  if (channels == 1) return luminance(img);
  return expand_channels(img, channels);
}

Image crop(const Image& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  if (y + h > img.height || x + w > img.width) throw ShapeError("crop window exceeds image");
  Image out(h, w, img.channels);
  for (std::size_t i = 0; i < h; ++i) {
    const auto src = img.data.begin() + static_cast<std::ptrdiff_t>(((y + i) * img.width + x) * img.channels);
    std::copy_n(src, w * img.channels, out.data.begin() + static_cast<std::ptrdiff_t>(i * w * img.channels));
  }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.height; ++i)
    for (std::size_t j = 0; j < img.width; ++j)
      for (std::size_t c = 0; c < img.channels; ++c) out.at(i, j, c) = img.at(i, img.width - 1 - j, c);
  return out;
}

Image clamp01(const Image& img) {
  Image out = img;
  for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Tensor to_tensor(const Image& img) { return Tensor::from({img.height, img.width, img.channels}, img.data); }

Image from_tensor(const Tensor& t) {
  if (t.rank() != 2 && t.rank() != 3) throw ShapeError("from_tensor: expected rank 2 or 3, got " + shape_str(t.shape()));
  Image out(t.dim(0), t.dim(1), t.rank() == 3 ? t.dim(2) : 1);
  std::copy(t.value().begin(), t.value().end(), out.data.begin());
  return out;
}

}  // namespace bifuse
