#include "bifuse/losses.hpp"

#include <algorithm>
#include <cmath>

namespace bifuse {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double> kSobelX{-1, 0, 1, -2, 0, 2, -1, 0, 1};
const std::vector<double> kSobelY{-1, -2, -1, 0, 0, 0, 1, 2, 1};

Tensor as_plane(const Tensor& t, const char* what) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(2) == 1) return reshape(t, {t.dim(0), t.dim(1)});
  throw ShapeError(std::string(what) + ": expected a single-channel image, got " + shape_str(t.shape()));
}

Tensor elementwise_max(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.at(i), b.at(i));
  return Tensor::from(a.shape(), std::move(out));
}

// Repeat the border row and column once on every side: [H, W] -> [H+2, W+2].
Tensor pad_edge(const Tensor& img) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  Tensor rows = concat_rows({slice_rows(img, 0, 1), img, slice_rows(img, h - 1, 1)});
  return concat_cols({slice_cols(rows, 0, 1), rows, slice_cols(rows, w - 1, 1)});
}

}  // namespace

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    s += (g[i] = std::exp(-x * x / (2.0 * sigma * sigma)));
  }
  std::vector<double> w(size * size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) w[i * size + j] = g[i] * g[j] / (s * s);
  return w;
}

Tensor ssim(const Tensor& a_in, const Tensor& b_in, std::size_t window, double sigma) {
  Tensor a = as_plane(a_in, "ssim"), b = as_plane(b_in, "ssim");
  if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.dim(0) < window || a.dim(1) < window) {
    throw ShapeError("ssim: image " + shape_str(a.shape()) + " is smaller than the " + std::to_string(window) + "x" +
                     std::to_string(window) + " window");
  }
  const auto k = gaussian_window(window, sigma);
  auto filt = [&](const Tensor& t) { return filter2d(t, k, window, window, 0); };
  Tensor mu_a = filt(a), mu_b = filt(b);
  Tensor mu_aa = mu_a * mu_a, mu_bb = mu_b * mu_b, mu_ab = mu_a * mu_b;
  Tensor var_a = filt(a * a) - mu_aa;
  Tensor var_b = filt(b * b) - mu_bb;
  Tensor cov = filt(a * b) - mu_ab;
  Tensor num = add_scalar(mu_ab * 2.0, kC1) * add_scalar(cov * 2.0, kC2);
  Tensor den = add_scalar(mu_aa + mu_bb, kC1) * add_scalar(var_a + var_b, kC2);
  return mean(num / den);
}

Tensor sobel_magnitude(const Tensor& img_in) {
  Tensor img = as_plane(img_in, "sobel");
  Tensor padded = pad_edge(img);
  return abs(filter2d(padded, kSobelX, 3, 3, 0)) + abs(filter2d(padded, kSobelY, 3, 3, 0));
}

Loss reconstruction_loss(const Tensor& rec_x, const Tensor& target_x, const Tensor& rec_y, const Tensor& target_y) {
  if (rec_x.shape() != target_x.shape() || rec_y.shape() != target_y.shape()) {
    throw ShapeError("reconstruction_loss: shape mismatch (" + shape_str(rec_x.shape()) + " vs " +
                     shape_str(target_x.shape()) + ", " + shape_str(rec_y.shape()) + " vs " +
                     shape_str(target_y.shape()) + ")");
  }
  Tensor lx = mean(abs(rec_x - target_x));
  Tensor ly = mean(abs(rec_y - target_y));
  Loss out{lx + ly, {}};
  out.parts.terms = {{"recon_x", lx.item()}, {"recon_y", ly.item()}};
  out.parts.weights = {{"recon_x", 1.0}, {"recon_y", 1.0}};
  out.parts.total = out.value.item();
  return out;
}

Loss fusion_loss(const Tensor& fused_in, const Tensor& x_in, const Tensor& y_in, const LossConfig& w) {
  Tensor f = as_plane(fused_in, "fusion_loss");
  Tensor x = as_plane(x_in, "fusion_loss").detach();
  Tensor y = as_plane(y_in, "fusion_loss").detach();
  if (f.shape() != x.shape() || f.shape() != y.shape()) {
    throw ShapeError("fusion_loss: shape mismatch " + shape_str(f.shape()) + ", " + shape_str(x.shape()) + ", " +
                     shape_str(y.shape()));
  }

  Tensor intensity = mean(abs(f - elementwise_max(x, y)));

  Tensor grad_target;
  {
    NoGradGuard ng;
    grad_target = elementwise_max(sobel_magnitude(x), sobel_magnitude(y));
  }
  Tensor gradient = mean(abs(sobel_magnitude(f) - grad_target));

  Tensor sx = ssim(f, x, w.ssim_window, w.ssim_sigma);
  Tensor sy = ssim(f, y, w.ssim_window, w.ssim_sigma);
  Tensor ssim_term = mul_scalar(add_scalar(mul_scalar(sx, -1.0), 1.0) + add_scalar(mul_scalar(sy, -1.0), 1.0), 0.5);

  Tensor total = intensity * w.intensity + gradient * w.gradient + ssim_term * w.ssim;
  Loss out{total, {}};
  out.parts.terms = {{"intensity", intensity.item()}, {"gradient", gradient.item()}, {"ssim", ssim_term.item()}};
  out.parts.weights = {{"intensity", w.intensity}, {"gradient", w.gradient}, {"ssim", w.ssim}};
  out.parts.total = total.item();
  return out;
}

LossBreakdown combine(const LossBreakdown& a, const LossBreakdown& b) {
  LossBreakdown out = a;
  out.total = a.total + b.total;
  for (const auto& [k, v] : b.terms) out.terms[k] = v;
  for (const auto& [k, v] : b.weights) out.weights[k] = v;
  return out;
}

}  // namespace bifuse
