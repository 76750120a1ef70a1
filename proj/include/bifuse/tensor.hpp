#pragma once

// Minimal reverse-mode autodiff over dense double-precision tensors.
//
// A Tensor is a shared handle to a graph node. Operations record a backward
// closure only when grad mode is on and at least one input requires grad, so
// inference and frozen-encoder passes build no graph at all.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bifuse {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    grad[i] += g;
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double v) { return from({1}, {v}); }
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  std::vector<double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  /// Backpropagate from a scalar, seeding d(self)/d(self) = seed.
  void backward(double seed = 1.0) const;

  /// Same values, no history.
  Tensor detach() const;
  /// Deep copy of values (and requires_grad flag for leaves).
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

// ---- reductions ------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- shape -----------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
/// Columns [start, start+count) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
/// Concatenate rank-2 tensors along columns.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Rows [start, start+count) of a rank-2 tensor.
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);

// ---- linear algebra --------------------------------------------------------
/// a[N,K] x b[K,M], or a[N,K] x b[M,K]^T when transpose_b.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// x[N,K] w[K,M] + bias[M].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor softmax_rows(const Tensor& a);
/// Multi-head scaled dot-product attention: q[N,C] over k[M,C], v[M,C],
/// heads splitting C into contiguous column blocks. Only the attention
/// weights are kept for the backward pass.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);
/// Row-wise layer normalization of x[N,C] with affine gamma[C], beta[C].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- spatial (maps are [H, W, C]) -----------------------------------------
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
/// [H, W, C*r*r] -> [H*r, W*r, C]; channel index = c*r*r + dy*r + dx.
Tensor pixel_shuffle(const Tensor& x, std::size_t r);
/// Single-channel 2-D correlation of x[H,W] with a constant kernel, zero padded
/// by `pad` on each side; output is (H+2p-kh+1) x (W+2p-kw+1).
Tensor filter2d(const Tensor& x, const std::vector<double>& kernel, std::size_t kh, std::size_t kw,
                std::size_t pad);

}  // namespace bifuse
