#pragma once

// Layer building blocks shared by the encoder, adapters, fusion network and
// reconstruction branches. Weights are [in, out]; token maps are [N, C].

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "bifuse/tensor.hpp"

namespace bifuse {

/// Named, ordered parameter collection. Entries alias module tensors.
using ParamSet = std::map<std::string, Tensor>;

/// FNV-1a over names, shapes and raw value bytes.
std::uint64_t checksum(const ParamSet& params);

/// Deterministic initializer; bit-identical across platforms for a given seed.
class InitRng {
 public:
  explicit InitRng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi);
  std::vector<double> uniform_vec(std::size_t n, double bound);

 private:
  std::mt19937_64 gen_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, InitRng& rng, bool trainable = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void zero_();
  void collect(const std::string& prefix, ParamSet& out) const;
  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  LayerNorm(std::size_t width, bool trainable = true);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamSet& out) const;
};

struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(std::size_t width, std::size_t hidden, InitRng& rng, bool trainable = true);
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& prefix, ParamSet& out) const;
};

/// Multi-head scaled dot-product attention with separate q/k/v/out projections.
struct MultiHeadAttention {
  Linear q, k, v, proj;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, InitRng& rng, bool trainable = true);
  /// queries[N, C] attend over context[M, C].
  Tensor operator()(const Tensor& queries, const Tensor& context) const;
  void collect(const std::string& prefix, ParamSet& out) const;
};

/// Pre-norm self-attention block.
struct TransformerBlock {
  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  Mlp mlp;

  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_hidden, InitRng& rng,
                   bool trainable = true);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamSet& out) const;
};

/// Pre-norm cross-attention block: the query stream attends to the context
/// stream, then a feedforward refines it. Both sublayers are residual.
struct CrossAttentionBlock {
  LayerNorm norm_q, norm_ctx, norm_ff;
  MultiHeadAttention attn;
  Mlp mlp;

  CrossAttentionBlock() = default;
  CrossAttentionBlock(std::size_t width, std::size_t heads, std::size_t mlp_hidden, InitRng& rng);
  Tensor operator()(const Tensor& query, const Tensor& context) const;
  void collect(const std::string& prefix, ParamSet& out) const;
};

/// Token map [h, w, in] -> image [h*r, w*r, channels] in (0, 1):
/// channel projection, pixel reassembly, sigmoid.
struct PixelHead {
  Linear proj;
  std::size_t scale = 1;
  std::size_t channels = 1;

  PixelHead() = default;
  PixelHead(std::size_t in, std::size_t channels, std::size_t scale, InitRng& rng);
  Tensor operator()(const Tensor& map) const;
  void collect(const std::string& prefix, ParamSet& out) const;
};

/// Fixed 2D sine/cosine code [gh*gw, d]: first half encodes the row, second
/// half the column.
Tensor sincos_position_code(std::size_t gh, std::size_t gw, std::size_t d, double scale);

/// [h, w, c] <-> [h*w, c] helpers.
Tensor to_tokens(const Tensor& map);
Tensor to_map(const Tensor& tokens, std::size_t h, std::size_t w);

}  // namespace bifuse
