#include "bifuse/nn.hpp"

#include <cmath>
#include <algorithm>
#include <cstring>

namespace bifuse {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

Tensor make_param(Shape shape, std::vector<double> data, bool trainable) {
  return trainable ? Tensor::parameter(std::move(shape), std::move(data))
                   : Tensor::from(std::move(shape), std::move(data));
}

}  // namespace

std::uint64_t checksum(const ParamSet& params) {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : params) {
    fnv(h, name.data(), name.size());
    for (auto d : t.shape()) {
      const auto d64 = static_cast<std::uint64_t>(d);
      fnv(h, &d64, sizeof d64);
    }
    fnv(h, t.value().data(), t.numel() * sizeof(double));
  }
  return h;
}

double InitRng::uniform(double lo, double hi) {
  // 53 random mantissa bits -> [0, 1)
  const double u = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

std::vector<double> InitRng::uniform_vec(std::size_t n, double bound) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(-bound, bound);
  return v;
}

Linear::Linear(std::size_t in, std::size_t out, InitRng& rng, bool trainable) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = make_param({in, out}, rng.uniform_vec(in * out, bound), trainable);
  bias = make_param({out}, std::vector<double>(out, 0.0), trainable);
}

void Linear::zero_() {
  for (auto& v : weight.mutable_value()) v = 0.0;
  for (auto& v : bias.mutable_value()) v = 0.0;
}

void Linear::collect(const std::string& prefix, ParamSet& out) const {
  out.emplace(prefix + ".weight", weight);
  out.emplace(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t width, bool trainable)
    : gamma(make_param({width}, std::vector<double>(width, 1.0), trainable)),
      beta(make_param({width}, std::vector<double>(width, 0.0), trainable)) {}

void LayerNorm::collect(const std::string& prefix, ParamSet& out) const {
  out.emplace(prefix + ".weight", gamma);
  out.emplace(prefix + ".bias", beta);
}

Mlp::Mlp(std::size_t width, std::size_t hidden, InitRng& rng, bool trainable)
    : fc1(width, hidden, rng, trainable), fc2(hidden, width, rng, trainable) {}

void Mlp::collect(const std::string& prefix, ParamSet& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads_, InitRng& rng, bool trainable)
    : q(width, width, rng, trainable),
      k(width, width, rng, trainable),
      v(width, width, rng, trainable),
      proj(width, width, rng, trainable),
      heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("attention width " + std::to_string(width) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& context) const {
  const std::size_t width = q.in();
  if (queries.dim(1) != width || context.dim(1) != width) {
    throw ShapeError("attention: width mismatch, query " + shape_str(queries.shape()) + " context " +
                     shape_str(context.shape()) + " expected " + std::to_string(width));
  }
  return proj(multi_head_attention(q(queries), k(context), v(context), heads));
}

void MultiHeadAttention::collect(const std::string& prefix, ParamSet& out) const {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  proj.collect(prefix + ".proj", out);
}

TransformerBlock::TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_hidden, InitRng& rng,
                                   bool trainable)
    : norm1(width, trainable),
      norm2(width, trainable),
      attn(width, heads, rng, trainable),
      mlp(width, mlp_hidden, rng, trainable) {}

Tensor TransformerBlock::operator()(const Tensor& x) const {
  Tensor h = norm1(x);
  Tensor y = x + attn(h, h);
  return y + mlp(norm2(y));
}

void TransformerBlock::collect(const std::string& prefix, ParamSet& out) const {
  norm1.collect(prefix + ".norm1", out);
  norm2.collect(prefix + ".norm2", out);
  attn.collect(prefix + ".attn", out);
  mlp.collect(prefix + ".mlp", out);
}

CrossAttentionBlock::CrossAttentionBlock(std::size_t width, std::size_t heads, std::size_t mlp_hidden,
                                         InitRng& rng)
    : norm_q(width), norm_ctx(width), norm_ff(width), attn(width, heads, rng), mlp(width, mlp_hidden, rng) {}

Tensor CrossAttentionBlock::operator()(const Tensor& query, const Tensor& context) const {
  if (query.dim(1) != context.dim(1)) {
    throw ShapeError("cross-attention: query width " + std::to_string(query.dim(1)) + " != context width " +
                     std::to_string(context.dim(1)));
  }
  Tensor y = query + attn(norm_q(query), norm_ctx(context));
  return y + mlp(norm_ff(y));
}

void CrossAttentionBlock::collect(const std::string& prefix, ParamSet& out) const {
  norm_q.collect(prefix + ".norm_q", out);
  norm_ctx.collect(prefix + ".norm_ctx", out);
  norm_ff.collect(prefix + ".norm_ff", out);
  attn.collect(prefix + ".attn", out);
  mlp.collect(prefix + ".mlp", out);
}

PixelHead::PixelHead(std::size_t in, std::size_t channels_, std::size_t scale_, InitRng& rng)
    : proj(in, channels_ * scale_ * scale_, rng), scale(scale_), channels(channels_) {}

Tensor PixelHead::operator()(const Tensor& map) const {
  const std::size_t h = map.dim(0), w = map.dim(1);
  Tensor t = proj(to_tokens(map));
  return sigmoid(pixel_shuffle(to_map(t, h, w), scale));
}

void PixelHead::collect(const std::string& prefix, ParamSet& out) const { proj.collect(prefix + ".proj", out); }

Tensor sincos_position_code(std::size_t gh, std::size_t gw, std::size_t d, double scale) {
  const std::size_t half = d / 2;
  std::vector<double> pe(gh * gw * d, 0.0);
  const std::size_t nfreq = std::max<std::size_t>(half / 2, 1);
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j) {
      double* t = &pe[(i * gw + j) * d];
      for (std::size_t k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(k / 2) / static_cast<double>(nfreq));
        const double ang_r = static_cast<double>(i) * freq, ang_c = static_cast<double>(j) * freq;
        t[k] = scale * (k % 2 == 0 ? std::sin(ang_r) : std::cos(ang_r));
        if (half + k < d) t[half + k] = scale * (k % 2 == 0 ? std::sin(ang_c) : std::cos(ang_c));
      }
    }
  return Tensor::from({gh * gw, d}, std::move(pe));
}

Tensor to_tokens(const Tensor& map) {
  if (map.rank() != 3) throw ShapeError("to_tokens: expected [h,w,c], got " + shape_str(map.shape()));
  return reshape(map, {map.dim(0) * map.dim(1), map.dim(2)});
}

Tensor to_map(const Tensor& tokens, std::size_t h, std::size_t w) {
  if (tokens.rank() != 2 || tokens.dim(0) != h * w) {
    throw ShapeError("to_map: " + shape_str(tokens.shape()) + " is not " + std::to_string(h) + "x" +
                     std::to_string(w) + " tokens");
  }
  return reshape(tokens, {h, w, tokens.dim(1)});
}

}  // namespace bifuse
