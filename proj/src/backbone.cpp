#include "bifuse/backbone.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "bifuse/archive.hpp"

namespace bifuse {

namespace {

// Fixed sinusoidal position code is small relative to patch embeddings so
// patch content dominates the token identity.
constexpr double kPositionScale = 0.02;

void check_config(const EncoderConfig& c) {
  std::vector<std::string> p;
  if (c.depth == 0) p.push_back("encoder.depth: must be at least 1");
  if (c.tap_layers.size() != 4) p.push_back("encoder.tap_layers: exactly 4 layers are required");
  for (std::size_t i = 0; i < c.tap_layers.size(); ++i) {
    if (c.tap_layers[i] >= c.depth) {
      p.push_back("encoder.tap_layers: layer " + std::to_string(c.tap_layers[i]) + " >= depth " +
                  std::to_string(c.depth));
    }
    if (i > 0 && c.tap_layers[i] <= c.tap_layers[i - 1]) p.push_back("encoder.tap_layers: must be strictly increasing");
  }
  if (c.patch_size == 0) p.push_back("encoder.patch_size: must be at least 1");
  if (c.heads == 0 || c.embed_dim % c.heads != 0) p.push_back("encoder.heads: must divide encoder.embed_dim");
  if (!p.empty()) throw ConfigError(p);
}

}  // namespace

FrozenEncoder FrozenEncoder::build(const EncoderConfig& config, std::uint64_t seed) {
  check_config(config);
  FrozenEncoder enc;
  enc.config_ = config;
  const std::size_t d = config.embed_dim, p = config.patch_size;
  const bool train = config.trainable;
  InitRng rng(seed);
  enc.patch_embed_ = Linear(p * p * 3, d, rng, train);
  enc.blocks_.reserve(config.depth);
  for (std::size_t i = 0; i < config.depth; ++i)
    enc.blocks_.emplace_back(d, config.heads, d * config.mlp_ratio, rng, train);

  if (!config.weight_file.empty()) {
    const TensorArchive archive = TensorArchive::load(config.weight_file);
    ParamSet ps = enc.params();
    archive.load_all("", ps);
    auto optional_token = [&](const char* name) -> std::optional<Tensor> {
      auto it = archive.tensors.find(name);
      if (it == archive.tensors.end()) return std::nullopt;
      if (it->second.shape.size() != 2 || it->second.shape[1] != d) {
        throw LoadError(std::string("tensor '") + name + "' has shape " + shape_str(it->second.shape) +
                        ", expected [n," + std::to_string(d) + "]");
      }
      return train ? Tensor::parameter(it->second.shape, it->second.values)
                   : Tensor::from(it->second.shape, it->second.values);
    };
    enc.cls_token_ = optional_token("cls_token");
    enc.register_tokens_ = optional_token("register_tokens");
    for (const auto& [name, t] : archive.tensors) {
      if (!ps.count(name) && name != "cls_token" && name != "register_tokens") {
        spdlog::warn("encoder weights: ignoring unused tensor '{}'", name);
      }
    }
  }
  return enc;
}

ParamSet FrozenEncoder::params() const {
  ParamSet ps;
  patch_embed_.collect("patch_embed", ps);
  if (cls_token_) ps.emplace("cls_token", *cls_token_);
  if (register_tokens_) ps.emplace("register_tokens", *register_tokens_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("blocks." + std::to_string(i), ps);
  return ps;
}

Tensor FrozenEncoder::patchify(const Tensor& image) const {
  if (image.rank() != 3) throw ShapeError("encoder input must be [H,W,C], got " + shape_str(image.shape()));
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2), p = config_.patch_size;
  if (C != 1 && C != 3) throw ShapeError("encoder input must have 1 or 3 channels, got " + std::to_string(C));
  if (H % p != 0 || W % p != 0 || H == 0 || W == 0) {
    throw ShapeError("encoder input " + std::to_string(H) + "x" + std::to_string(W) +
                     " is not a multiple of patch size " + std::to_string(p) + "; pad the image first");
  }
  const std::size_t gh = H / p, gw = W / p, row = p * p * 3;
  std::vector<double> out(gh * gw * row);
  auto v = image.value();
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t src = ((i * p + dy) * W + (j * p + dx)) * C + (C == 1 ? 0 : c);
            out[(i * gw + j) * row + (dy * p + dx) * 3 + c] = v[src];
          }
  // The image is a leaf; nothing upstream of the encoder takes gradients.
  return Tensor::from({gh * gw, row}, std::move(out));
}

Tensor FrozenEncoder::position_code(std::size_t gh, std::size_t gw) const {
  return sincos_position_code(gh, gw, config_.embed_dim, kPositionScale);
}

FeaturePyramid FrozenEncoder::extract(const Tensor& image) const {
  const std::size_t gh = image.rank() == 3 ? image.dim(0) / config_.patch_size : 0;
  const std::size_t gw = image.rank() == 3 ? image.dim(1) / config_.patch_size : 0;
  Tensor x = patch_embed_(patchify(image)) + position_code(gh, gw);

  std::size_t prefix = 0;
  if (cls_token_ || register_tokens_) {
    std::vector<Tensor> parts;
    if (cls_token_) parts.push_back(*cls_token_);
    if (register_tokens_) parts.push_back(*register_tokens_);
    for (const auto& t : parts) prefix += t.dim(0);
    parts.push_back(x);
    x = concat_rows(parts);
  }

  FeaturePyramid pyr;
  std::size_t level = 0;
  for (std::size_t i = 0; i < blocks_.size() && level < 4; ++i) {
    x = blocks_[i](x);
    if (i == config_.tap_layers[level]) {
      Tensor patches = prefix ? slice_rows(x, prefix, gh * gw) : x;
      pyr.levels[level++] = to_map(patches, gh, gw);
    }
  }
  return pyr;
}

void save_encoder_weights(const FrozenEncoder& encoder, const std::string& path) {
  TensorArchive a;
  a.metadata = nlohmann::json{{"kind", "encoder_weights"}, {"embed_dim", encoder.config().embed_dim},
                              {"depth", encoder.config().depth}, {"patch_size", encoder.config().patch_size}}
                   .dump();
  a.put_all("", encoder.params());
  a.save(path);
}

}  // namespace bifuse
