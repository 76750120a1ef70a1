#include "bifuse/model.hpp"

#include <stdexcept>

#include "bifuse/data_io.hpp"

namespace bifuse {

namespace {

void add_prefixed(ParamSet& out, const std::string& prefix, const ParamSet& in) {
  for (const auto& [name, t] : in) out.emplace(prefix + name, t);
}

}  // namespace

FusionModel::FusionModel(const RunConfig& cfg, std::size_t channels_x, std::size_t channels_y)
    : cfg_(cfg), cx_(channels_x), cy_(channels_y) {
  std::size_t up = 1;
  for (auto f : cfg.adapter.upsample) up *= f;
  if (cfg.encoder.patch_size % up != 0) {
    throw ConfigError({"adapter.upsample: total factor " + std::to_string(up) + " must divide encoder.patch_size " +
                       std::to_string(cfg.encoder.patch_size)});
  }
  scale_ = cfg.encoder.patch_size / up;

  enc_x_ = std::make_shared<FrozenEncoder>(FrozenEncoder::build(cfg.encoder, cfg.encoder.seed));
  enc_y_ = cfg.encoder.separate_instances
               ? std::make_shared<FrozenEncoder>(FrozenEncoder::build(cfg.encoder, cfg.encoder.seed + 1))
               : enc_x_;

  InitRng rng(cfg.seed);
  const std::size_t d = cfg.encoder.embed_dim, w = cfg.adapter.width;
  if (cfg.adapter.enabled) {
    adapter_x_.emplace(d, cfg.adapter, rng);
    if (!cfg.adapter.shared) adapter_y_.emplace(d, cfg.adapter, rng);
  }
  fusion_ = FusionNet(w, cfg.fusion, scale_, rng);
  if (cfg.reconstruction.enabled) {
    recon_x_.emplace(w, cx_, cfg.reconstruction, scale_, rng);
    recon_y_.emplace(w, cy_, cfg.reconstruction, scale_, rng);
  }
}

PyramidPair FusionModel::encode(const Tensor& x, const Tensor& y) const {
  return {enc_x_->extract(x), enc_y_->extract(y)};
}

Tensor FusionModel::adapt_one(const Adapter* adapter, const FeaturePyramid& p) const {
  if (!adapter) {
    std::size_t up = 1;
    for (auto f : cfg_.adapter.upsample) up *= f;
    return upsample_only(p, up);
  }
  return (*adapter)(p);
}

LatentPair FusionModel::adapt(const PyramidPair& p) const {
  const Adapter* ax = adapter_x_ ? &*adapter_x_ : nullptr;
  const Adapter* ay = adapter_y_ ? &*adapter_y_ : ax;
  return {adapt_one(ax, p.x), adapt_one(ay, p.y)};
}

std::pair<Tensor, Tensor> FusionModel::reconstruct(const LatentPair& z) const {
  if (!recon_x_) throw std::logic_error("reconstruct: reconstruction branches are disabled");
  return {(*recon_x_)(z.x), (*recon_y_)(z.y)};
}

void FusionModel::reset_reconstruction(std::uint64_t seed) {
  InitRng rng(seed);
  ReconConfig rc = cfg_.reconstruction;
  rc.enabled = true;
  recon_x_.emplace(cfg_.adapter.width, cx_, rc, scale_, rng);
  recon_y_.emplace(cfg_.adapter.width, cy_, rc, scale_, rng);
}

ParamSet FusionModel::phi() const {
  ParamSet ps;
  if (adapter_x_) add_prefixed(ps, adapter_y_ ? "adapter_x." : "adapter.", adapter_x_->params());
  if (adapter_y_) add_prefixed(ps, "adapter_y.", adapter_y_->params());
  if (recon_x_) {
    add_prefixed(ps, "recon_x.", recon_x_->params());
    add_prefixed(ps, "recon_y.", recon_y_->params());
  }
  if (enc_x_->trainable()) {
    add_prefixed(ps, "encoder.", enc_x_->params());
    if (enc_y_ != enc_x_) add_prefixed(ps, "encoder_y.", enc_y_->params());
  }
  return ps;
}

ParamSet FusionModel::theta() const {
  ParamSet ps;
  add_prefixed(ps, "fusion.", fusion_.params());
  return ps;
}

ParamSet FusionModel::frozen() const {
  ParamSet ps;
  if (enc_x_->trainable()) return ps;
  add_prefixed(ps, "encoder.", enc_x_->params());
  if (enc_y_ != enc_x_) add_prefixed(ps, "encoder_y.", enc_y_->params());
  return ps;
}

std::uint64_t FusionModel::encoder_checksum() const {
  ParamSet ps;
  add_prefixed(ps, "encoder.", enc_x_->params());
  if (enc_y_ != enc_x_) add_prefixed(ps, "encoder_y.", enc_y_->params());
  return checksum(ps);
}

FusionModel::Features FusionModel::features(const Image& x_in, const Image& y_in) const {
  if (!x_in.same_geometry(y_in)) throw ShapeError("fuse: input sizes differ");
  NoGradGuard ng;
  const std::size_t patch = cfg_.encoder.patch_size;
  const Image x = pad_to_patch_multiple(to_channels(x_in, cx_), patch).first;
  const Image y = pad_to_patch_multiple(to_channels(y_in, cy_), patch).first;
  const LatentPair z = adapt(encode(to_tensor(x), to_tensor(y)));
  return {z.x, z.y, fused_stream(z)};
}

Image FusionModel::fuse_image(const Image& x_in, const Image& y_in) const {
  if (!x_in.same_geometry(y_in)) throw ShapeError("fuse: input sizes differ");
  NoGradGuard ng;
  const std::size_t patch = cfg_.encoder.patch_size;
  auto [x, rec] = pad_to_patch_multiple(to_channels(x_in, cx_), patch);
  const Image y = pad_to_patch_multiple(to_channels(y_in, cy_), patch).first;
  const Tensor f = fuse(adapt(encode(to_tensor(x), to_tensor(y))));
  return clamp01(unpad(from_tensor(f), rec));
}

}  // namespace bifuse
