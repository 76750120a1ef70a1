#include "bifuse/adapter.hpp"

namespace bifuse {

namespace {

// Bring two maps to the finer of their resolutions (integer nearest upsampling).
std::pair<Tensor, Tensor> align(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3) throw ShapeError("adapter: stage inputs must be [h,w,c] maps");
  const std::size_t ha = a.dim(0), hb = b.dim(0);
  if (ha == hb && a.dim(1) == b.dim(1)) return {a, b};
  if (ha > hb) {
    if (ha % hb || a.dim(1) % b.dim(1) || ha / hb != a.dim(1) / b.dim(1)) {
      throw ShapeError("adapter: cannot align " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
    }
    return {a, upsample_nearest(b, ha / hb)};
  }
  if (hb % ha || b.dim(1) % a.dim(1) || hb / ha != b.dim(1) / a.dim(1)) {
    throw ShapeError("adapter: cannot align " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
  }
  return {upsample_nearest(a, hb / ha), b};
}

}  // namespace

FuseStage::FuseStage(std::size_t deep_width, std::size_t shallow_width, std::size_t width, std::size_t upsample_,
                     InitRng& rng)
    : deep_proj(deep_width, width, rng),
      shallow_proj(shallow_width, width, rng),
      out_proj(width, width, rng),
      upsample(upsample_) {
  out_proj.zero_();
  if (shallow_width != width) skip = Linear(shallow_width, width, rng);
}

Tensor FuseStage::operator()(const Tensor& deep, const Tensor& shallow) const {
  auto [d, s] = align(deep, shallow);
  const std::size_t h = s.dim(0), w = s.dim(1);
  if (d.dim(2) != deep_proj.in() || s.dim(2) != shallow_proj.in()) {
    throw ShapeError("adapter stage: channel mismatch, deep " + shape_str(d.shape()) + " shallow " +
                     shape_str(s.shape()));
  }
  Tensor dt = to_tokens(d), st = to_tokens(s);
  Tensor mixed = gelu(deep_proj(dt) + shallow_proj(st));
  Tensor residual = skip ? (*skip)(st) : st;
  Tensor out = to_map(residual + out_proj(mixed), h, w);
  return upsample_nearest(out, upsample);
}

void FuseStage::collect(const std::string& prefix, ParamSet& out) const {
  deep_proj.collect(prefix + ".deep_proj", out);
  shallow_proj.collect(prefix + ".shallow_proj", out);
  out_proj.collect(prefix + ".out_proj", out);
  if (skip) skip->collect(prefix + ".skip", out);
}

Adapter::Adapter(std::size_t in_width, const AdapterConfig& config, InitRng& rng) {
  if (config.upsample.size() != 3) throw ConfigError({"adapter.upsample: one factor per stage (3 stages) required"});
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t deep_width = s == 0 ? in_width : config.width;
    stages_[s] = FuseStage(deep_width, in_width, config.width, config.upsample[s], rng);
  }
}

Tensor Adapter::adapt(const std::vector<Tensor>& levels) const {
  if (levels.size() != 4) {
    throw ShapeError("adapter: expected a 4-level pyramid, got " + std::to_string(levels.size()) + " levels");
  }
  Tensor path = levels[3];
  for (std::size_t s = 0; s < 3; ++s) path = stages_[s](path, levels[2 - s]);
  return path;
}

Tensor Adapter::operator()(const FeaturePyramid& pyramid) const {
  return adapt({pyramid.levels.begin(), pyramid.levels.end()});
}

ParamSet Adapter::params() const {
  ParamSet ps;
  for (std::size_t s = 0; s < 3; ++s) stages_[s].collect("stage" + std::to_string(s), ps);
  return ps;
}

std::size_t Adapter::upsample_factor() const {
  std::size_t f = 1;
  for (const auto& s : stages_) f *= s.upsample;
  return f;
}

Tensor upsample_only(const FeaturePyramid& pyramid, std::size_t factor) {
  return upsample_nearest(pyramid.levels[3], factor);
}

}  // namespace bifuse
