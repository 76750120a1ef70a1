#include "bifuse/trainer.hpp"

#include <chrono>
#include <cstdio>

#include "bifuse/losses.hpp"

namespace bifuse {

using nlohmann::json;

namespace {

struct Prepared {
  Tensor x, y;          // source images with the task channel counts
  Tensor luma_x, luma_y;  // [H, W, 1]
  std::optional<PyramidPair> pyramids;  // cached when the encoder is frozen
};

std::vector<Prepared> prepare(const FusionModel& model, const Batch& batch) {
  std::vector<Prepared> out;
  out.reserve(batch.size());
  const bool frozen = !model.config().encoder.trainable;
  for (const auto& s : batch) {
    Prepared p{to_tensor(s.x), to_tensor(s.y), to_tensor(luminance(s.x)), to_tensor(luminance(s.y)), {}};
    if (frozen) {
      NoGradGuard ng;
      p.pyramids = model.encode(p.x, p.y);
    }
    out.push_back(std::move(p));
  }
  return out;
}

PyramidPair pyramids_of(const FusionModel& model, const Prepared& p) {
  return p.pyramids ? *p.pyramids : model.encode(p.x, p.y);
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double w) {
  acc.total += w * b.total;
  for (const auto& [k, v] : b.terms) acc.terms[k] += w * v;
  acc.weights = b.weights;
}

json breakdown_json(const LossBreakdown& b) {
  json j = json::object();
  for (const auto& [k, v] : b.terms) j[k] = v;
  j["total"] = b.total;
  return j;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

FusionTask task_of(const RunConfig& cfg) { return task_preset(cfg.task); }

json parse_metadata(const TensorArchive& ar) {
  json meta;
  try {
    meta = json::parse(ar.metadata);
  } catch (const json::parse_error& e) {
    throw LoadError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (meta.value("kind", "") != "bifuse-checkpoint") throw LoadError("archive is not a training checkpoint");
  const int version = meta.value("schema_version", -1);
  if (version != kSchemaVersion) {
    throw ConfigError({"checkpoint schema_version " + std::to_string(version) + " does not match " +
                       std::to_string(kSchemaVersion)});
  }
  return meta;
}

std::unique_ptr<FusionModel> model_from_meta(const json& meta) {
  RunConfig cfg = config_from_json(meta.at("config"));
  validate(cfg);
  const auto ch = meta.at("channels").get<std::vector<std::size_t>>();
  auto model = std::make_unique<FusionModel>(cfg, ch.at(0), ch.at(1));
  if (hex64(model->encoder_checksum()) != meta.value("encoder_checksum", "")) {
    if (cfg.encoder.trainable) return model;  // restored from phi below
    throw LoadError("encoder weights differ from the ones the checkpoint was trained with (checksum mismatch)");
  }
  return model;
}

}  // namespace

json TrainRecord::to_json() const {
  json j;
  j["t"] = step.t;
  j["mode"] = to_string(mode);
  if (mode == TrainMode::Bilevel) {
    j["rec"] = breakdown_json(step.inner);
    j["fuse"] = breakdown_json(step.outer);
    j["lr"] = {{"inner", step.lr_inner}, {"outer", step.lr_outer}};
  } else {
    j["loss"] = breakdown_json(step.inner);
    j["lr"] = {{"joint", step.lr_inner}};
  }
  j["wall_ms"] = wall_ms;
  return j;
}

Trainer::Trainer(const RunConfig& cfg, PairDataset data)
    : Trainer(std::make_unique<FusionModel>(cfg, data.task().channels_x, data.task().channels_y), std::move(data)) {}

Trainer::Trainer(std::unique_ptr<FusionModel> model, PairDataset data)
    : model_(std::move(model)), data_(std::move(data)) {
  const FusionTask task = task_of(model_->config());
  if (task.channels_x != model_->channels_x() || task.channels_y != model_->channels_y()) {
    throw ConfigError({"task: dataset channels do not match the model"});
  }
  state_ = make_state(model_->partition(), model_->config().bilevel);
}

TrainRecord Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig& cfg = model_->config();
  auto rng = batch_rng(cfg.seed, state_.t);
  const Batch batch = sample_batch(data_, cfg.data.batch_size, cfg.data.crop, rng, cfg.data.hflip);
  const std::vector<Prepared> prep = prepare(*model_, batch);
  const double w = 1.0 / static_cast<double>(prep.size());
  const FusionModel& m = *model_;

  auto inner = [&]() {
    LossBreakdown acc;
    for (const auto& p : prep) {
      const LatentPair z = m.adapt(pyramids_of(m, p));
      const auto [rx, ry] = m.reconstruct(z);
      Loss l = reconstruction_loss(rx, p.x, ry, p.y);
      mul_scalar(l.value, w).backward();
      accumulate(acc, l.parts, w);
    }
    return acc;
  };
  auto outer = [&]() {
    LossBreakdown acc;
    for (const auto& p : prep) {
      LatentPair z;
      {
        NoGradGuard ng;
        z = m.adapt(pyramids_of(m, p));
      }
      Loss l = fusion_loss(m.fuse(z), p.luma_x, p.luma_y, cfg.loss);
      mul_scalar(l.value, w).backward();
      accumulate(acc, l.parts, w);
    }
    return acc;
  };
  auto single = [&]() {
    LossBreakdown acc;
    for (const auto& p : prep) {
      const LatentPair z = m.adapt(pyramids_of(m, p));
      Loss l = fusion_loss(m.fuse(z), p.luma_x, p.luma_y, cfg.loss);
      if (m.has_reconstruction()) {
        const auto [rx, ry] = m.reconstruct(z);
        Loss r = reconstruction_loss(rx, p.x, ry, p.y);
        l.value = l.value + r.value;
        l.parts = combine(r.parts, l.parts);
      }
      mul_scalar(l.value, w).backward();
      accumulate(acc, l.parts, w);
    }
    return acc;
  };

  TrainRecord rec;
  rec.mode = cfg.bilevel.mode;
  rec.step = cfg.bilevel.mode == TrainMode::Bilevel ? train_iteration(state_, inner, outer)
                                                    : joint_iteration(state_, single);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

double Trainer::reconstruction_error(const std::vector<PairSample>& samples) const {
  NoGradGuard ng;
  double total = 0.0;
  for (const auto& s : samples) {
    const Tensor x = to_tensor(to_channels(s.x, model_->channels_x()));
    const Tensor y = to_tensor(to_channels(s.y, model_->channels_y()));
    const auto [rx, ry] = model_->reconstruct(model_->adapt(model_->encode(x, y)));
    total += reconstruction_loss(rx, x, ry, y).parts.total;
  }
  return total / static_cast<double>(samples.size());
}

TensorArchive Trainer::checkpoint() const {
  TensorArchive ar;
  json meta;
  meta["kind"] = "bifuse-checkpoint";
  meta["schema_version"] = kSchemaVersion;
  meta["config"] = to_json(model_->config());
  meta["t"] = state_.t;
  meta["channels"] = {model_->channels_x(), model_->channels_y()};
  meta["encoder_checksum"] = hex64(model_->encoder_checksum());
  meta["optimizer_steps"] = {{"phi", state_.opt_phi.steps()}, {"theta", state_.opt_theta.steps()}};
  meta["rng"] = {{"scheme", "batch_rng(seed, t)"}, {"seed", model_->config().seed}};
  ar.metadata = meta.dump();
  ar.put_all("phi/", state_.partition.phi);
  ar.put_all("theta/", state_.partition.theta);
  ar.put_all("theta_ema/", state_.theta_ema);
  state_.opt_phi.save(ar, "opt_phi/");
  state_.opt_theta.save(ar, "opt_theta/");
  return ar;
}

Trainer Trainer::resume(const TensorArchive& ar, PairDataset data) {
  const json meta = parse_metadata(ar);
  Trainer tr(model_from_meta(meta), std::move(data));
  ar.load_all("phi/", tr.state_.partition.phi);
  ar.load_all("theta/", tr.state_.partition.theta);
  ar.load_all("theta_ema/", tr.state_.theta_ema);
  const auto& steps = meta.at("optimizer_steps");
  tr.state_.opt_phi.load(ar, "opt_phi/", tr.state_.partition.phi, steps.at("phi").get<std::uint64_t>());
  tr.state_.opt_theta.load(ar, "opt_theta/", tr.state_.partition.theta, steps.at("theta").get<std::uint64_t>());
  tr.state_.t = meta.at("t").get<std::uint64_t>();
  return tr;
}

RunConfig checkpoint_config(const TensorArchive& ar) { return config_from_json(parse_metadata(ar).at("config")); }

std::unique_ptr<FusionModel> load_model(const TensorArchive& ar, bool use_ema) {
  const json meta = parse_metadata(ar);
  auto model = model_from_meta(meta);
  ParamSet phi = model->phi(), theta = model->theta();
  ar.load_all("phi/", phi);
  ar.load_all(use_ema ? "theta_ema/" : "theta/", theta);
  return model;
}

}  // namespace bifuse
