// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance                 run all criteria
//   acceptance --criterion N   run one (repeatable)
//
// Exit status is 0 only when every selected criterion passes.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bifuse/adapter.hpp"
#include "bifuse/commands.hpp"
#include "bifuse/fusion_net.hpp"
#include "bifuse/losses.hpp"
#include "bifuse/metrics.hpp"
#include "bifuse/reconstruction.hpp"
#include "bifuse/trainer.hpp"
#include "support/oracles.hpp"
#include "support/testing.hpp"

using namespace bifuse;
using namespace bifuse::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

/// Collects failed sub-checks; the first few are reported.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok) {
      ++failed_;
      if (failures_.size() < 4) failures_.push_back(what);
    }
  }
  Outcome outcome(const std::string& summary) const {
    if (failed_ == 0) return {true, summary + " (" + std::to_string(total_) + " checks)"};
    std::string d = std::to_string(failed_) + "/" + std::to_string(total_) + " checks failed:";
    for (const auto& f : failures_) d += " [" + f + "]";
    return {false, d};
  }

 private:
  std::size_t total_ = 0, failed_ = 0;
  std::vector<std::string> failures_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

nlohmann::json fixture(const std::string& name) {
  std::ifstream f(fs::path(BIFUSE_FIXTURE_DIR) / name);
  if (!f) throw std::runtime_error("missing fixture " + name);
  return nlohmann::json::parse(f);
}

void perturb(const ParamSet& ps, std::uint64_t seed, double amp) {
  for (auto [_, t] : ps) {
    auto v = t.mutable_value();
    const auto r = random_values(v.size(), seed++, -amp, amp);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += r[i];
  }
}

// ---------------------------------------------------------------------------
// 1. Partition isolation on a real model

Outcome isolation() {
  RunConfig cfg = smoke_config(50);
  cfg.data.batch_size = 2;
  const PairDataset data = smoke_dataset(8, 3);
  FusionModel model(cfg, data.task().channels_x, data.task().channels_y);
  BilevelState s = make_state(model.partition(), cfg.bilevel);
  const std::uint64_t frozen = checksum(model.frozen());
  Checks c;
  for (std::uint64_t t = 0; t < 50; ++t) {
    auto rng = batch_rng(cfg.seed, t);
    const Batch batch = sample_batch(data, cfg.data.batch_size, cfg.data.crop, rng);
    const double w = 1.0 / static_cast<double>(batch.size());
    auto inner = [&] {
      LossBreakdown acc;
      for (const auto& p : batch) {
        const Tensor x = to_tensor(p.x), y = to_tensor(p.y);
        const auto [rx, ry] = model.reconstruct(model.adapt(model.encode(x, y)));
        Loss l = reconstruction_loss(rx, x, ry, y);
        mul_scalar(l.value, w).backward();
        acc.total += w * l.parts.total;
      }
      return acc;
    };
    // Gradients flow into phi through the latents here; outer_step must drop them.
    auto outer = [&] {
      LossBreakdown acc;
      for (const auto& p : batch) {
        const Tensor x = to_tensor(p.x), y = to_tensor(p.y);
        Loss l = fusion_loss(model.fuse(model.adapt(model.encode(x, y))), to_tensor(luminance(p.x)),
                             to_tensor(luminance(p.y)), cfg.loss);
        mul_scalar(l.value, w).backward();
        acc.total += w * l.parts.total;
      }
      return acc;
    };
    const std::string at = "t=" + std::to_string(t);
    const auto th = checksum(s.partition.theta), te = checksum(s.theta_ema), ph0 = checksum(s.partition.phi);
    inner_step(s, inner);
    c.expect(checksum(s.partition.theta) == th, at + ": theta changed in inner_step");
    c.expect(checksum(s.theta_ema) == te, at + ": theta_ema changed in inner_step");
    c.expect(checksum(s.partition.phi) != ph0, at + ": inner_step left phi unchanged");
    const auto ph = checksum(s.partition.phi);
    outer_step(s, outer);
    c.expect(checksum(s.partition.phi) == ph, at + ": phi changed in outer_step");
    c.expect(checksum(s.partition.theta) != th, at + ": outer_step left theta unchanged");
    ema_update(s);
    ++s.t;
    c.expect(checksum(model.frozen()) == frozen, at + ": frozen encoder changed");
  }
  return c.outcome("50 iterations, bit-exact checksums");
}

// ---------------------------------------------------------------------------
// 2. EMA law

Outcome ema_law() {
  Checks c;
  Tensor theta = random_tensor({4, 5}, 1, -1, 1, true);
  Tensor phi = random_tensor({3}, 2, -1, 1, true);
  BilevelConfig cfg;
  cfg.ema_alpha = 0.9;
  BilevelState s = make_state({{{"phi", phi}}, {{"theta", theta}}}, cfg);
  const std::vector<double> e0(s.theta_ema.at("theta").value().begin(), s.theta_ema.at("theta").value().end());
  {
    auto v = theta.mutable_value();
    const auto r = random_values(v.size(), 3, -1, 1);
    std::copy(r.begin(), r.end(), v.begin());
  }
  double worst = 0.0;
  for (int t = 1; t <= 10; ++t) {
    ema_update(s);
    const double a = std::pow(0.9, t);
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double expect = a * e0[i] + (1.0 - a) * theta.at(i);
      const double r = rel(s.theta_ema.at("theta").at(i), expect);
      worst = std::max(worst, r);
    }
  }
  c.expect(worst <= 1e-6, "alpha=0.9 worst relative error " + fmt(worst));

  cfg.ema_alpha = 0.0;
  BilevelState z = make_state({{{"phi", phi}}, {{"theta", theta}}}, cfg);
  {
    auto v = theta.mutable_value();
    for (auto& e : v) e = e * 1.7 - 0.3;
  }
  for (int t = 0; t < 10; ++t) {
    ema_update(z);
    bool equal = true;
    for (std::size_t i = 0; i < theta.numel(); ++i) equal = equal && z.theta_ema.at("theta").at(i) == theta.at(i);
    c.expect(equal, "alpha=0 not bit-equal at step " + std::to_string(t));
  }
  return c.outcome("alpha=0.9 worst rel " + fmt(worst) + "; alpha=0 bit-equal");
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness

Outcome gradients() {
  Checks c;
  std::string summary;
  auto record = [&](const std::string& what, const GradCheckResult& r) {
    c.expect(r.max_rel_error < 1e-4, what + " rel " + fmt(r.max_rel_error) + " at " + r.worst);
    summary += (summary.empty() ? "" : ", ") + what + " " + fmt(r.max_rel_error);
  };
  {
    InitRng rng(4);
    Adapter ad(6, AdapterConfig{true, 4, {1, 2, 2}, false}, rng);
    perturb(ad.params(), 60, 0.3);
    FeaturePyramid pyr;
    for (std::size_t i = 0; i < 4; ++i) pyr.levels[i] = random_tensor({2, 2, 6}, 40 + i, -1, 1, true);
    auto leaves = leaves_of(ad.params());
    for (std::size_t i = 0; i < 4; ++i) leaves.emplace_back("level" + std::to_string(i), pyr.levels[i]);
    record("adapter", gradcheck([&] { return probe(ad(pyr)); }, leaves, 1e-5, 16));
  }
  {
    InitRng rng(7);
    CrossAttentionBlock blk(8, 2, 16, rng);
    ParamSet ps;
    blk.collect("block", ps);
    perturb(ps, 100, 0.3);
    Tensor q = random_tensor({4, 8}, 20, -1, 1, true), ctx = random_tensor({6, 8}, 21, -1, 1, true);
    auto leaves = leaves_of(ps);
    leaves.emplace_back("query", q);
    leaves.emplace_back("context", ctx);
    record("cross-attention", gradcheck([&] { return probe(blk(q, ctx)); }, leaves, 1e-5, 24));
  }
  {
    InitRng rng(6);
    FusionNet net(8, FusionConfig{2, 2, 2}, 2, rng);
    perturb(net.params(), 20, 0.2);
    Tensor a = random_tensor({2, 2, 8}, 7, -1, 1, true), b = random_tensor({2, 2, 8}, 8, -1, 1, true);
    auto leaves = leaves_of(net.params());
    leaves.emplace_back("zx", a);
    leaves.emplace_back("zy", b);
    record("fusion net + head", gradcheck([&] { return probe(net({a, b})); }, leaves, 1e-5, 16));
  }
  {
    InitRng rng(9);
    PixelHead head(6, 1, 4, rng);
    ParamSet ps;
    head.collect("head", ps);
    perturb(ps, 30, 0.3);
    Tensor m = random_tensor({2, 2, 6}, 31, -1, 1, true);
    auto leaves = leaves_of(ps);
    leaves.emplace_back("map", m);
    record("pixel head", gradcheck([&] { return probe(head(m)); }, leaves));
  }
  {
    InitRng rng(3);
    ReconstructionBranch r(8, 1, ReconConfig{true, 1, 2, 2}, 2, rng);
    perturb(r.params(), 40, 0.2);
    Tensor z = random_tensor({2, 2, 8}, 4, -1, 1, true);
    auto leaves = leaves_of(r.params());
    leaves.emplace_back("feature", z);
    record("reconstruction", gradcheck([&] { return probe(r(z)); }, leaves, 1e-5, 16));
  }
  {
    Tensor f = random_tensor({8, 8}, 12, 0.1, 0.9, true);
    const Tensor x = random_tensor({8, 8}, 13, 0, 1), y = random_tensor({8, 8}, 14, 0, 1);
    LossConfig lc;
    lc.ssim_window = 5;
    record("fusion loss", gradcheck([&] { return fusion_loss(f, x, y, lc).value; }, {{"fused", f}}, 1e-6, 64));
    Tensor rx = random_tensor({8, 8, 1}, 15, 0, 1, true), ry = random_tensor({8, 8, 3}, 16, 0, 1, true);
    const Tensor tx = random_tensor({8, 8, 1}, 17, 0, 1), ty = random_tensor({8, 8, 3}, 18, 0, 1);
    record("reconstruction loss",
           gradcheck([&] { return reconstruction_loss(rx, tx, ry, ty).value; }, {{"rec_x", rx}, {"rec_y", ry}}));
  }
  return c.outcome(summary);
}

// ---------------------------------------------------------------------------
// 4. Scalar bilevel fixed point

Outcome fixed_point() {
  Tensor phi = Tensor::parameter({1}, {1.0}), theta = Tensor::parameter({1}, {0.0});
  BilevelConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.eta_inner = 0.1;
  cfg.eta_outer = 0.05;
  cfg.decay_rate = 1.0;
  BilevelState s = make_state({{{"phi", phi}}, {{"theta", theta}}}, cfg);
  auto obj = [](std::function<Tensor()> f) {
    return [f] {
      Tensor l = f();
      l.backward();
      LossBreakdown b;
      b.total = l.item();
      return b;
    };
  };
  const auto inner = obj([&] { return sum(square(phi)); });
  const auto outer = obj([&] { return sum(square(theta + -2.0)); });
  for (int i = 0; i < 100; ++i) train_iteration(s, inner, outer);
  const double p = phi.item(), t = theta.item();
  Checks c;
  c.expect(std::abs(p) < 1e-4, "|phi| = " + fmt(std::abs(p)));
  c.expect(std::abs(t - 2.0) < 1e-3, "|theta-2| = " + fmt(std::abs(t - 2.0)));
  return c.outcome("|phi| " + fmt(std::abs(p)) + ", |theta-2| " + fmt(std::abs(t - 2.0)));
}

// ---------------------------------------------------------------------------
// 5. Smoke training

struct SmokeRun {
  std::vector<double> rec, fuse;
  bool finite = true;
};

SmokeRun smoke_run(std::size_t iterations) {
  Trainer tr(smoke_config(iterations), smoke_dataset());
  SmokeRun out;
  while (tr.t() < iterations) {
    const TrainRecord r = tr.step();
    out.rec.push_back(r.step.inner.total);
    out.fuse.push_back(r.step.outer.total);
    out.finite = out.finite && std::isfinite(r.step.inner.total) && std::isfinite(r.step.outer.total);
  }
  return out;
}

/// Trailing mean over the last `window` records ending at iteration t (1-based).
double moving_average(const std::vector<double>& v, std::size_t t, std::size_t window) {
  const std::size_t lo = t > window ? t - window : 0;
  double s = 0.0;
  for (std::size_t i = lo; i < t; ++i) s += v[i];
  return s / static_cast<double>(t - lo);
}

Outcome smoke() {
  const auto fx = fixture("smoke_pilot.json");
  const std::size_t iters = fx.at("iterations"), window = fx.at("window"), from = fx.at("reference_iteration");
  const double min_drop = fx.at("min_relative_drop");
  const SmokeRun run = smoke_run(iters);
  Checks c;
  c.expect(run.finite, "non-finite loss");
  std::string summary;
  for (const auto& [name, series] : {std::pair<std::string, const std::vector<double>*>{"L_rec", &run.rec},
                                     {"L_fuse", &run.fuse}}) {
    const double a = moving_average(*series, from, window), b = moving_average(*series, iters, window);
    const double drop = (a - b) / a;
    c.expect(drop >= min_drop, name + " drop " + fmt(drop) + " < " + fmt(min_drop));
    summary += (summary.empty() ? "" : ", ") + name + " " + fmt(a) + " -> " + fmt(b) + " (drop " + fmt(drop) + ")";
  }
  return c.outcome(summary);
}

// ---------------------------------------------------------------------------
// 6. Reconstruction alignment vs a post-hoc probe decoder

/// Reconstruction decoders trained on the frozen latents of `tr`'s model with
/// the inner optimizer settings and batch schedule. They start from `init`,
/// the full model's decoders before training, so only the latents differ.
void train_probe(Trainer& tr, std::size_t iterations, const ParamSet& init) {
  FusionModel& m = tr.model();
  const RunConfig& cfg = m.config();
  m.reset_reconstruction(cfg.seed);
  ParamSet probe_params;
  for (auto [name, t] : m.phi()) {
    if (name.rfind("recon_", 0) != 0) continue;
    auto dst = t.mutable_value();
    const auto src = init.at(name).value();
    if (src.size() != dst.size()) throw std::runtime_error("probe decoder shape differs at " + name);
    std::copy(src.begin(), src.end(), dst.begin());
    probe_params.emplace(name, t);
  }
  Optimizer opt(cfg.bilevel.optimizer, cfg.bilevel.beta1, cfg.bilevel.beta2, cfg.bilevel.adam_eps);
  for (std::uint64_t t = 0; t < iterations; ++t) {
    auto rng = batch_rng(cfg.seed, t);
    const Batch batch = sample_batch(tr.dataset(), cfg.data.batch_size, cfg.data.crop, rng, cfg.data.hflip);
    zero_grads(probe_params);
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const auto& p : batch) {
      const Tensor x = to_tensor(p.x), y = to_tensor(p.y);
      LatentPair z;
      {
        NoGradGuard ng;
        z = m.adapt(m.encode(x, y));
      }
      const auto [rx, ry] = m.reconstruct(z);
      mul_scalar(reconstruction_loss(rx, x, ry, y).value, w).backward();
    }
    opt.step(probe_params,
             decayed_lr(cfg.bilevel.eta_inner, cfg.bilevel.decay_rate, cfg.bilevel.decay_every, t));
  }
}

Outcome alignment() {
  const auto fx = fixture("smoke_pilot.json");
  const std::size_t iters = fx.at("iterations");
  const auto held_out = make_synthetic_pairs(6, 48, 48, task_preset("ivif"), 77);

  Trainer full(smoke_config(iters), smoke_dataset());
  ParamSet init;
  for (const auto& [name, t] : full.model().phi())
    if (name.rfind("recon_", 0) == 0) init.emplace(name, Tensor::from(t.shape(), {t.value().begin(), t.value().end()}));
  while (full.t() < iters) full.step();
  const double e_full = full.reconstruction_error(held_out);

  Trainer ablated(apply_variant(smoke_config(iters), "no_reconstruction"), smoke_dataset());
  while (ablated.t() < iters) ablated.step();
  train_probe(ablated, iters, init);
  const double e_probe = ablated.reconstruction_error(held_out);

  Checks c;
  c.expect(std::isfinite(e_full) && std::isfinite(e_probe), "non-finite error");
  c.expect(e_full < e_probe, "full " + fmt(e_full) + " >= probe " + fmt(e_probe));
  return c.outcome("held-out L1: full " + fmt(e_full) + " < no_reconstruction probe " + fmt(e_probe));
}

// ---------------------------------------------------------------------------
// 7. Metric oracles

oracle::Plane plane(const Image& img) {
  const Image l = luminance(img);
  return {static_cast<int>(l.height), static_cast<int>(l.width), l.data};
}

Image quantized(std::size_t h, std::size_t w, std::uint64_t seed) {
  Image img = random_image(h, w, 1, seed);
  for (auto& v : img.data) v = std::round(v * 255.0) / 255.0;
  return img;
}

Outcome metric_oracles() {
  Checks c;
  double worst_tight = 0.0, worst_loose = 0.0;
  auto close = [&](const std::string& what, double got, double want, double tol, double& worst) {
    const double r = std::abs(got - want) / std::max(1.0, std::abs(want));
    worst = std::max(worst, r);
    c.expect(r <= tol, what + " " + fmt(got) + " vs " + fmt(want));
  };
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Image f = quantized(16, 16, 1000 + s), x = quantized(16, 16, 2000 + s), y = quantized(16, 16, 3000 + s);
    const auto pf = plane(f), px = plane(x), py = plane(y);
    const std::string k = "#" + std::to_string(s) + " ";
    close(k + "MI", mi_fusion(f, x, y), oracle::mutual_information(pf, px) + oracle::mutual_information(pf, py), 1e-6,
          worst_tight);
    close(k + "PSNR", psnr_fusion(f, x, y).value,
          10 * std::log10(1.0 / ((oracle::mse(pf, px) + oracle::mse(pf, py)) / 2)), 1e-6, worst_tight);
    close(k + "CC", cc_fusion(f, x, y).value, (oracle::pearson(pf, px) + oracle::pearson(pf, py)) / 2, 1e-6,
          worst_tight);
    close(k + "SSIM", ssim_index(f, x), oracle::ssim(pf, px), 1e-6, worst_tight);
    close(k + "Qy", qy(f, x, y), oracle::qy(pf, px, py), 1e-6, worst_tight);
    close(k + "VIF", vif_fusion(f, x, y), oracle::vif(px, pf) + oracle::vif(py, pf), 1e-4, worst_loose);
    close(k + "Qabf", qabf(f, x, y), oracle::qabf(pf, px, py), 1e-4, worst_loose);
  }
  const Image t = quantized(16, 16, 50);
  const auto r = evaluate_triple(t, t, t, all_metric_names());
  c.expect(r.at("cc").value == 1.0, "self CC " + fmt(r.at("cc").value));
  c.expect(r.at("qy").value == 1.0, "self Qy " + fmt(r.at("qy").value));
  c.expect(r.at("vif").value == 2.0, "self VIF " + fmt(r.at("vif").value));
  c.expect(r.at("psnr").kind == MetricValue::Kind::Infinite, "self PSNR not the infinity marker");
  return c.outcome("20 triples; worst rel " + fmt(worst_tight) + " (MI/PSNR/CC/SSIM/Qy), " + fmt(worst_loose) +
                   " (VIF/Qabf); self-fusion extremes exact");
}

// ---------------------------------------------------------------------------
// 8. Loss identities

Outcome loss_identities() {
  Checks c;
  double worst_self = 0.0, worst_swap = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::size_t h = 12 + s % 7 * 3, w = 12 + s % 5 * 4;
    const Tensor i = random_tensor({h, w}, 5000 + s, 0, 1);
    const Tensor f = random_tensor({h, w}, 6000 + s, 0, 1);
    const Tensor x = random_tensor({h, w}, 7000 + s, 0, 1), y = random_tensor({h, w}, 8000 + s, 0, 1);
    const LossConfig lc;
    const double self = std::abs(fusion_loss(i, i, i, lc).parts.total);
    const double swap = std::abs(fusion_loss(f, x, y, lc).parts.total - fusion_loss(f, y, x, lc).parts.total);
    worst_self = std::max(worst_self, self);
    worst_swap = std::max(worst_swap, swap);
    c.expect(self <= 1e-9, "image " + std::to_string(s) + ": L(I,I,I) = " + fmt(self));
    c.expect(swap <= 1e-9, "image " + std::to_string(s) + ": swap difference " + fmt(swap));
  }
  return c.outcome("50 images; max |L(I,I,I)| " + fmt(worst_self) + ", max swap difference " + fmt(worst_swap));
}

// ---------------------------------------------------------------------------
// 9. Determinism and resume

Outcome determinism() {
  const RunConfig cfg = smoke_config(10);
  auto train_to = [&](Trainer& tr, std::uint64_t t) {
    while (tr.t() < t) tr.step();
  };
  Trainer a(cfg, smoke_dataset()), b(cfg, smoke_dataset());
  train_to(a, 10);
  train_to(b, 10);

  Trainer c5(cfg, smoke_dataset());
  train_to(c5, 5);
  const std::string at5 = c5.checkpoint().serialize();
  Trainer resumed = Trainer::resume(TensorArchive::deserialize(at5), smoke_dataset());
  train_to(resumed, 10);

  Checks c;
  const std::string ref = a.checkpoint().serialize();
  c.expect(ref == b.checkpoint().serialize(), "two fixed-seed runs differ");
  c.expect(ref == resumed.checkpoint().serialize(), "resume at t=5 differs from the uninterrupted run at t=10");
  return c.outcome("checkpoint bytes identical across runs and across resume (" + std::to_string(ref.size()) +
                   " bytes)");
}

// ---------------------------------------------------------------------------
// 10. Ablation matrix

Outcome ablations() {
  const std::size_t iters = fixture("smoke_pilot.json").at("iterations");
  Checks c;
  std::string summary;
  for (const std::string variant : {"full", "no_adapter", "no_pretrained_encoder", "no_reconstruction", "no_bilevel"}) {
    RunConfig cfg = smoke_config(iters);
    if (variant != "full") cfg = apply_variant(cfg, variant);
    const auto start = std::chrono::steady_clock::now();
    Trainer tr(cfg, smoke_dataset());
    bool finite = true, structure = true;
    while (tr.t() < iters) {
      const nlohmann::json r = tr.step().to_json();
      for (const char* key : {"rec", "fuse", "loss"})
        if (r.contains(key)) finite = finite && std::isfinite(r.at(key).at("total").get<double>());
      if (variant == "no_bilevel" || variant == "no_reconstruction") {
        structure = structure && r.contains("loss") && !r.contains("rec") && !r.contains("fuse");
      } else {
        structure = structure && r.contains("rec") && r.contains("fuse") && !r.contains("loss");
      }
    }
    c.expect(finite, variant + ": non-finite loss");
    c.expect(structure, variant + ": unexpected log record layout");
    const TensorArchive ar = tr.checkpoint();
    std::size_t adapter = 0, recon = 0, encoder = 0;
    for (const auto& [name, _] : ar.tensors) {
      adapter += name.find("adapter") != std::string::npos;
      recon += name.find("recon_") != std::string::npos;
      encoder += name.rfind("phi/encoder", 0) == 0;
    }
    if (variant == "no_adapter") c.expect(adapter == 0, "no_adapter checkpoint holds adapter tensors");
    else c.expect(adapter > 0, variant + ": adapter tensors missing");
    if (variant == "no_reconstruction") c.expect(recon == 0, "no_reconstruction checkpoint holds decoder tensors");
    if (variant == "no_pretrained_encoder") c.expect(encoder > 0, "trainable encoder not in phi");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    summary += (summary.empty() ? "" : ", ") + variant + " " + fmt(secs) + "s";
  }
  return c.outcome(summary);
}

// ---------------------------------------------------------------------------
// 11. Shape and range laws of cmd_fuse

Outcome fuse_shapes() {
  ScratchDir dir("acceptance_fuse");
  Trainer tr(smoke_config(2), smoke_dataset(4));
  while (tr.t() < 2) tr.step();
  const fs::path ckpt = dir / "ckpt.bin";
  tr.checkpoint().save(ckpt);
  Checks c;
  std::string summary;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{128, 128}, {250, 250}, {33, 47}}) {
    const std::string tag = std::to_string(h) + "x" + std::to_string(w);
    const fs::path d = dir / tag;
    write_pair_dataset(d, make_synthetic_pairs(1, h, w, task_preset("ivif"), 9));
    FuseOptions opt;
    opt.checkpoint = ckpt.string();
    opt.input_a = (d / "source_a" / "pair_000.png").string();
    opt.input_b = (d / "source_b" / "pair_000.png").string();
    opt.output = (d / "fused.png").string();
    const int code = cmd_fuse(opt);
    c.expect(code == kExitOk, tag + ": exit " + std::to_string(code));
    if (code != kExitOk) continue;
    const Image out = read_image(opt.output);
    c.expect(out.height == h && out.width == w,
             tag + ": output " + std::to_string(out.height) + "x" + std::to_string(out.width));
    bool in_range = true;
    for (double v : out.data) in_range = in_range && v >= 0.0 && v <= 1.0;
    c.expect(in_range, tag + ": pixel outside [0, 1]");
    summary += (summary.empty() ? "" : ", ") + tag + " -> " + std::to_string(out.height) + "x" +
               std::to_string(out.width);
  }
  return c.outcome(summary);
}

struct Criterion {
  const char* title;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {"partition isolation", isolation},
      {"EMA law", ema_law},
      {"gradient correctness", gradients},
      {"analytic bilevel fixed point", fixed_point},
      {"smoke training", smoke},
      {"reconstruction-alignment effect", alignment},
      {"metric oracle equivalence", metric_oracles},
      {"loss identities", loss_identities},
      {"determinism and resume", determinism},
      {"ablation matrix", ablations},
      {"shape/range laws", fuse_shapes},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  app.add_option("--criterion", selected, "Criterion number (1-11); repeatable")
      ->check(CLI::Range(1, static_cast<int>(criteria().size())));
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);
  if (selected.empty())
    for (int i = 1; i <= static_cast<int>(criteria().size()); ++i) selected.push_back(i);

  bool all_pass = true;
  for (int n : selected) {
    const Criterion& cr = criteria()[static_cast<std::size_t>(n - 1)];
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d: %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", n, cr.title, o.detail.c_str(), secs);
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
