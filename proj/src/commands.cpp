#include "bifuse/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>

#include <spdlog/spdlog.h>

#include "bifuse/metrics.hpp"
#include "bifuse/trainer.hpp"

namespace bifuse {

namespace fs = std::filesystem;

namespace {

int guarded(const char* command, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    for (const auto& p : e.problems()) spdlog::error("{}: {}", command, p);
    return kExitUsage;
  } catch (const ShapeError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    spdlog::error("{}: numeric failure: {}", command, e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kExitIo;
  } catch (const LoadError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}: {}", command, e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", command, e.what());
    return kExitUsage;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) throw IoError("cannot write " + path.string());
}

RunConfig train_config(const TrainOptions& opt, const std::string& variant) {
  RunConfig cfg = resolve_config(opt.config_path, opt.overrides);
  if (opt.seed) cfg.seed = *opt.seed;
  if (variant != "full") cfg = apply_variant(cfg, variant);
  if (cfg.data.root.empty()) {
    if (const char* env = std::getenv(kDataRootEnv)) cfg.data.root = env;
  }
  if (cfg.data.root.empty()) {
    throw ConfigError({std::string("data.root: not set (use --set data.root=DIR or ") + kDataRootEnv + ")"});
  }
  validate(cfg);
  return cfg;
}

// On resume only the schedule (train.*) may change; anything else would make
// the continued run differ from the one that wrote the checkpoint.
TensorArchive extend_schedule(TensorArchive ar, const std::vector<std::string>& overrides) {
  checkpoint_config(ar);  // rejects malformed or foreign archives first
  nlohmann::json meta = nlohmann::json::parse(ar.metadata);
  nlohmann::json cfg = meta.at("config");
  for (const auto& o : overrides) {
    if (o.rfind("train.", 0) != 0) {
      throw ConfigError({"--set " + o + ": only train.* keys can be overridden when resuming"});
    }
    apply_override(cfg, o);
  }
  validate(config_from_json(cfg));
  meta["config"] = cfg;
  ar.metadata = meta.dump();
  return ar;
}

int run_training(const TrainOptions& opt, const std::string& variant) {
  const fs::path out = opt.out_dir;
  fs::create_directories(out);

  std::optional<Trainer> trainer;
  if (!opt.resume.empty()) {
    TensorArchive ar = TensorArchive::load(opt.resume);
    if (!opt.overrides.empty()) ar = extend_schedule(std::move(ar), opt.overrides);
    RunConfig cfg = checkpoint_config(ar);
    if (const char* env = std::getenv(kDataRootEnv); cfg.data.root.empty() && env) cfg.data.root = env;
    PairDataset data = PairDataset::load(cfg.data.root, task_preset(cfg.task), cfg.data.manifest);
    trainer.emplace(Trainer::resume(ar, std::move(data)));
    spdlog::info("train: resumed from {} at t={}", opt.resume, trainer->t());
  } else {
    const RunConfig cfg = train_config(opt, variant);
    PairDataset data = PairDataset::load(cfg.data.root, task_preset(cfg.task), cfg.data.manifest);
    trainer.emplace(cfg, std::move(data));
  }
  const RunConfig& cfg = trainer->config();
  const std::string resolved = to_json(cfg).dump(2);
  write_text(out / "resolved_config.json", resolved + "\n");
  spdlog::info("train: resolved config {}", to_json(cfg).dump());
  spdlog::info("train: {} pairs, mode {}, {} iterations", trainer->dataset().size(), to_string(cfg.bilevel.mode),
               cfg.train.iterations);

  std::ofstream log(out / "train_log.jsonl", opt.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open " + (out / "train_log.jsonl").string());
  bool saved_last = false;
  while (trainer->t() < cfg.train.iterations) {
    const TrainRecord rec = trainer->step();
    log << rec.to_json().dump() << '\n';
    log.flush();
    saved_last = false;
    if (trainer->t() % cfg.train.checkpoint_every == 0 || trainer->t() == cfg.train.iterations) {
      trainer->checkpoint().save(out / checkpoint_name(trainer->t()));
      saved_last = true;
    }
  }
  if (!saved_last) trainer->checkpoint().save(out / checkpoint_name(trainer->t()));
  spdlog::info("train: finished at t={}, checkpoint {}", trainer->t(), (out / checkpoint_name(trainer->t())).string());
  return kExitOk;
}

std::pair<Image, Image> read_pair(const std::string& a, const std::string& b) {
  Image x = read_image(a), y = read_image(b);
  if (!x.same_geometry(y)) {
    throw ShapeError("inputs differ in size: " + std::to_string(x.height) + "x" + std::to_string(x.width) + " vs " +
                     std::to_string(y.height) + "x" + std::to_string(y.width));
  }
  return {std::move(x), std::move(y)};
}

Image heatmap(const Tensor& map) {
  const std::size_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  Image img(h, w, 1);
  const auto v = map.value();
  for (std::size_t i = 0; i < h * w; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += v[i * c + k];
    img.data[i] = s / static_cast<double>(c);
  }
  const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
  const double a = *lo, range = *hi - *lo;
  for (double& p : img.data) p = range > 0.0 ? (p - a) / range : 0.0;
  return img;
}

}  // namespace

std::string checkpoint_name(std::uint64_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06llu.bin", static_cast<unsigned long long>(t));
  return buf;
}

int cmd_train(const TrainOptions& opt) {
  return guarded("train", [&] { return run_training(opt, opt.variant); });
}

int cmd_ablate(const std::string& variant, TrainOptions opt) {
  return guarded("ablate", [&] {
    if (std::find(variant_names().begin(), variant_names().end(), variant) == variant_names().end()) {
      throw ConfigError({"variant: unknown ablation variant '" + variant +
                         "' (no_adapter|no_pretrained_encoder|no_reconstruction|no_bilevel)"});
    }
    opt.variant = variant;
    return run_training(opt, variant);
  });
}

int cmd_fuse(const FuseOptions& opt) {
  return guarded("fuse", [&] {
    const TensorArchive ar = TensorArchive::load(opt.checkpoint);
    const auto model = load_model(ar, opt.use_ema);
    const FusionTask task = task_preset(model->config().task);
    auto [x, y] = read_pair(opt.input_a, opt.input_b);
    x = to_channels(x, task.channels_x);
    y = to_channels(y, task.channels_y);
    const Image fused = model->fuse_image(x, y);
    write_png(opt.output, apply_chroma(fused, x, y, task.chroma));
    spdlog::info("fuse: wrote {} ({}x{}, {})", opt.output, fused.height, fused.width, opt.use_ema ? "ema" : "theta");
    return kExitOk;
  });
}

int cmd_eval(const EvalOptions& opt) {
  return guarded("eval", [&] {
    MetricOptions mopt;
    if (!opt.config_path.empty() || !opt.overrides.empty()) mopt = resolve_config(opt.config_path, opt.overrides).metrics;
    const std::vector<std::string> metrics = opt.metrics.empty() ? all_metric_names() : opt.metrics;
    for (const auto& m : metrics)
      if (std::find(all_metric_names().begin(), all_metric_names().end(), m) == all_metric_names().end()) {
        throw ConfigError({"metrics: unknown metric '" + m + "'"});
      }
    const MetricReport report = evaluate_dataset(opt.fused_dir, opt.source_a_dir, opt.source_b_dir, metrics, mopt);
    write_text(opt.out_report, report.to_tsv());
    if (!opt.plot_dir.empty()) {
      for (const auto& m : metrics) {
        write_text(fs::path(opt.plot_dir) / (m + ".svg"), box_plot_svg(m, {"fused"}, {&report}));
      }
    }
    for (const auto& m : metrics) {
      const auto& a = report.aggregate.at(m);
      spdlog::info("eval: {:5s} mean {:.6g} median {:.6g} (n={}, excluded {})", m, a.mean, a.median, a.count,
                   a.excluded);
    }
    if (!report.unmatched.empty()) {
      spdlog::error("eval: {} file(s) without counterparts were skipped", report.unmatched.size());
      return static_cast<int>(kExitIo);
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_dump_features(const DumpOptions& opt) {
  return guarded("dump-features", [&] {
    const TensorArchive ar = TensorArchive::load(opt.checkpoint);
    const auto model = load_model(ar, opt.use_ema);
    const auto [x, y] = read_pair(opt.input_a, opt.input_b);
    const auto f = model->features(x, y);
    const fs::path out = opt.out_dir;
    write_png(out / "zx.png", heatmap(f.zx));
    write_png(out / "zy.png", heatmap(f.zy));
    write_png(out / "fused.png", heatmap(f.fused));
    spdlog::info("dump-features: wrote {}x{} heatmaps to {}", f.zx.dim(0), f.zx.dim(1), out.string());
    return kExitOk;
  });
}

int cmd_synth(const SynthOptions& opt) {
  return guarded("synth", [&] {
    const FusionTask task = task_preset(opt.task);
    if (opt.count == 0 || opt.height == 0 || opt.width == 0) throw ConfigError({"synth: sizes must be positive"});
    write_pair_dataset(opt.out_dir, make_synthetic_pairs(opt.count, opt.height, opt.width, task, opt.seed));
    spdlog::info("synth: wrote {} {} pairs to {}", opt.count, opt.task, opt.out_dir);
    return kExitOk;
  });
}

}  // namespace bifuse
