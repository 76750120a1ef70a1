#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "bifuse/commands.hpp"

namespace {

void add_train_flags(CLI::App* cmd, bifuse::TrainOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration");
  cmd->add_option("--set", o.overrides, "Dotted-key override, e.g. --set bilevel.inner_lr=3e-4");
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--out", o.out_dir, "Output directory for logs and checkpoints");
  cmd->add_option("--resume", o.resume, "Continue from a checkpoint (only train.* may be overridden)");
}

void add_ema_flags(CLI::App* cmd, bool& use_ema) {
  cmd->add_flag("--use-ema,!--no-ema", use_ema, "Use the EMA fusion weights (default) or the raw ones");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilevel transformer image fusion"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  bifuse::TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Train a fusion model");
  add_train_flags(c_train, train);
  c_train->add_option("--variant", train.variant, "full or an ablation variant");

  bifuse::TrainOptions ablate;
  std::string variant;
  auto* c_ablate = app.add_subcommand("ablate", "Train an ablation variant");
  c_ablate->add_option("variant", variant, "no_adapter | no_pretrained_encoder | no_reconstruction | no_bilevel")
      ->required();
  add_train_flags(c_ablate, ablate);

  bifuse::FuseOptions fuse;
  auto* c_fuse = app.add_subcommand("fuse", "Fuse one image pair");
  c_fuse->add_option("--checkpoint", fuse.checkpoint)->required();
  c_fuse->add_option("input_a", fuse.input_a, "Source x (source_a modality)")->required();
  c_fuse->add_option("input_b", fuse.input_b, "Source y (source_b modality)")->required();
  c_fuse->add_option("--out", fuse.output, "Output PNG")->required();
  add_ema_flags(c_fuse, fuse.use_ema);

  bifuse::EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Score fused images against their sources");
  c_eval->add_option("fused_dir", eval.fused_dir)->required();
  c_eval->add_option("source_a_dir", eval.source_a_dir)->required();
  c_eval->add_option("source_b_dir", eval.source_b_dir)->required();
  c_eval->add_option("--out", eval.out_report, "Report (TSV)")->required();
  c_eval->add_option("--metrics", eval.metrics, "Subset of mi,vif,qabf,qy,cc,psnr,ssim")->delimiter(',');
  c_eval->add_option("--plots", eval.plot_dir, "Directory for per-metric SVG box plots");
  c_eval->add_option("--config", eval.config_path, "Configuration holding metric constants");
  c_eval->add_option("--set", eval.overrides, "Dotted-key override, e.g. --set metrics.qy.threshold=0.7");

  bifuse::DumpOptions dump;
  auto* c_dump = app.add_subcommand("dump-features", "Write latent feature heatmaps");
  c_dump->add_option("--checkpoint", dump.checkpoint)->required();
  c_dump->add_option("input_a", dump.input_a)->required();
  c_dump->add_option("input_b", dump.input_b)->required();
  c_dump->add_option("--out", dump.out_dir)->required();
  add_ema_flags(c_dump, dump.use_ema);

  bifuse::SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a procedural paired dataset");
  c_synth->add_option("--out", synth.out_dir)->required();
  c_synth->add_option("--task", synth.task);
  c_synth->add_option("--count", synth.count);
  c_synth->add_option("--height", synth.height);
  c_synth->add_option("--width", synth.width);
  c_synth->add_option("--seed", synth.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return bifuse::kExitUsage;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  if (c_train->parsed()) return bifuse::cmd_train(train);
  if (c_ablate->parsed()) return bifuse::cmd_ablate(variant, ablate);
  if (c_fuse->parsed()) return bifuse::cmd_fuse(fuse);
  if (c_eval->parsed()) return bifuse::cmd_eval(eval);
  if (c_dump->parsed()) return bifuse::cmd_dump_features(dump);
  if (c_synth->parsed()) return bifuse::cmd_synth(synth);
  return bifuse::kExitUsage;
}
