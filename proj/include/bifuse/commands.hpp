#pragma once

// Command implementations behind the `bifuse` executable. Each returns a
// process exit code and never throws.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bifuse {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitNumeric = 3, kExitIo = 4 };

/// Environment variable naming the default data root.
inline constexpr const char* kDataRootEnv = "BIFUSE_DATA_ROOT";

struct TrainOptions {
  std::string config_path;
  std::vector<std::string> overrides;  // "a.b=value"
  std::optional<std::uint64_t> seed;
  std::string out_dir = "run";
  std::string resume;  // checkpoint path
  std::string variant = "full";
};

struct FuseOptions {
  std::string checkpoint;
  std::string input_a;
  std::string input_b;
  std::string output;
  bool use_ema = true;
};

struct EvalOptions {
  std::string fused_dir;
  std::string source_a_dir;
  std::string source_b_dir;
  std::string out_report;
  std::vector<std::string> metrics;  // empty = all
  std::string plot_dir;              // optional SVG box plots
  std::string config_path;           // optional metric constants
  std::vector<std::string> overrides;
};

struct DumpOptions {
  std::string checkpoint;
  std::string input_a;
  std::string input_b;
  std::string out_dir;
  bool use_ema = true;
};

struct SynthOptions {
  std::string out_dir;
  std::string task = "ivif";
  std::size_t count = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 1;
};

/// Writes <out>/resolved_config.json, <out>/train_log.jsonl (one record per
/// iteration, appended on resume) and <out>/ckpt_NNNNNN.bin every
/// checkpoint_every iterations and at the end of the budget.
int cmd_train(const TrainOptions& opt);
/// cmd_train with an ablation variant applied to the resolved config.
int cmd_ablate(const std::string& variant, TrainOptions opt);
int cmd_fuse(const FuseOptions& opt);
int cmd_eval(const EvalOptions& opt);
/// zx.png, zy.png and fused.png: min-max normalized channel means.
int cmd_dump_features(const DumpOptions& opt);
int cmd_synth(const SynthOptions& opt);

std::string checkpoint_name(std::uint64_t t);

}  // namespace bifuse
