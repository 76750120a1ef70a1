#pragma once

// Run configuration: one JSON document, every field defaulted, dotted-key
// overrides from the command line. The resolved form is embedded in every
// checkpoint.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bifuse {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct EncoderConfig {
  std::size_t depth = 12;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::vector<std::size_t> tap_layers{2, 5, 8, 11};
  std::string weight_file;
  std::uint64_t seed = 7;
  bool separate_instances = false;
  bool trainable = false;
};

struct AdapterConfig {
  bool enabled = true;
  std::size_t width = 64;
  std::vector<std::size_t> upsample{1, 2, 2};  // one factor per fusion stage
  bool shared = false;
};

struct FusionConfig {
  std::size_t blocks = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
};

struct ReconConfig {
  bool enabled = true;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
};

struct LossConfig {
  double intensity = 1.0;
  double gradient = 1.0;
  double ssim = 1.0;
  std::size_t ssim_window = 11;
  double ssim_sigma = 1.5;
};

struct QabfOptions {
  double tg = 0.9994, kg = -15.0, dg = 0.5;
  double ta = 0.9879, ka = -22.0, da = 0.8;
  double weight_exponent = 1.0;  // exponent on the source edge strengths
};

struct QyOptions {
  std::size_t window = 7;
  double sigma = 1.5;
  double threshold = 0.75;
};

struct VifOptions {
  std::size_t scales = 4;
  double sigma_nsq = 2.0;  // on the 0-255 intensity scale
};

struct MetricOptions {
  QabfOptions qabf;
  QyOptions qy;
  VifOptions vif;
};

enum class TrainMode { Bilevel, Joint, FusionOnly };
enum class OptimizerKind { Adam, Sgd };

struct BilevelConfig {
  TrainMode mode = TrainMode::Bilevel;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double eta_inner = 2e-4;  // eta_L
  double eta_outer = 1e-4;  // eta_U
  double ema_alpha = 0.999;
  double decay_rate = 0.98;
  std::size_t decay_every = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool strict_lr_order = true;
};

struct DataConfig {
  std::string root;
  std::string manifest;
  std::size_t batch_size = 16;
  std::size_t crop = 128;
  bool hflip = false;
};

struct TrainConfig {
  std::size_t iterations = 10000;
  std::size_t checkpoint_every = 1000;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string task = "ivif";
  std::string variant = "full";
  std::uint64_t seed = 7;
  EncoderConfig encoder;
  AdapterConfig adapter;
  FusionConfig fusion;
  ReconConfig reconstruction;
  LossConfig loss;
  BilevelConfig bilevel;
  DataConfig data;
  TrainConfig train;
  MetricOptions metrics;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Strict parse: unknown keys and type errors are reported per field.
RunConfig config_from_json(const nlohmann::json& j);
/// Defaults <- file (merge patch) <- "a.b=value" overrides, then validate.
RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides);
/// Semantic checks (eta ordering, tap bounds, ...). Throws ConfigError.
void validate(const RunConfig& cfg);
/// Apply one dotted override to a JSON document; values parse as JSON when possible.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Config transform for an ablation variant name; throws ConfigError if unknown.
RunConfig apply_variant(RunConfig cfg, const std::string& variant);
const std::vector<std::string>& variant_names();

std::string to_string(TrainMode m);

}  // namespace bifuse
