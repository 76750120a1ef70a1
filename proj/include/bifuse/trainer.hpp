#pragma once

// Training driver: batches, objectives for each training mode, iteration
// records and checkpoints.
//
// Checkpoint = TensorArchive with
//   metadata: {"kind": "bifuse-checkpoint", "schema_version", "config" (resolved),
//              "t", "channels", "encoder_checksum", "optimizer_steps", "rng"}
//   tensors:  phi/<name>, theta/<name>, theta_ema/<name>,
//             opt_phi/{m,v}/<name>, opt_theta/{m,v}/<name>

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "bifuse/bilevel.hpp"
#include "bifuse/data_io.hpp"
#include "bifuse/model.hpp"

namespace bifuse {

struct TrainRecord {
  TrainMode mode = TrainMode::Bilevel;
  StepRecord step;
  double wall_ms = 0.0;

  /// Bilevel: {"t", "mode", "rec": {...}, "fuse": {...}, "lr": {"inner", "outer"}, "wall_ms"}.
  /// Joint / fusion-only: {"t", "mode", "loss": {...}, "lr": {"joint"}, "wall_ms"}.
  nlohmann::json to_json() const;
};

class Trainer {
 public:
  /// Fresh run from a validated config.
  Trainer(const RunConfig& cfg, PairDataset data);
  /// Continue from a checkpoint; the embedded config is used.
  static Trainer resume(const TensorArchive& checkpoint, PairDataset data);

  TrainRecord step();
  std::uint64_t t() const { return state_.t; }
  const RunConfig& config() const { return model_->config(); }
  FusionModel& model() { return *model_; }
  const FusionModel& model() const { return *model_; }
  BilevelState& state() { return state_; }
  const PairDataset& dataset() const { return data_; }

  TensorArchive checkpoint() const;

  /// Mean reconstruction L1 (recon_x + recon_y) over full images, no grad.
  double reconstruction_error(const std::vector<PairSample>& samples) const;

 private:
  Trainer(std::unique_ptr<FusionModel> model, PairDataset data);

  std::unique_ptr<FusionModel> model_;
  PairDataset data_;
  BilevelState state_;
};

/// Model for inference; theta_ema (default) or theta is loaded into the fusion
/// network. Throws ConfigError on a schema mismatch and LoadError on a
/// malformed or inconsistent archive.
std::unique_ptr<FusionModel> load_model(const TensorArchive& checkpoint, bool use_ema);
RunConfig checkpoint_config(const TensorArchive& checkpoint);

}  // namespace bifuse
