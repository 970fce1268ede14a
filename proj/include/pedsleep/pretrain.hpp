#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pedsleep/checkpoint.hpp"
#include "pedsleep/data.hpp"
#include "pedsleep/model.hpp"

namespace pedsleep {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-4;
  int batch_size = 64;
  int epochs = 600;
  int iterations_per_epoch = 2000;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  double grad_clip = 0.0;    // global L2 norm; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  std::int64_t total_steps() const { return static_cast<std::int64_t>(epochs) * iterations_per_epoch; }
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LogRow {
  std::int64_t iteration = 0;
  std::string split;  // "train" or "val"
  double loss = 0;
};

struct TrainLog {
  std::vector<LogRow> rows;
  std::vector<std::string> events;  // config changes, checkpoint writes
  std::uint64_t seed = 0;
  std::string config_hash;
  double wall_seconds = 0;

  std::vector<double> losses(const std::string& split) const;
  void write_csv(const std::filesystem::path& path) const;
};

struct AdamState {
  ModelState m;
  ModelState v;
  std::int64_t step = 0;
};

struct TrainResult {
  ModelState state;
  ModelState best;
  double best_val = 0;
  AdamState optimizer;
  TrainLog log;
  TrainConfig config;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
};

// Decoupled-weight-decay Adam step; `grad` is the mean batch gradient.
void adamw_step(ModelState& params, const ModelState& grad, AdamState& opt, const TrainConfig& cfg);

// Mean masked loss over `epochs` with one fixed mask per epoch, drawn from
// (seed, epoch position) so every evaluation sees the same masks.
double validation_loss(const ModelState& state, const std::vector<PatchGrid>& epochs, std::uint64_t seed);

TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, const std::vector<SleepEpoch>& train_epochs,
                  const std::vector<SleepEpoch>& val_epochs, const TrainOptions& options = {});

void save_training_checkpoint(const std::filesystem::path& path, const TrainResult& r);

// Continues a run from a training checkpoint until cfg.total_steps(). The
// model config must match the checkpoint tensor by tensor; train config
// changes (e.g. batch size) are allowed and recorded in the log events.
TrainResult resume(const std::filesystem::path& checkpoint, const TrainConfig& cfg, const ModelConfig& model_cfg,
                   const std::vector<SleepEpoch>& train_epochs, const std::vector<SleepEpoch>& val_epochs,
                   const TrainOptions& options = {});

struct SweepCell {
  double mask_ratio = 0;
  int patch = 0;
  double best_val = 0;
  TrainLog log;
};

// Grid over masking ratio x patch size; one TrainLog per cell.
std::vector<SweepCell> sweep(const TrainConfig& cfg, const ModelConfig& base, const std::vector<double>& mask_ratios,
                             const std::vector<int>& patches, const std::vector<SleepEpoch>& train_epochs,
                             const std::vector<SleepEpoch>& val_epochs);

std::string config_hash(const TrainConfig& cfg, const ModelConfig& model_cfg);

}  // namespace pedsleep
