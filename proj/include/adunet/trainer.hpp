#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adunet/data.hpp"
#include "adunet/metrics.hpp"
#include "adunet/network.hpp"

namespace adunet {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 4;
  double lr = 1e-3;
  double plateau_factor = 0.1;
  int plateau_patience = 5;
  std::string monitor = "val_psnr";
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty: no files written
  std::int64_t max_steps = 0;            // 0: no limit
  int save_every = 1;                    // epoch_<n>.ckpt cadence; 0 disables
  double val_fraction = 0.1;             // used when no separate val set exists
  std::optional<std::pair<int, int>> resize;
  bool verbose = false;
};

/// Throws ConfigError naming the offending field.
void validate(const TrainConfig& config);

/// Reads the "train" object of a config document; absent keys keep their
/// defaults and unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& train_section);
nlohmann::json to_json(const TrainConfig& config);

/// Adam with bias correction. Parameters whose gradient is empty after a
/// backward pass are skipped for that step.
class Adam {
 public:
  Adam(std::vector<Var<float>> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  double lr() const noexcept { return lr_; }
  void set_lr(double lr) noexcept { lr_ = lr; }
  std::int64_t steps() const noexcept { return t_; }

  std::vector<std::uint8_t> serialize() const;
  /// Throws CheckpointError when the blob does not match the parameter set.
  void deserialize(const std::vector<std::uint8_t>& blob);

 private:
  std::vector<Var<float>> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

/// Multiplies the learning rate by `factor` once the monitored metric has
/// gone `patience` consecutive epochs without strictly exceeding its best
/// value, then starts counting afresh.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience);

  /// Feeds one epoch's metric; returns true when the rate was decayed.
  bool observe(double metric);
  double lr() const noexcept { return lr_; }
  double best() const noexcept { return best_; }
  int bad_epochs() const noexcept { return bad_epochs_; }

 private:
  double lr_, factor_;
  int patience_;
  double best_;
  int bad_epochs_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;  // mean over the epoch's batches
  double lr = 0;          // rate used during the epoch
  Metrics val;
  std::int64_t steps = 0;  // cumulative optimizer steps
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  int best_epoch = 0;
  double best_metric = 0;
  double wall_seconds = 0;

  nlohmann::json to_json() const;
};

/// Called after every epoch; lets callers log or stop early.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs epochs of shuffled minibatches (forward, loss, backward, Adam),
/// evaluates `val` after each epoch and decays the rate on a validation PSNR
/// plateau. With a checkpoint directory it writes epoch_<n>.ckpt, best.ckpt,
/// last.ckpt and report.json there. Throws TrainingError on a non-finite
/// loss, naming the epoch and batch.
TrainReport train(AduNet<float>& net, const TrainConfig& config, const PairedDataset& train_set,
                  const PairedDataset& val_set, const EpochCallback& on_epoch = {});

/// Mean PSNR/SSIM of clamped eval-mode outputs against ground truth. Images
/// of any size are padded to a multiple of 16 and cropped back.
Metrics evaluate(const AduNet<float>& net, const PairedDataset& dataset);

/// Same metrics for the raw inputs, i.e. what a pass-through model scores.
Metrics evaluate_identity(const PairedDataset& dataset);

}  // namespace adunet
