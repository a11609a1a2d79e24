#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cmvf/dataio.hpp"
#include "cmvf/model.hpp"
#include "cmvf/objective.hpp"

namespace cmvf {

struct TrainConfig {
  std::size_t embedding_dim = 64;
  std::size_t capsule_count = 30;
  int routing_iterations = 3;
  double alpha = 0.5;
  int mc_samples = 1;
  std::size_t batch_size = 2048;
  double learning_rate = 1e-3;
  int max_epochs = 30;
  int patience = 5;
  std::uint64_t seed = 7;
  Variant variant = Variant::full;
  MembershipMode membership = MembershipMode::norm;
  double valid_fraction = 0.1;

  void validate() const;
  ObjectiveConfig objective() const;

  bool operator==(const TrainConfig&) const = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates aligned with ModelParams::entries().
struct OptimizerState {
  std::vector<Array> first_moment;
  std::vector<Array> second_moment;
  std::int64_t step_count = 0;
};

OptimizerState init_optimizer(const ModelParams& params);

// Standard bias-corrected update, in place. Aborts with the offending
// parameter name on a non-finite gradient.
void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
               const AdamConfig& adam = {});

struct EpochStats {
  int epoch = 0;  // 1-based
  LossBreakdown loss;
  double valid_auc = 0.0;
  bool is_best = false;
};

struct Checkpoint {
  ModelParams params;
  OptimizerState optimizer;
  TrainConfig config;
  int epoch = 0;  // epochs completed when this state was captured
  double best_auc = 0.0;
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

struct TrainResult {
  Checkpoint best;  // parameters at the best validation AUC
  Checkpoint last;  // state after the final epoch; valid resume point
  std::vector<EpochStats> history;
  std::vector<std::string> dead_params;  // no gradient during the first epoch
};

// Last ~valid_fraction of each student's training events, carved once;
// students keep at least two training events.
struct ValidationSplit {
  std::vector<RecordRef> train_records;
  std::vector<RecordRef> valid_records;
  std::vector<int> valid_labels;
};
ValidationSplit carve_validation(const Dataset& train_split, double valid_fraction);

// Minibatch training with per-epoch validation AUC, best-checkpoint tracking
// and early stopping. All randomness derives from config.seed; per-epoch
// streams are keyed on (seed, epoch), so resuming from a checkpoint replays
// the identical remainder of the run.
TrainResult train_model(const Dataset& train_split, const TrainConfig& config,
                  const std::optional<Checkpoint>& resume = std::nullopt);

// Versioned binary container: manifest + raw float64 arrays + checksum.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cmvf
