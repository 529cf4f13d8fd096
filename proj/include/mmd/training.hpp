#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mmd/common.hpp"
#include "mmd/nn.hpp"

namespace mmd {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 0.002;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  nn::Optimizer optimizer = nn::Optimizer::Adam;

  /// Stage 1 on tabular data: batch 64, lr 0.002, 100 epochs.
  static TrainConfig unimodal_defaults();
  /// Fusion stage: batch 8, lr 0.0005, 50 epochs.
  static TrainConfig fusion_defaults();
  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean over non-skipped batches
  std::optional<double> val_cindex;
  std::size_t batches = 0;
  std::size_t skipped = 0;  // batches without an event
};

using TrainTrace = std::vector<EpochStats>;

void write_trace(std::ostream& out, const TrainTrace& trace);

/// Callbacks a model supplies to the shared minibatch loop.
struct TrainingHooks {
  /// Trains on the given pool positions; returns the batch loss, or nullopt when
  /// the batch was skipped (no event).
  std::function<std::optional<double>(std::span<const std::size_t> batch, Rng& rng)> step;
  /// Validation c-index, or nullopt when there is nothing to validate on.
  std::function<std::optional<double>()> validate;
  std::function<void()> snapshot;
  std::function<void()> restore;
};

/// Shuffled minibatch epochs over `train_positions` with early stopping on the
/// validation c-index (best snapshot restored at the end).
TrainTrace run_training(std::span<const std::size_t> train_positions, const TrainConfig& config,
                        TrainingHooks& hooks);

/// Deterministic (train, validation) partition of [0, n). The validation slice is
/// empty when it would hold fewer than `min_validation` items.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout(
    std::size_t n, double fraction, std::uint64_t seed, std::size_t min_validation = 5);

/// Per-network optimizer states for a group of nets.
class OptimizerGroup {
 public:
  OptimizerGroup(std::span<nn::DenseNet* const> nets, nn::Optimizer algorithm, double learning_rate);
  void step(std::span<nn::DenseNet* const> nets, std::span<const nn::GradientSet* const> grads);

 private:
  std::vector<nn::OptimizerState> states_;
};

}  // namespace mmd
