#include "mmd/training.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace mmd {

TrainConfig TrainConfig::unimodal_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::fusion_defaults() {
  TrainConfig c;
  c.batch_size = 8;
  c.learning_rate = 0.0005;
  c.epochs = 50;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw UsageError("batch size must be positive");
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (epochs == 0) throw UsageError("epochs must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw UsageError("validation fraction must lie in [0, 1)");
  }
}

void write_trace(std::ostream& out, const TrainTrace& trace) {
  out << "epoch,train_loss,val_cindex,batches,skipped\n";
  char buf[64];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof buf, "%.17g", e.train_loss);
    out << e.epoch << ',' << buf << ',';
    if (e.val_cindex) {
      std::snprintf(buf, sizeof buf, "%.17g", *e.val_cindex);
      out << buf;
    }
    out << ',' << e.batches << ',' << e.skipped << '\n';
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout(std::size_t n, double fraction,
                                                                      std::uint64_t seed,
                                                                      std::size_t min_validation) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 0x4A11);
  rng.shuffle(order.begin(), order.end());
  auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (n_val < min_validation || n_val >= n) n_val = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

TrainTrace run_training(std::span<const std::size_t> train_positions, const TrainConfig& config,
                        TrainingHooks& hooks) {
  config.validate();
  if (train_positions.empty()) throw DataError("no training records");
  Rng rng = Rng::derive(config.seed, 0x7EA1);
  std::vector<std::size_t> order(train_positions.begin(), train_positions.end());
  TrainTrace trace;
  std::optional<double> best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      const auto loss = hooks.step(std::span(order).subspan(start, len), rng);
      if (loss) {
        loss_sum += *loss;
        ++stats.batches;
      } else {
        ++stats.skipped;
      }
    }
    stats.train_loss = stats.batches ? loss_sum / static_cast<double>(stats.batches) : 0.0;
    stats.val_cindex = hooks.validate ? hooks.validate() : std::nullopt;
    trace.push_back(stats);
    if (!stats.val_cindex) continue;
    if (!best || *stats.val_cindex > *best) {
      best = stats.val_cindex;
      since_best = 0;
      hooks.snapshot();
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (best) hooks.restore();
  return trace;
}

OptimizerGroup::OptimizerGroup(std::span<nn::DenseNet* const> nets, nn::Optimizer algorithm,
                               double learning_rate) {
  for (const auto* net : nets) states_.emplace_back(*net, algorithm, learning_rate);
}

void OptimizerGroup::step(std::span<nn::DenseNet* const> nets,
                          std::span<const nn::GradientSet* const> grads) {
  if (nets.size() != states_.size() || grads.size() != states_.size()) {
    throw UsageError("optimizer group: net count mismatch");
  }
  // Refuse the whole step if any gradient is non-finite so nets stay consistent.
  for (const auto* g : grads) {
    if (!g->all_finite()) throw NumericalError("non-finite gradient, optimizer step refused");
  }
  for (std::size_t k = 0; k < nets.size(); ++k) nn::optimizer_step(*nets[k], *grads[k], states_[k]);
}

}  // namespace mmd
