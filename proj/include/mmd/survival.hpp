#pragma once

#include <span>
#include <vector>

#include "mmd/common.hpp"

namespace mmd::survival {

/// Hazards F(h_i), times t_i and event flags E_i for one evaluation batch.
struct SurvivalBatch {
  std::span<const double> hazards;
  std::span<const double> times;
  std::span<const int> events;

  std::size_t size() const { return hazards.size(); }
  /// Equal lengths, finite positive times, binary events, finite hazards.
  void validate() const;
  std::size_t num_events() const;
};

/// Indices j with times[j] >= times[i] (ties included).
std::vector<std::size_t> risk_set(std::span<const double> times, std::size_t i);

/// Negative Cox partial log-likelihood, summed over events, Breslow ties.
/// Throws NumericalError when the batch has no event.
double cox_loss(const SurvivalBatch& batch);

/// Per-event terms -(F_i - logsumexp_{j in R_i} F_j), in order of event index.
std::vector<double> cox_event_terms(const SurvivalBatch& batch);

/// dL/dF_i.
std::vector<double> cox_loss_grad(const SurvivalBatch& batch);

/// Harrell's c-index: pairs with t_i < t_j and E_i = 1; risk ties score 0.5; time ties excluded.
/// Throws NumericalError when no pair is comparable.
double concordance_index(std::span<const double> risks, std::span<const double> times,
                         std::span<const int> events);

/// Number of comparable pairs (0 means the c-index is undefined).
std::size_t comparable_pairs(std::span<const double> times, std::span<const int> events);

}  // namespace mmd::survival
