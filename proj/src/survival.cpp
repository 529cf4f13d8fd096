#include "mmd/survival.hpp"

#include <algorithm>
#include <string>

namespace mmd::survival {

void SurvivalBatch::validate() const {
  if (times.size() != hazards.size() || events.size() != hazards.size()) {
    throw UsageError("survival batch: hazards, times and events must have equal length");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (!(times[i] > 0.0) || !std::isfinite(times[i])) {
      throw DataError("survival batch: time " + std::to_string(i) + " must be positive and finite");
    }
    if (events[i] != 0 && events[i] != 1) throw DataError("survival batch: events must be 0 or 1");
    if (!std::isfinite(hazards[i])) {
      throw NumericalError("survival batch: non-finite hazard at " + std::to_string(i));
    }
  }
}

std::size_t SurvivalBatch::num_events() const {
  return static_cast<std::size_t>(std::count(events.begin(), events.end(), 1));
}

std::vector<std::size_t> risk_set(std::span<const double> times, std::size_t i) {
  if (i >= times.size()) throw UsageError("risk_set: index out of range");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (times[j] >= times[i]) out.push_back(j);
  }
  return out;
}

namespace {

// log sum_{j: t_j >= t_i} exp(F_j) with max subtraction.
double log_risk_sum(const SurvivalBatch& b, std::size_t i) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (b.times[j] >= b.times[i]) mx = std::max(mx, b.hazards[j]);
  }
  double s = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (b.times[j] >= b.times[i]) s += std::exp(b.hazards[j] - mx);
  }
  return mx + std::log(s);
}

void require_event(const SurvivalBatch& b) {
  b.validate();
  if (b.num_events() == 0) throw NumericalError("cox loss undefined: batch has zero events");
}

}  // namespace

std::vector<double> cox_event_terms(const SurvivalBatch& batch) {
  require_event(batch);
  std::vector<double> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.events[i] == 1) terms.push_back(-(batch.hazards[i] - log_risk_sum(batch, i)));
  }
  return terms;
}

double cox_loss(const SurvivalBatch& batch) {
  double loss = 0.0;
  for (const double t : cox_event_terms(batch)) loss += t;
  return loss;
}

std::vector<double> cox_loss_grad(const SurvivalBatch& batch) {
  require_event(batch);
  const std::size_t n = batch.size();
  std::vector<double> grad(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (batch.events[k] != 1) continue;
    grad[k] -= 1.0;
    const double lse = log_risk_sum(batch, k);
    for (std::size_t i = 0; i < n; ++i) {
      if (batch.times[i] >= batch.times[k]) grad[i] += std::exp(batch.hazards[i] - lse);
    }
  }
  return grad;
}

std::size_t comparable_pairs(std::span<const double> times, std::span<const int> events) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] != 1) continue;
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (times[i] < times[j]) ++count;
    }
  }
  return count;
}

double concordance_index(std::span<const double> risks, std::span<const double> times,
                         std::span<const int> events) {
  if (risks.size() != times.size() || events.size() != times.size()) {
    throw UsageError("concordance_index: inputs must have equal length");
  }
  // Half-credits are counted as integers so the ratio is exact.
  std::uint64_t half_credits = 0;
  std::uint64_t pairs = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] != 1) continue;
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (!(times[i] < times[j])) continue;
      ++pairs;
      if (risks[i] > risks[j]) {
        half_credits += 2;
      } else if (risks[i] == risks[j]) {
        half_credits += 1;
      }
    }
  }
  if (pairs == 0) throw NumericalError("concordance_index: no comparable pairs");
  return static_cast<double>(half_credits) / (2.0 * static_cast<double>(pairs));
}

}  // namespace mmd::survival
