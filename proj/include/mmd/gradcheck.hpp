#pragma once

#include <string>
#include <vector>

#include "mmd/common.hpp"

namespace mmd::gradcheck {

struct Options {
  std::uint64_t seed = 0;
  std::size_t instances = 50;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t comparisons = 0;  // gradient blocks compared
  double worst_error = 0.0;     // max norm-wise relative error
  double tolerance = 0.0;

  bool passed() const { return instances > 0 && worst_error <= tolerance; }
};

/// ||a - b|| / max(||a||, ||b||); absolute error when both norms are below 1e-10.
double normwise_relative_error(const Vector& analytic, const Vector& numeric);

/// Central-difference checks of every analytic gradient in the library: dense
/// nets of each activation mix, the Cox loss, the reconstruction loss, and the
/// total loss of each fusion strategy (small random configurations plus sampled
/// coordinates of the default-size models). Instances whose ReLU pre-activations
/// sit within 1e-3 of the kink are redrawn.
std::vector<CheckResult> run_suite(const Options& options);

}  // namespace mmd::gradcheck
