#pragma once

// Independent reference implementations used only by tests. They are written
// the slow, literal way on purpose and share no code with the library.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mmd/common.hpp"

namespace oracle {

/// Negative Cox partial log-likelihood by explicit risk-set loops, no max shift.
inline double cox_loss(const std::vector<double>& f, const std::vector<double>& t,
                       const std::vector<int>& e) {
  double loss = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!e[i]) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
      if (t[j] >= t[i]) denom += std::exp(f[j]);
    }
    loss -= f[i] - std::log(denom);
  }
  return loss;
}

/// Harrell's c-index over every ordered pair.
inline double cindex(const std::vector<double>& r, const std::vector<double>& t,
                     const std::vector<int>& e) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (i == j || !e[i] || !(t[i] < t[j])) continue;
      den += 1.0;
      if (r[i] > r[j]) num += 1.0;
      else if (r[i] == r[j]) num += 0.5;
    }
  }
  return num / den;
}

/// Exact retention probability of each modality under dropout with the
/// all-dropped outcome excluded, by enumerating every subset of `available`.
inline std::array<double, 4> dropout_marginals(mmd::ModalityMask available, double rate) {
  std::array<double, 4> keep{};
  double total = 0.0;
  for (unsigned s = 1; s < 16; ++s) {
    const mmd::ModalityMask m(s);
    if ((m & ~available).any()) continue;
    double p = 1.0;
    for (std::size_t v = 0; v < 4; ++v) {
      if (!available[v]) continue;
      p *= m[v] ? (1.0 - rate) : rate;
    }
    total += p;
    for (std::size_t v = 0; v < 4; ++v) {
      if (m[v]) keep[v] += p;
    }
  }
  for (auto& k : keep) k /= total;
  return keep;
}

/// Four nested loops over the factors; radiology varies slowest.
inline std::vector<double> kronecker4(const std::array<mmd::Vector, 4>& z) {
  std::vector<double> out;
  for (Eigen::Index a = 0; a < z[0].size(); ++a)
    for (Eigen::Index b = 0; b < z[1].size(); ++b)
      for (Eigen::Index c = 0; c < z[2].size(); ++c)
        for (Eigen::Index d = 0; d < z[3].size(); ++d) out.push_back(z[0][a] * z[1][b] * z[2][c] * z[3][d]);
  return out;
}

}  // namespace oracle
