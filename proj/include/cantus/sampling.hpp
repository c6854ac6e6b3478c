#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "cantus/error.hpp"

namespace cantus {

struct DegenerateDistribution : Error {
  using Error::Error;
};

/// Uniform double in [0, 1) with a fixed bit recipe, so sampling is
/// reproducible across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Nucleus sampling: restrict to the smallest highest-probability prefix with
/// cumulative mass >= p, renormalize, sample. Ties in probability are broken
/// by index for determinism. p -> 0 degenerates to argmax.
inline int top_p_sample(std::span<const double> probs, double p, std::mt19937_64& rng) {
  if (probs.empty()) throw DegenerateDistribution("empty distribution");
  double total = 0.0;
  for (double q : probs) {
    if (!std::isfinite(q) || q < 0.0) throw DegenerateDistribution("non-finite or negative probability");
    total += q;
  }
  if (total <= 0.0) throw DegenerateDistribution("all-zero distribution");

  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });

  double target = std::min(std::max(p, 0.0), 1.0) * total;
  double cum = 0.0;
  std::size_t nucleus = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    cum += probs[static_cast<std::size_t>(order[i])];
    nucleus = i + 1;
    if (cum >= target - 1e-12) break;
  }

  double u = uniform01(rng) * cum;
  double acc = 0.0;
  for (std::size_t i = 0; i < nucleus; ++i) {
    acc += probs[static_cast<std::size_t>(order[i])];
    if (u < acc) return order[i];
  }
  return order[nucleus - 1];
}

}  // namespace cantus
