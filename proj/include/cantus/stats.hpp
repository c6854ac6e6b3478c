#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cantus/error.hpp"

namespace cantus {

/// Paired per-phrase metric values: ground truth vs. generated.
struct PairedSample {
  std::vector<double> x, y;
};

struct WilcoxonResult {
  double w = 0.0;        // min(W+, W-)
  double p = 1.0;        // two-sided
  int n_effective = 0;   // pairs remaining after dropping zero differences
  bool all_zero = false; // every difference was zero
  bool exact = false;    // exact enumeration vs normal approximation
};

namespace stats_detail {

/// Ranks of |d| with average ranks for ties, scaled by 2 so every rank is an
/// integer (an average of consecutive integers is always a half-integer).
inline std::vector<long> double_ranks(const std::vector<double>& abs_d) {
  std::size_t n = abs_d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return abs_d[a] < abs_d[b]; });
  std::vector<long> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
    // positions i..j share the average rank ((i+1) + (j+1)) / 2
    long twice_rank = static_cast<long>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = twice_rank;
    i = j + 1;
  }
  return out;
}

/// Exact null distribution of 2*W+ by dynamic programming over the sign
/// assignments; counts[s] = number of assignments with 2*W+ == s.
inline std::vector<std::uint64_t> wplus_distribution(const std::vector<long>& twice_ranks) {
  long total = std::accumulate(twice_ranks.begin(), twice_ranks.end(), 0L);
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(total) + 1, 0);
  counts[0] = 1;
  long reached = 0;
  for (long r : twice_ranks) {
    reached += r;
    for (long s = reached; s >= r; --s) counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - r)];
  }
  return counts;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace stats_detail

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped; ties
/// get average ranks. Exact enumeration of all 2^n sign assignments when
/// n_effective <= exact_threshold, otherwise the normal approximation with
/// tie and continuity corrections.
inline WilcoxonResult wilcoxon_signed_rank(const PairedSample& s, int exact_threshold = 20) {
  if (s.x.size() != s.y.size()) throw DataError("paired sample lengths differ");
  if (s.x.empty()) throw DataError("empty paired sample");
  for (double v : s.x)
    if (!std::isfinite(v)) throw DataError("non-finite value in paired sample");
  for (double v : s.y)
    if (!std::isfinite(v)) throw DataError("non-finite value in paired sample");

  std::vector<double> diffs;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    double d = s.x[i] - s.y[i];
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult out;
  out.n_effective = static_cast<int>(diffs.size());
  if (diffs.empty()) {
    out.all_zero = true;
    out.p = 1.0;
    out.exact = true;
    return out;
  }

  std::vector<double> abs_d(diffs.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) abs_d[i] = std::abs(diffs[i]);
  std::vector<long> twice_ranks = stats_detail::double_ranks(abs_d);

  long twice_wplus = 0, twice_total = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    twice_total += twice_ranks[i];
    if (diffs[i] > 0) twice_wplus += twice_ranks[i];
  }
  long twice_wminus = twice_total - twice_wplus;
  long twice_w = std::min(twice_wplus, twice_wminus);
  out.w = static_cast<double>(twice_w) / 2.0;

  int n = out.n_effective;
  if (n <= exact_threshold) {
    out.exact = true;
    // P(min(W+, W-) <= w) = P(2W+ <= 2w) + P(2W+ >= total - 2w)
    auto counts = stats_detail::wplus_distribution(twice_ranks);
    std::uint64_t hits = 0;
    for (long v = 0; v <= static_cast<long>(counts.size()) - 1; ++v) {
      if (v <= twice_w || v >= twice_total - twice_w) hits += counts[static_cast<std::size_t>(v)];
    }
    out.p = static_cast<double>(hits) / std::ldexp(1.0, n);
    out.p = std::min(out.p, 1.0);
  } else {
    // Normal approximation with tie and continuity corrections. Summing the
    // actual (average) ranks gives sigma^2 = sum r_i^2 / 4, identical to the
    // textbook n(n+1)(2n+1)/24 - sum(t^3 - t)/48 tie correction. The null is
    // symmetric, so the leading Edgeworth refinement is the kurtosis term.
    double mean = 0.0, var = 0.0, sum_r4 = 0.0;
    for (long tr : twice_ranks) {
      double r = static_cast<double>(tr) / 2.0;
      mean += r / 2.0;
      var += r * r / 4.0;
      sum_r4 += r * r * r * r;
    }
    double sigma = std::sqrt(var);
    double z = (out.w - mean + 0.5) / sigma;  // continuity correction toward the mean
    double kurtosis_excess = -(sum_r4 / 8.0) / (var * var);
    double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    double lower = stats_detail::normal_cdf(z) - kurtosis_excess / 24.0 * (z * z * z - 3.0 * z) * phi;
    out.p = std::min(1.0, std::max(0.0, 2.0 * lower));
  }
  if (out.p <= 0.0) out.p = std::numeric_limits<double>::min();
  return out;
}

/// One table cell: non-significance marking per the bolding rule.
struct SignificanceCell {
  double p = 1.0;
  bool not_different = true;  // bold in the rendered table
  bool na = false;
};

/// p >= alpha marks the distribution pair "not significantly different";
/// the boundary p == alpha counts as non-significant.
inline SignificanceCell significance_cell(const PairedSample& s, double alpha) {
  WilcoxonResult w = wilcoxon_signed_rank(s);
  return {w.p, w.p >= alpha, false};
}

}  // namespace cantus
