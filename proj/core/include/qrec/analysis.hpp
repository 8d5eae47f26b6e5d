#pragma once

#include <span>
#include <vector>

#include "qrec/data.hpp"
#include "qrec/rng.hpp"

namespace qrec {

/// Normalized category frequencies of a click list. Errors on empty input.
std::vector<double> interest_distribution(const std::vector<int>& categories,
                                          int n_categories);

/// Jensen-Shannon divergence with base-2 logs, so the result lies in [0,1].
/// Inputs must be equal-length distributions normalized within 1e-9.
double js_divergence(std::span<const double> p, std::span<const double> q);

/// Per-user divergence between rec-domain and search-domain click interests;
/// users lacking clicks in either domain are skipped.
std::vector<double> per_user_interest_divergence(const Dataset& ds);

/// Search-to-rec leakage scores. For sampled positive rec interactions,
/// compares how often the clicked item's category already appeared in the
/// user's earlier search impressions against an independence model
/// Pr = 1 - (1 - p_src(cat))^{|s|}. r1 ratios the means, r2 means the ratios;
/// both are 1 under independence.
struct CorrelationReport {
  double r1 = 0.0;
  double r2 = 0.0;
  std::vector<double> indicator;  // per sample, 0 or 1
  std::vector<double> prob;       // per sample, model probability
};
CorrelationReport correlation_scores(const Dataset& ds, int max_samples, Rng& rng);

/// Percentile bootstrap over two score lists plus a two-sided p-value from
/// resampling under a mean-shifted null. p is floored at 1/(resamples+1).
struct BootstrapReport {
  int resamples = 0;
  double mean_a = 0.0, mean_b = 0.0, diff = 0.0;
  double ci_a_lo = 0.0, ci_a_hi = 0.0;
  double ci_b_lo = 0.0, ci_b_hi = 0.0;
  double ci_diff_lo = 0.0, ci_diff_hi = 0.0;
  double p_value = 1.0;
  std::vector<double> means_a, means_b, diffs;
};
BootstrapReport bootstrap_compare(const std::vector<double>& a,
                                  const std::vector<double>& b, int resamples,
                                  Rng& rng);

/// Histogram with `bins` equal cells over [0,1]; values at 1.0 fall into the
/// last cell.
std::vector<int> unit_histogram(const std::vector<double>& values, int bins);

}  // namespace qrec
