#include "qrec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qrec {

namespace {

double kl_bits(std::span<const double> p, std::span<const double> m) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log2(p[i] / m[i]);
  }
  return s;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Percentile with linear interpolation on a sorted copy.
double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

double resampled_mean(const std::vector<double>& v, Rng& rng) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += v[rng.next_index(v.size())];
  }
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> interest_distribution(const std::vector<int>& categories,
                                          int n_categories) {
  if (categories.empty()) {
    throw std::invalid_argument("interest distribution needs at least one click");
  }
  if (n_categories <= 0) {
    throw std::invalid_argument("category count must be positive");
  }
  std::vector<double> p(n_categories, 0.0);
  for (int c : categories) {
    if (c < 0 || c >= n_categories) {
      throw std::invalid_argument("category id out of range: " + std::to_string(c));
    }
    p[c] += 1.0;
  }
  for (double& v : p) v /= static_cast<double>(categories.size());
  return p;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw std::invalid_argument("js divergence needs equal-length distributions");
  }
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) {
      throw std::invalid_argument("js divergence inputs must be non-negative");
    }
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
    throw std::invalid_argument("js divergence inputs must be normalized");
  }
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl_bits(p, m) + 0.5 * kl_bits(q, m);
}

std::vector<double> per_user_interest_divergence(const Dataset& ds) {
  std::vector<std::vector<int>> rec_cats(ds.n_users), src_cats(ds.n_users);
  for (const auto& r : ds.rec) {
    if (r.click == 1) rec_cats[r.user].push_back(ds.item_category(r.item));
  }
  for (const auto& s : ds.search) {
    if (s.click == 1) src_cats[s.user].push_back(ds.item_category(s.item));
  }
  std::vector<double> out;
  for (int u = 0; u < ds.n_users; ++u) {
    if (rec_cats[u].empty() || src_cats[u].empty()) continue;
    const auto p = interest_distribution(rec_cats[u], ds.n_categories());
    const auto q = interest_distribution(src_cats[u], ds.n_categories());
    out.push_back(js_divergence(p, q));
  }
  return out;
}

CorrelationReport correlation_scores(const Dataset& ds, int max_samples, Rng& rng) {
  if (max_samples <= 0) throw std::invalid_argument("max_samples must be positive");
  const int k = ds.n_categories();

  // Global category frequency over all search impressions.
  std::vector<double> p_src(k, 0.0);
  double total = 0.0;
  for (const auto& s : ds.search) {
    p_src[ds.item_category(s.item)] += 1.0;
    total += 1.0;
  }
  if (total == 0.0) {
    throw std::invalid_argument("correlation needs a non-empty search log");
  }
  for (double& v : p_src) v /= total;

  // Per user: impression times (for |s|) and per-category earliest exposure.
  std::vector<std::vector<std::int64_t>> times(ds.n_users);
  constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::max();
  std::vector<std::vector<std::int64_t>> first_seen(
      ds.n_users, std::vector<std::int64_t>(k, kNever));
  for (const auto& s : ds.search) {
    times[s.user].push_back(s.time);
    auto& f = first_seen[s.user][ds.item_category(s.item)];
    f = std::min(f, s.time);
  }
  for (auto& t : times) std::sort(t.begin(), t.end());

  // Candidates: positive rec interactions with at least one earlier
  // impression; samples where the model probability degenerates to zero are
  // skipped alongside (their indicator is necessarily zero too).
  std::vector<int> candidates;
  for (std::size_t i = 0; i < ds.rec.size(); ++i) {
    const auto& r = ds.rec[i];
    if (r.click != 1) continue;
    const auto& t = times[r.user];
    const auto n_before = std::lower_bound(t.begin(), t.end(), r.time) - t.begin();
    if (n_before == 0) continue;
    if (p_src[ds.item_category(r.item)] <= 0.0) continue;
    candidates.push_back(static_cast<int>(i));
  }
  if (candidates.empty()) {
    throw std::invalid_argument("no usable positive interactions for correlation");
  }
  if (static_cast<int>(candidates.size()) > max_samples) {
    // Partial Fisher-Yates keeps the draw without replacement deterministic.
    for (int i = 0; i < max_samples; ++i) {
      const std::size_t j = i + rng.next_index(candidates.size() - i);
      std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(max_samples);
  }

  CorrelationReport rep;
  for (int idx : candidates) {
    const auto& r = ds.rec[idx];
    const int cat = ds.item_category(r.item);
    const auto& t = times[r.user];
    const auto n_before = std::lower_bound(t.begin(), t.end(), r.time) - t.begin();
    const bool seen = first_seen[r.user][cat] < r.time;
    const double pr =
        1.0 - std::pow(1.0 - p_src[cat], static_cast<double>(n_before));
    rep.indicator.push_back(seen ? 1.0 : 0.0);
    rep.prob.push_back(pr);
  }
  double sum_ind = 0.0, sum_pr = 0.0, sum_ratio = 0.0;
  for (std::size_t i = 0; i < rep.indicator.size(); ++i) {
    sum_ind += rep.indicator[i];
    sum_pr += rep.prob[i];
    sum_ratio += rep.indicator[i] / rep.prob[i];
  }
  const double n = static_cast<double>(rep.indicator.size());
  rep.r1 = (sum_ind / n) / (sum_pr / n);
  rep.r2 = sum_ratio / n;
  return rep;
}

BootstrapReport bootstrap_compare(const std::vector<double>& a,
                                  const std::vector<double>& b, int resamples,
                                  Rng& rng) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("bootstrap needs non-empty score lists");
  }
  if (resamples <= 0) throw std::invalid_argument("resamples must be positive");

  BootstrapReport rep;
  rep.resamples = resamples;
  rep.mean_a = mean_of(a);
  rep.mean_b = mean_of(b);
  rep.diff = rep.mean_a - rep.mean_b;

  rep.means_a.reserve(resamples);
  rep.means_b.reserve(resamples);
  rep.diffs.reserve(resamples);
  for (int r = 0; r < resamples; ++r) {
    const double ma = resampled_mean(a, rng);
    const double mb = resampled_mean(b, rng);
    rep.means_a.push_back(ma);
    rep.means_b.push_back(mb);
    rep.diffs.push_back(ma - mb);
  }
  rep.ci_a_lo = percentile(rep.means_a, 0.025);
  rep.ci_a_hi = percentile(rep.means_a, 0.975);
  rep.ci_b_lo = percentile(rep.means_b, 0.025);
  rep.ci_b_hi = percentile(rep.means_b, 0.975);
  rep.ci_diff_lo = percentile(rep.diffs, 0.025);
  rep.ci_diff_hi = percentile(rep.diffs, 0.975);

  // Two-sided test: recenter both lists on the pooled mean and count
  // resampled mean gaps at least as extreme as the observed one.
  const double pooled =
      (rep.mean_a * a.size() + rep.mean_b * b.size()) / (a.size() + b.size());
  std::vector<double> a0(a), b0(b);
  for (double& v : a0) v += pooled - rep.mean_a;
  for (double& v : b0) v += pooled - rep.mean_b;
  int extreme = 0;
  for (int r = 0; r < resamples; ++r) {
    const double d = resampled_mean(a0, rng) - resampled_mean(b0, rng);
    if (std::abs(d) >= std::abs(rep.diff)) ++extreme;
  }
  // The observed statistic counts as one of the extreme draws, which also
  // keeps the estimate away from an impossible exact zero.
  rep.p_value = static_cast<double>(extreme + 1) / static_cast<double>(resamples + 1);
  return rep;
}

std::vector<int> unit_histogram(const std::vector<double>& values, int bins) {
  if (bins <= 0) throw std::invalid_argument("histogram needs positive bin count");
  std::vector<int> counts(bins, 0);
  for (double v : values) {
    if (v < 0.0 || v > 1.0) {
      throw std::invalid_argument("histogram values must lie in [0,1]");
    }
    const int cell = std::min(bins - 1, static_cast<int>(v * bins));
    ++counts[cell];
  }
  return counts;
}

}  // namespace qrec
