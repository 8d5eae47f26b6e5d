#include <algorithm>
#include <stdexcept>
#include <string>

#include "qrec/data.hpp"

namespace qrec {

namespace {

void validate(const SynthConfig& cfg) {
  if (cfg.users <= 0 || cfg.items <= 0 || cfg.queries <= 0 || cfg.categories <= 0) {
    throw std::invalid_argument("synthetic config: counts must be positive");
  }
  if (cfg.items % cfg.queries != 0 || cfg.queries % cfg.categories != 0) {
    throw std::invalid_argument(
        "synthetic config: items must divide evenly into query clusters and "
        "clusters into categories");
  }
  if (cfg.rec_events_per_user < 0 || cfg.search_sessions_per_user < 0 ||
      cfg.impressions_per_session <= 0) {
    throw std::invalid_argument("synthetic config: event counts out of range");
  }
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(cfg.shift) || !unit(cfg.affinity) || !unit(cfg.noise)) {
    throw std::invalid_argument("synthetic config: shift/affinity/noise must be in [0,1]");
  }
}

// Preference peaked on one category: 75% mass at home, the rest spread.
std::vector<double> peaked(int home, int k) {
  if (k == 1) return {1.0};
  std::vector<double> p(k, 0.25 / (k - 1));
  p[home] = 0.75;
  return p;
}

int draw_category(Rng& rng, const std::vector<double>& p) {
  double u = rng.next_uniform();
  for (std::size_t c = 0; c + 1 < p.size(); ++c) {
    u -= p[c];
    if (u < 0.0) return static_cast<int>(c);
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  Rng root(cfg.seed);

  const int cluster_size = cfg.items / cfg.queries;
  const int queries_per_cat = cfg.queries / cfg.categories;
  const int items_per_cat = cfg.items / cfg.categories;

  Dataset ds;
  ds.n_users = cfg.users;
  ds.n_items = cfg.items;
  ds.n_queries = cfg.queries;

  ds.item_features.field_names = {"category", "brand"};
  for (int i = 0; i < cfg.items; ++i) {
    ds.item_features.rows.push_back({i / items_per_cat, i % 7});
  }
  ds.item_features.cardinality = {cfg.categories, std::min(cfg.items, 7)};

  ds.user_features.field_names = {"bucket"};
  for (int u = 0; u < cfg.users; ++u) {
    ds.user_features.rows.push_back({u % 5});
  }
  ds.user_features.cardinality = {std::min(cfg.users, 5)};

  ds.query_clusters.resize(cfg.queries);
  for (int q = 0; q < cfg.queries; ++q) {
    for (int j = 0; j < cluster_size; ++j) {
      ds.query_clusters[q].push_back(q * cluster_size + j);
    }
  }
  auto in_cluster = [&](int q, int item) {
    return item >= q * cluster_size && item < (q + 1) * cluster_size;
  };

  for (int u = 0; u < cfg.users; ++u) {
    Rng rng = root.split();
    const int home = static_cast<int>(rng.next_index(cfg.categories));
    const int away = (home + 1) % cfg.categories;
    const auto p_rec = peaked(home, cfg.categories);
    const auto p_away = peaked(away, cfg.categories);
    std::vector<double> p_src(cfg.categories);
    for (int c = 0; c < cfg.categories; ++c) {
      p_src[c] = (1.0 - cfg.shift) * p_rec[c] + cfg.shift * p_away[c];
    }

    const int total = cfg.rec_events_per_user + cfg.search_sessions_per_user;
    int sessions_done = 0;
    int last_query_cat = -1;
    for (int k = 0; k < total; ++k) {
      const std::int64_t t = k + 1;
      // Bresenham interleave keeps search sessions spread ahead of rec
      // events so most anchors have query history.
      const bool is_search =
          sessions_done * total <= static_cast<std::int64_t>(k) * cfg.search_sessions_per_user &&
          sessions_done < cfg.search_sessions_per_user;
      if (is_search) {
        ++sessions_done;
        const int c = draw_category(rng, p_src);
        const int q = c * queries_per_cat + static_cast<int>(rng.next_index(queries_per_cat));
        last_query_cat = c;
        for (int r = 0; r < cfg.impressions_per_session; ++r) {
          const int item =
              rng.next_bernoulli(cfg.affinity)
                  ? q * cluster_size + static_cast<int>(rng.next_index(cluster_size))
                  : static_cast<int>(rng.next_index(cfg.items));
          const double base = in_cluster(q, item) ? 0.8 : 0.0;
          const double p = (1.0 - cfg.noise) * base + cfg.noise * 0.5;
          ds.search.push_back({q, u, item, t, rng.next_bernoulli(p) ? 1 : 0});
        }
      } else {
        const int item = static_cast<int>(rng.next_index(cfg.items));
        const int cat = item / items_per_cat;
        double base = 0.1;
        if (cat == home) base += 0.35;
        if (cat == last_query_cat) base += 0.4 * cfg.affinity;
        const double p = (1.0 - cfg.noise) * base + cfg.noise * 0.5;
        ds.rec.push_back({u, item, t, rng.next_bernoulli(p) ? 1 : 0});
      }
    }
  }
  return ds;
}

}  // namespace qrec
