#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qrec/rng.hpp"

namespace qrec {

struct RecInteraction {
  int user = 0;
  int item = 0;
  std::int64_t time = 0;
  int click = 0;
};

struct SearchInteraction {
  int query = 0;
  int user = 0;
  int item = 0;
  std::int64_t time = 0;
  int click = 0;
};

/// Categorical feature rows indexed by entity id (dense, 0..n-1).
struct FeatureTable {
  std::vector<std::string> field_names;
  std::vector<std::vector<int>> rows;
  std::vector<int> cardinality;

  std::size_t field_count() const { return field_names.size(); }
};

struct Dataset {
  std::vector<RecInteraction> rec;
  std::vector<SearchInteraction> search;
  FeatureTable user_features;
  /// Field 0 is the item category.
  FeatureTable item_features;
  int n_users = 0;
  int n_items = 0;
  int n_queries = 0;

  int n_categories() const;
  int item_category(int item) const;

  /// Ground-truth query -> item cluster map; filled by the synthetic
  /// generator, empty for datasets loaded from files.
  std::vector<std::vector<int>> query_clusters;
};

std::vector<RecInteraction> load_rec_log(const std::string& path);
std::vector<SearchInteraction> load_search_log(const std::string& path);
/// kind is "user" or "item"; item tables expect the category column.
FeatureTable load_features(const std::string& path, const std::string& kind);

/// Loads the four interchange files and cross-validates every id.
Dataset load_dataset(const std::string& rec_path, const std::string& search_path,
                     const std::string& users_path, const std::string& items_path);

void save_dataset(const Dataset& ds, const std::string& dir);

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

/// Chronological leave-one-out over rec interactions: per user the last
/// interaction is test, the one before it validation, the rest train; users
/// with fewer than three go entirely to train. Ties break by input order.
struct SplitAssignment {
  std::vector<Split> tag;  // parallel to Dataset::rec
  std::vector<int> train, val, test;
};
SplitAssignment leave_one_out_split(const Dataset& ds);

/// Per-anchor behavior context: clicked-item history, query history, and the
/// forward window of future interactions that the next-item objective uses.
class BehaviorIndex {
 public:
  BehaviorIndex(const Dataset& ds, int l_max, int window_w);

  struct Context {
    std::vector<int> hist_items;    // clicked before t, oldest -> newest
    std::vector<int> hist_queries;  // issued before t, oldest -> newest
    int last_query = -1;            // most recent query before t, -1 if none
    std::vector<int> future_pos;    // clicked within the next W interactions
    std::vector<int> future_neg;    // non-clicked within the next W
  };

  /// Context for the anchor dataset.rec[rec_index]. History is strictly
  /// before the anchor's timestamp; the future window starts just after the
  /// anchor itself, so an anchor never sees its own label.
  Context context(int rec_index) const;

  int l_max() const { return l_max_; }
  int window() const { return window_w_; }

 private:
  struct UserLog {
    std::vector<int> rec_order;                    // indices into ds.rec
    std::vector<std::int64_t> rec_times;           // parallel to rec_order
    std::vector<std::pair<std::int64_t, int>> clicked;  // (time, item)
    std::vector<std::pair<std::int64_t, int>> queries;  // (time, query), deduped
  };

  const Dataset* ds_;
  int l_max_;
  int window_w_;
  std::vector<UserLog> users_;
  std::vector<int> pos_in_user_;  // rec index -> position in its user's rec_order
};

/// Items ever clicked under a query, and items exposed under it that were
/// never clicked there. Sets are sorted and deduplicated, so shuffled input
/// rows produce identical output.
struct QueryItemSets {
  std::vector<std::vector<int>> positives;
  std::vector<std::vector<int>> negatives;
};
QueryItemSets build_query_item_sets(const Dataset& ds);

struct SynthConfig {
  int users = 80;
  int items = 48;
  int queries = 16;
  int categories = 4;
  int rec_events_per_user = 30;
  int search_sessions_per_user = 12;
  int impressions_per_session = 4;
  double shift = 0.3;     // how far search-side interests drift from rec-side
  double affinity = 0.7;  // how tightly impressions concentrate on a query's cluster
  double noise = 0.1;     // label noise rate
  std::uint64_t seed = 1;
};

/// Two-domain synthetic world with planted structure: per-user category
/// preferences whose cross-domain gap grows with `shift`, query clusters that
/// capture clicks in proportion to `affinity`, and a recorded ground-truth
/// query -> item map.
Dataset generate_synthetic(const SynthConfig& cfg);

}  // namespace qrec
