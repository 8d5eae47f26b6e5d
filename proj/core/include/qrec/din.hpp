#pragma once

#include <span>
#include <string>
#include <vector>

#include "qrec/data.hpp"
#include "qrec/nn.hpp"
#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/tape.hpp"

namespace qrec {

/// Embedding lookups for users, items, queries, and categorical feature
/// fields. Tables live in the ParameterStore under "emb.*"; every row is
/// d-dimensional.
struct EmbeddingTables {
  int dim = 0;
  int n_user_fields = 0;
  int n_item_fields = 0;

  void init(ParameterStore& store, Rng& rng, const Dataset& ds, int d);

  int user(Tape& t, ParamNodes& p, int u) const;
  int item(Tape& t, ParamNodes& p, int i) const;
  int query(Tape& t, ParamNodes& p, int q) const;
  /// Sequence lookups, one row per id. Empty input is a caller error.
  int items(Tape& t, ParamNodes& p, std::span<const int> ids) const;
  int queries(Tape& t, ParamNodes& p, std::span<const int> ids) const;
  /// Field embeddings concatenated in schema order, {1, n_fields*d}.
  int user_fields(Tape& t, ParamNodes& p, const Dataset& ds, int u) const;
  int item_fields(Tape& t, ParamNodes& p, const Dataset& ds, int i) const;
};

struct DinConfig {
  int dim = 8;
  int scorer_hidden = 16;
  int head_hidden1 = 64;
  int head_hidden2 = 32;
};

/// Target-aware weighted sum of a history: each history row e_j gets the
/// scalar scorer([e_j, e_t, e_j*e_t, e_j-e_t]) and the rows are summed with
/// those weights, unnormalized. history == -1 stands for an empty history
/// and pools to the zero vector.
int adaptive_pool(Tape& t, ParamNodes& p, const Mlp& scorer, int history,
                  int target, int dim);

/// CTR backbone: embeddings, two attention scorers (item and query
/// histories, separate weights), and a sigmoid MLP head over the
/// concatenated input.
struct DinModel {
  DinConfig cfg;
  EmbeddingTables emb;
  Mlp item_scorer, query_scorer, head;

  void init(ParameterStore& store, Rng& rng, const Dataset& ds,
            const DinConfig& config = {});

  /// Click probability node {1,1} for one sample. With use_query_history
  /// false the query interest slot is pinned to zeros, which reduces the
  /// model to a plain item-history backbone with inert extra weights.
  int predict(Tape& t, ParamNodes& p, const Dataset& ds, int user, int item,
              std::span<const int> hist_items, std::span<const int> hist_queries,
              bool use_query_history = true) const;
};

/// Mean binary cross entropy of a {n,1} prediction column against labels,
/// clamped to [1e-12, 1-1e-12] so the node stays finite.
int bce_loss(Tape& t, int predictions, std::span<const double> labels);

/// Probability that a random positive outscores a random negative, ties at
/// half weight, computed exactly by tie-averaged rank sums. Throws if either
/// class is missing.
double auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace qrec
