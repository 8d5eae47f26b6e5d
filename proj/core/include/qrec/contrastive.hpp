#pragma once

#include <vector>

#include "qrec/nn.hpp"
#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/tape.hpp"

namespace qrec {

/// Learned query-to-item similarity s(a, b) = tanh(a W b^T), bounded to
/// (-1, 1). The matrix lives in the store as "ctr.w".
struct BilinearSimilarity {
  int dim = 0;

  void init(ParameterStore& store, Rng& rng, int d);

  /// Scalar similarity {1,1} between two {1,d} rows.
  int score(Tape& t, ParamNodes& p, int e_q, int e_i) const;
  /// Column {n,1} of similarities between one query row and n item rows.
  int scores(Tape& t, ParamNodes& p, int e_q, int items) const;
};

/// Softmax-contrast between a query and its positive items against sampled
/// negatives: mean over positives of -log[exp(s_pos/beta) / sum_j
/// exp(s_neg_j/beta)]. The denominator runs over negatives only.
int contrastive_loss(Tape& t, ParamNodes& p, const BilinearSimilarity& sim,
                     int e_q, int pos_items, int neg_items, double beta);

/// `count` uniform draws from [0, vocab) excluding `exclude_sorted` (sorted
/// ascending, unique), with replacement. Throws when the complement is empty.
std::vector<int> sample_excluding(Rng& rng, int vocab,
                                  const std::vector<int>& exclude_sorted,
                                  int count);

}  // namespace qrec
