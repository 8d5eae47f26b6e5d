#include "qrec/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qrec {

void BilinearSimilarity::init(ParameterStore& store, Rng& rng, int d) {
  if (d <= 0) throw std::invalid_argument("similarity dimension must be positive");
  dim = d;
  store.create("ctr.w",
               rng.normal_tensor(d, d, 1.0 / std::sqrt(static_cast<double>(d))));
}

int BilinearSimilarity::score(Tape& t, ParamNodes& p, int e_q, int e_i) const {
  return t.tanh(t.dot(t.matmul(e_q, p("ctr.w")), e_i));
}

int BilinearSimilarity::scores(Tape& t, ParamNodes& p, int e_q,
                               int items) const {
  const int projected = t.matmul(e_q, p("ctr.w"));
  return t.tanh(t.matmul(items, t.transpose(projected)));
}

int contrastive_loss(Tape& t, ParamNodes& p, const BilinearSimilarity& sim,
                     int e_q, int pos_items, int neg_items, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("temperature must be positive");
  if (pos_items < 0 || neg_items < 0) {
    throw std::invalid_argument("contrast needs positive and negative items");
  }
  const double inv_beta = 1.0 / beta;
  const int s_pos = t.scale(sim.scores(t, p, e_q, pos_items), inv_beta);
  const int s_neg = t.scale(sim.scores(t, p, e_q, neg_items), inv_beta);
  const int log_denom = t.log(t.sum(t.exp(s_neg)));
  return t.scale(t.sub(t.mean(s_pos), log_denom), -1.0);
}

std::vector<int> sample_excluding(Rng& rng, int vocab,
                                  const std::vector<int>& exclude_sorted,
                                  int count) {
  if (count <= 0) throw std::invalid_argument("sample count must be positive");
  if (static_cast<int>(exclude_sorted.size()) >= vocab) {
    throw std::invalid_argument("exclusion list covers the whole vocabulary");
  }
  std::vector<int> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    const int v = static_cast<int>(rng.next_index(vocab));
    if (!std::binary_search(exclude_sorted.begin(), exclude_sorted.end(), v)) {
      out.push_back(v);
    }
  }
  return out;
}

}  // namespace qrec
