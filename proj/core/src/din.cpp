#include "qrec/din.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace qrec {

namespace {

std::vector<std::int64_t> widen(std::span<const int> ids) {
  std::vector<std::int64_t> out(ids.begin(), ids.end());
  return out;
}

/// Embedding rows start at scale 0.1 so early dot products sit in the
/// responsive range of sigmoid and tanh.
constexpr double kEmbedStd = 0.1;

}  // namespace

void EmbeddingTables::init(ParameterStore& store, Rng& rng, const Dataset& ds,
                           int d) {
  if (d <= 0) throw std::invalid_argument("embedding dimension must be positive");
  dim = d;
  n_user_fields = static_cast<int>(ds.user_features.field_count());
  n_item_fields = static_cast<int>(ds.item_features.field_count());
  store.create("emb.user", rng.normal_tensor(ds.n_users, d, kEmbedStd));
  store.create("emb.item", rng.normal_tensor(ds.n_items, d, kEmbedStd));
  store.create("emb.query", rng.normal_tensor(ds.n_queries, d, kEmbedStd));
  for (int f = 0; f < n_user_fields; ++f) {
    store.create("emb.user_f" + std::to_string(f),
                 rng.normal_tensor(ds.user_features.cardinality[f], d, kEmbedStd));
  }
  for (int f = 0; f < n_item_fields; ++f) {
    store.create("emb.item_f" + std::to_string(f),
                 rng.normal_tensor(ds.item_features.cardinality[f], d, kEmbedStd));
  }
}

int EmbeddingTables::user(Tape& t, ParamNodes& p, int u) const {
  const std::int64_t id = u;
  return t.gather_rows(p("emb.user"), std::span(&id, 1));
}

int EmbeddingTables::item(Tape& t, ParamNodes& p, int i) const {
  const std::int64_t id = i;
  return t.gather_rows(p("emb.item"), std::span(&id, 1));
}

int EmbeddingTables::query(Tape& t, ParamNodes& p, int q) const {
  const std::int64_t id = q;
  return t.gather_rows(p("emb.query"), std::span(&id, 1));
}

int EmbeddingTables::items(Tape& t, ParamNodes& p,
                           std::span<const int> ids) const {
  return t.gather_rows(p("emb.item"), widen(ids));
}

int EmbeddingTables::queries(Tape& t, ParamNodes& p,
                             std::span<const int> ids) const {
  return t.gather_rows(p("emb.query"), widen(ids));
}

int EmbeddingTables::user_fields(Tape& t, ParamNodes& p, const Dataset& ds,
                                 int u) const {
  std::vector<int> parts;
  for (int f = 0; f < n_user_fields; ++f) {
    const std::int64_t v = ds.user_features.rows.at(u).at(f);
    parts.push_back(
        t.gather_rows(p("emb.user_f" + std::to_string(f)), std::span(&v, 1)));
  }
  return parts.size() == 1 ? parts[0] : t.concat_cols(parts);
}

int EmbeddingTables::item_fields(Tape& t, ParamNodes& p, const Dataset& ds,
                                 int i) const {
  std::vector<int> parts;
  for (int f = 0; f < n_item_fields; ++f) {
    const std::int64_t v = ds.item_features.rows.at(i).at(f);
    parts.push_back(
        t.gather_rows(p("emb.item_f" + std::to_string(f)), std::span(&v, 1)));
  }
  return parts.size() == 1 ? parts[0] : t.concat_cols(parts);
}

int adaptive_pool(Tape& t, ParamNodes& p, const Mlp& scorer, int history,
                  int target, int dim) {
  if (history < 0) return t.leaf(Tensor::zeros(1, dim));
  const std::size_t n = t.value(history).rows();
  const int rep = t.repeat_rows(target, n);
  const int prod = t.mul(history, rep);
  const int diff = t.sub(history, rep);
  const std::vector<int> parts{history, rep, prod, diff};
  const int weights = scorer.forward(t, p, t.concat_cols(parts));
  return t.matmul(t.transpose(weights), history);
}

void DinModel::init(ParameterStore& store, Rng& rng, const Dataset& ds,
                    const DinConfig& config) {
  cfg = config;
  emb.init(store, rng, ds, cfg.dim);
  const std::size_t d = cfg.dim;
  item_scorer = {"din.item_scorer",
                 {4 * d, static_cast<std::size_t>(cfg.scorer_hidden), 1},
                 false};
  query_scorer = {"din.query_scorer",
                  {4 * d, static_cast<std::size_t>(cfg.scorer_hidden), 1},
                  false};
  const std::size_t in_dim =
      d * (4 + emb.n_user_fields + emb.n_item_fields);
  head = {"din.head",
          {in_dim, static_cast<std::size_t>(cfg.head_hidden1),
           static_cast<std::size_t>(cfg.head_hidden2), 1},
          true};
  item_scorer.init(store, rng);
  query_scorer.init(store, rng);
  head.init(store, rng);
}

int DinModel::predict(Tape& t, ParamNodes& p, const Dataset& ds, int user,
                      int item, std::span<const int> hist_items,
                      std::span<const int> hist_queries,
                      bool use_query_history) const {
  const int e_u = emb.user(t, p, user);
  const int e_i = emb.item(t, p, item);
  const int hist_b =
      hist_items.empty() ? -1 : emb.items(t, p, hist_items);
  const int nu_b = adaptive_pool(t, p, item_scorer, hist_b, e_i, cfg.dim);
  const int hist_q = (use_query_history && !hist_queries.empty())
                         ? emb.queries(t, p, hist_queries)
                         : -1;
  const int nu_q = adaptive_pool(t, p, query_scorer, hist_q, e_i, cfg.dim);

  std::vector<int> parts{e_u, e_i};
  if (emb.n_user_fields > 0) parts.push_back(emb.user_fields(t, p, ds, user));
  if (emb.n_item_fields > 0) parts.push_back(emb.item_fields(t, p, ds, item));
  parts.push_back(nu_b);
  parts.push_back(nu_q);
  return head.forward(t, p, t.concat_cols(parts));
}

int bce_loss(Tape& t, int predictions, std::span<const double> labels) {
  const auto& pred = t.value(predictions);
  if (pred.cols() != 1 || pred.rows() != labels.size() || labels.empty()) {
    throw std::invalid_argument("bce needs a non-empty {n,1} prediction column");
  }
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) {
      throw std::invalid_argument("bce labels must be 0 or 1");
    }
  }
  Tensor y(labels.size(), 1, std::vector<double>(labels.begin(), labels.end()));
  Tensor y_flip(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y_flip.set(i, 0, 1.0 - labels[i]);
  }
  const int yn = t.leaf(y);
  const int yf = t.leaf(y_flip);
  const int c = t.clamp(predictions, 1e-12, 1.0 - 1e-12);
  const int flip = t.add_const(t.scale(c, -1.0), 1.0);
  const int ll = t.add(t.mul(yn, t.log(c)), t.mul(yf, t.log(flip)));
  return t.scale(t.mean(ll), -1.0);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("auc needs matched non-empty scores and labels");
  }
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auc labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("auc needs both classes present");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Tied scores share the average of the 1-based ranks they span; the sums
  // stay half-integers, so the arithmetic below is exact in doubles.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - 0.5 * p * (p + 1.0)) /
         (p * static_cast<double>(neg));
}

}  // namespace qrec
