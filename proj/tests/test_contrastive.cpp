#include "qrec/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "qrec/nn.hpp"
#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/tape.hpp"

using namespace qrec;

TEST_SUITE_BEGIN("contrastive");

TEST_CASE("identity transform on a shared basis vector gives tanh of one") {
  ParameterStore store;
  Rng rng(1);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  store.set("ctr.w", Tensor::identity(4));

  Tape t;
  ParamNodes p(t, store);
  Tensor basis = Tensor::zeros(1, 4);
  basis.set(0, 0, 1.0);
  const int e = t.leaf(basis);
  const double s = t.value(sim.score(t, p, e, e)).item();
  CHECK(std::abs(s - std::tanh(1.0)) < 1e-12);
}

TEST_CASE("zero vectors and zero transforms score zero") {
  ParameterStore store;
  Rng rng(2);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);

  Tape t;
  ParamNodes p(t, store);
  const int zero = t.leaf(Tensor::zeros(1, 4));
  const int any = t.leaf(rng.normal_tensor(1, 4, 1.0));
  CHECK(t.value(sim.score(t, p, zero, any)).item() == 0.0);

  store.set("ctr.w", Tensor::zeros(4, 4));
  Tape t2;
  ParamNodes p2(t2, store);
  const int a = t2.leaf(rng.normal_tensor(1, 4, 1.0));
  const int b = t2.leaf(rng.normal_tensor(1, 4, 1.0));
  CHECK(t2.value(sim.score(t2, p2, a, b)).item() == 0.0);
}

TEST_CASE("score columns agree with one-at-a-time scores") {
  ParameterStore store;
  Rng rng(3);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  Tape t;
  ParamNodes p(t, store);
  const int q = t.leaf(rng.normal_tensor(1, 4, 1.0));
  const Tensor items = rng.normal_tensor(5, 4, 1.0);
  const int batch = sim.scores(t, p, q, t.leaf(items));
  for (std::size_t r = 0; r < 5; ++r) {
    Tensor row(1, 4);
    for (std::size_t c = 0; c < 4; ++c) row.set(0, c, items.at(r, c));
    const double one = t.value(sim.score(t, p, q, t.leaf(row))).item();
    CHECK(std::abs(t.value(batch).at(r, 0) - one) <= 1e-12);
  }
}

TEST_CASE("one positive against one equal negative costs nothing") {
  ParameterStore store;
  Rng rng(4);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  Tape t;
  ParamNodes p(t, store);
  const int q = t.leaf(rng.normal_tensor(1, 4, 1.0));
  const Tensor item = rng.normal_tensor(1, 4, 1.0);
  const double l3 =
      t.value(contrastive_loss(t, p, sim, q, t.leaf(item), t.leaf(item), 0.1))
          .item();
  CHECK(std::abs(l3) < 1e-12);
}

TEST_CASE("equal similarities everywhere cost the log of the pool size") {
  ParameterStore store;
  Rng rng(5);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  Tape t;
  ParamNodes p(t, store);
  const int q = t.leaf(rng.normal_tensor(1, 4, 1.0));
  const Tensor item = rng.normal_tensor(1, 4, 1.0);
  for (std::size_t n : {1, 2, 8, 32}) {
    Tensor negs(n, 4);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < 4; ++c) negs.set(r, c, item.at(0, c));
    }
    const double l3 =
        t.value(contrastive_loss(t, p, sim, q, t.leaf(item), t.leaf(negs), 0.1))
            .item();
    CHECK(std::abs(l3 - std::log(static_cast<double>(n))) < 1e-9);
  }
}

TEST_CASE("an enormous temperature flattens every similarity") {
  ParameterStore store;
  Rng rng(6);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  Tape t;
  ParamNodes p(t, store);
  const int q = t.leaf(rng.normal_tensor(1, 4, 1.0));
  const int pos = t.leaf(rng.normal_tensor(1, 4, 1.0));
  const int negs = t.leaf(rng.normal_tensor(16, 4, 1.0));
  const double l3 =
      t.value(contrastive_loss(t, p, sim, q, pos, negs, 1e12)).item();
  CHECK(std::abs(l3 - std::log(16.0)) < 1e-6);
}

TEST_CASE("raising a positive similarity lowers the loss strictly") {
  ParameterStore store;
  Rng rng(7);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  store.set("ctr.w", Tensor::identity(4));
  Tape t;
  ParamNodes p(t, store);
  Tensor q(1, 4, {1.0, 0.0, 0.0, 0.0});
  const int qn = t.leaf(q);
  const int negs = t.leaf(rng.normal_tensor(8, 4, 0.5));
  double prev = 1e300;
  for (double a : {0.2, 0.6, 1.0, 1.4}) {
    Tensor pos(1, 4, {a, 0.0, 0.0, 0.0});
    const double l3 =
        t.value(contrastive_loss(t, p, sim, qn, t.leaf(pos), negs, 0.1)).item();
    CHECK(l3 < prev);
    prev = l3;
  }
}

TEST_CASE("the loss ignores ordering inside each set") {
  ParameterStore store;
  Rng rng(8);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  Tape t;
  ParamNodes p(t, store);
  const int q = t.leaf(rng.normal_tensor(1, 4, 1.0));
  const Tensor pos = rng.normal_tensor(3, 4, 1.0);
  const Tensor neg = rng.normal_tensor(5, 4, 1.0);
  Tensor pos_rev(3, 4), neg_rev(5, 4);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) pos_rev.set(r, c, pos.at(2 - r, c));
  }
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) neg_rev.set(r, c, neg.at(4 - r, c));
  }
  const double a =
      t.value(contrastive_loss(t, p, sim, q, t.leaf(pos), t.leaf(neg), 0.1))
          .item();
  const double b = t.value(contrastive_loss(t, p, sim, q, t.leaf(pos_rev),
                                            t.leaf(neg_rev), 0.1))
                       .item();
  CHECK(std::abs(a - b) <= 1e-12);
}

TEST_CASE("transform gradients match finite differences") {
  ParameterStore store;
  Rng rng(9);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  const Tensor q = rng.normal_tensor(1, 4, 1.0);
  const Tensor pos = rng.normal_tensor(2, 4, 1.0);
  const Tensor neg = rng.normal_tensor(6, 4, 1.0);

  const auto loss_value = [&]() {
    Tape t;
    ParamNodes p(t, store);
    return t
        .value(contrastive_loss(t, p, sim, t.leaf(q), t.leaf(pos),
                                t.leaf(neg), 0.5))
        .item();
  };

  Tape t;
  ParamNodes p(t, store);
  const int loss = contrastive_loss(t, p, sim, t.leaf(q), t.leaf(pos),
                                    t.leaf(neg), 0.5);
  const auto grads = p.collect(t.backward(loss));
  const Tensor original = store.get("ctr.w");
  const auto fd = finite_difference_gradient(
      [&](const Tensor& x) {
        store.set("ctr.w", x);
        return loss_value();
      },
      original);
  store.set("ctr.w", original);
  CHECK(max_rel_err(grads.at("ctr.w"), fd) < 1e-4);
}

TEST_CASE("sampling avoids excluded ids and fails on full exclusion") {
  Rng rng(10);
  const std::vector<int> exclude{1, 3, 5};
  const auto got = sample_excluding(rng, 8, exclude, 500);
  CHECK(got.size() == 500);
  for (int v : got) {
    CHECK(v >= 0);
    CHECK(v < 8);
    CHECK(!std::binary_search(exclude.begin(), exclude.end(), v));
  }
  std::set<int> distinct(got.begin(), got.end());
  CHECK(distinct.size() == 5);

  const std::vector<int> all{0, 1, 2};
  CHECK_THROWS_AS(sample_excluding(rng, 3, all, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_excluding(rng, 3, {}, 0), std::invalid_argument);
}

TEST_CASE("sampled denominators track the full pool up to the size ratio") {
  ParameterStore store;
  Rng rng(11);
  BilinearSimilarity sim;
  sim.init(store, rng, 4);
  const Tensor table = rng.normal_tensor(20, 4, 1.0);
  const Tensor q = rng.normal_tensor(1, 4, 1.0);
  const std::vector<int> positives{0, 1, 2, 3};
  std::vector<int> pool;
  for (int i = 4; i < 20; ++i) pool.push_back(i);

  const auto rows_of = [&](const std::vector<int>& ids) {
    Tensor out(ids.size(), 4);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      for (std::size_t c = 0; c < 4; ++c) out.set(r, c, table.at(ids[r], c));
    }
    return out;
  };
  const auto loss_with = [&](const std::vector<int>& negs) {
    Tape t;
    ParamNodes p(t, store);
    return t
        .value(contrastive_loss(t, p, sim, t.leaf(q), t.leaf(rows_of(positives)),
                                t.leaf(rows_of(negs)), 1.0))
        .item();
  };

  const double full = loss_with(pool);
  // Expected sampled loss = full loss + log(sample/pool); the residual is
  // the concavity bias of log on the sampled mean, shrinking with samples.
  std::vector<double> gaps;
  for (int n : {4, 8, 14}) {
    double mean_sampled = 0.0;
    const int draws = 3000;
    for (int k = 0; k < draws; ++k) {
      mean_sampled += loss_with(sample_excluding(rng, 20, positives, n));
    }
    mean_sampled /= draws;
    gaps.push_back(std::abs(mean_sampled - (full + std::log(n / 16.0))));
  }
  CHECK(gaps[0] > gaps[1]);
  CHECK(gaps[1] > gaps[2]);
  CHECK(gaps[2] < 0.03);
}

TEST_SUITE_END();
