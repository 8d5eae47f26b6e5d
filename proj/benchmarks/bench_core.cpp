#include <benchmark/benchmark.h>

#include <cstddef>
#include <numeric>
#include <vector>

#include "qrec/data.hpp"
#include "qrec/diffusion.hpp"
#include "qrec/din.hpp"
#include "qrec/nn.hpp"
#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/tape.hpp"
#include "qrec/train.hpp"

using namespace qrec;

namespace {

// Shared synthetic world with a full model, built once per process.
struct World {
  RunConfig cfg;
  Dataset ds;
  BehaviorIndex index;
  ParameterStore store;
  CtrModel model;
  std::vector<std::vector<int>> positives;

  World()
      : cfg(make_cfg()),
        ds(generate_synthetic(cfg.synth)),
        index(ds, cfg.l_max, cfg.window) {
    Rng rng(cfg.seed);
    model.cfg = cfg;
    model.init(store, rng, ds);
    positives = build_query_item_sets(ds).positives;
  }

  static RunConfig make_cfg() {
    RunConfig cfg;
    cfg.synth.users = 48;
    cfg.synth.items = 24;
    cfg.synth.queries = 8;
    cfg.synth.categories = 4;
    cfg.dim = 16;
    cfg.l_max = 30;
    cfg.window = 10;
    return cfg;
  }
};

World& world() {
  static World w;
  return w;
}

}  // namespace

static void BM_MatMulForward(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(7);
  Tensor a = rng.normal_tensor(n, n, 1.0);
  Tensor b = rng.normal_tensor(n, n, 1.0);
  for (auto _ : state) {
    Tape t;
    int out = t.matmul(t.leaf(a), t.leaf(b));
    benchmark::DoNotOptimize(t.value(out).data().data());
  }
}
BENCHMARK(BM_MatMulForward)->Arg(16)->Arg(64);

static void BM_MlpBackward(benchmark::State& state) {
  Rng rng(7);
  Tensor x = rng.normal_tensor(1, 64, 1.0);
  Tensor w1 = rng.normal_tensor(64, 64, 0.1);
  Tensor w2 = rng.normal_tensor(64, 1, 0.1);
  for (auto _ : state) {
    Tape t;
    int h = t.tanh(t.matmul(t.leaf(x), t.leaf(w1)));
    int y = t.sigmoid(t.matmul(h, t.leaf(w2)));
    GradientMap gm = t.backward(t.sum(y));
    benchmark::DoNotOptimize(gm.contains(0));
  }
}
BENCHMARK(BM_MlpBackward);

static void BM_BehaviorIndexBuild(benchmark::State& state) {
  const World& w = world();
  for (auto _ : state) {
    BehaviorIndex idx(w.ds, w.cfg.l_max, w.cfg.window);
    benchmark::DoNotOptimize(idx.l_max());
  }
}
BENCHMARK(BM_BehaviorIndexBuild);

static void BM_PredictForward(benchmark::State& state) {
  const World& w = world();
  const BehaviorIndex::Context ctx = w.index.context(0);
  const RecInteraction& anchor = w.ds.rec[0];
  for (auto _ : state) {
    Tape t;
    ParamNodes p(t, w.store);
    const int y = w.model.predict(t, p, w.ds, anchor.user, anchor.item, ctx);
    benchmark::DoNotOptimize(t.value(y).item());
  }
}
BENCHMARK(BM_PredictForward);

// One full optimizer step: joint batch loss, backward sweep, Adam update.
static void BM_TrainStep(benchmark::State& state) {
  World& w = world();
  AdamState opt(AdamConfig{});
  Rng rng(11);
  std::vector<int> batch(state.range(0));
  std::iota(batch.begin(), batch.end(), 0);
  for (auto _ : state) {
    Tape t;
    ParamNodes p(t, w.store);
    const BatchTerms terms =
        batch_loss(t, p, w.model, w.ds, w.index, batch, w.positives, rng);
    GradientMap gm = t.backward(terms.total);
    opt.step(w.store, p.collect(gm));
    benchmark::DoNotOptimize(opt.steps());
  }
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(32);

static void BM_DiffusionTrainStep(benchmark::State& state) {
  const World& w = world();
  const DiffusionConfig dc;
  const NoiseSchedule sched = build_schedule(dc.steps, dc.beta_min, dc.beta_max);
  const QueryItemSets sets = build_query_item_sets(w.ds);
  std::vector<Tensor> batch;
  for (int q = 0; q < w.ds.n_queries; ++q) {
    batch.push_back(build_x0(sets.positives[q], sets.negatives[q], w.ds.n_items,
                             dc.r_pos, dc.r_neg));
  }
  ParameterStore store;
  Rng init(3);
  Denoiser dn;
  dn.init(store, init, w.ds.n_items);
  AdamState opt(AdamConfig{});
  Rng noise(5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        diffusion_train_step(store, opt, dn, sched, dc, batch, noise));
  }
}
BENCHMARK(BM_DiffusionTrainStep);

static void BM_ReverseGenerate(benchmark::State& state) {
  const World& w = world();
  const DiffusionConfig dc;
  const NoiseSchedule sched = build_schedule(dc.steps, dc.beta_min, dc.beta_max);
  const QueryItemSets sets = build_query_item_sets(w.ds);
  const Tensor x0 = build_x0(sets.positives[0], sets.negatives[0], w.ds.n_items,
                             dc.r_pos, dc.r_neg);
  ParameterStore store;
  Rng init(3);
  Denoiser dn;
  dn.init(store, init, w.ds.n_items);
  const DenoiseFn net = [&](const Tensor& x, int t) {
    return dn.evaluate(store, x, t);
  };
  Rng gen(17);
  for (auto _ : state) {
    const Tensor out = reverse_generate(net, sched, x0, dc.steps / 2, true, gen);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_ReverseGenerate);

static void BM_Auc(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(9);
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = 0.05 * static_cast<double>(rng.next_index(1000));
    labels[i] = rng.next_bernoulli(0.5) ? 1 : 0;
  }
  labels[0] = 1;
  labels[1] = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(auc(scores, labels));
  }
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(10000);

BENCHMARK_MAIN();
