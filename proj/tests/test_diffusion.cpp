#include "qrec/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "qrec/nn.hpp"
#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/tape.hpp"

using namespace qrec;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("qrec_diffusion_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    const auto p = path / name;
    std::ofstream out(p);
    out << content;
    return p.string();
  }
};

template <typename Fn>
std::string thrown_message(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

Tensor normal_row(Rng& rng, std::size_t n) {
  Tensor x(1, n);
  for (std::size_t i = 0; i < n; ++i) x.set(0, i, rng.next_normal());
  return x;
}

void zero_parameters(ParameterStore& store, const std::string& prefix) {
  for (const std::string& name : store.names()) {
    if (name.rfind(prefix, 0) != 0) continue;
    const Tensor& p = store.get(name);
    store.set(name, Tensor::zeros(p.rows(), p.cols()));
  }
}

}  // namespace

TEST_SUITE_BEGIN("diffusion");

TEST_CASE("schedule boundary values for a single step") {
  const NoiseSchedule s = build_schedule(1, 0.01, 0.5);
  CHECK(s.last_step() == 1);
  CHECK(s.beta[1] == 0.01);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.alpha_bar[1] == 1.0 - 0.01);
  CHECK(s.sigma2[1] == 0.0);
}

TEST_CASE("constant beta decays the signal geometrically") {
  const NoiseSchedule s = build_schedule(20, 0.1, 0.1);
  for (int t = 1; t <= 20; ++t) {
    CHECK(std::abs(s.alpha_bar[t] - std::pow(s.alpha[1], t)) < 1e-12);
  }
}

TEST_CASE("linear ramp endpoints, monotone signal decay, variance bounds") {
  const NoiseSchedule s = build_schedule(100, 1e-4, 0.02);
  CHECK(s.beta[1] == 1e-4);
  CHECK(s.beta[100] == 0.02);
  for (int t = 1; t <= 100; ++t) {
    CHECK(s.alpha_bar[t] > 0.0);
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    if (t >= 2) {
      CHECK(s.sigma2[t] > 0.0);
      CHECK(s.sigma2[t] < s.beta[t]);
    }
  }
  CHECK(s.sigma2[1] == 0.0);
}

TEST_CASE("schedule rejects invalid bounds") {
  CHECK_THROWS_AS(build_schedule(0, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.0, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.3, 0.2), std::invalid_argument);
}

TEST_CASE("query vector construction places the three levels") {
  const Tensor a = build_x0({0}, {1}, 3, 0.5, -0.5);
  CHECK(a.at(0, 0) == 0.5);
  CHECK(a.at(0, 1) == -0.5);
  CHECK(a.at(0, 2) == 0.0);

  const Tensor b = build_x0({}, {}, 3, 0.5, -0.5);
  CHECK(b.bitwise_equal(Tensor::zeros(1, 3)));

  const Tensor c = build_x0({0}, {1}, 3, 0.75, -0.75);
  CHECK(c.at(0, 0) == 0.75);
  CHECK(c.at(0, 1) == -0.75);
  CHECK(c.at(0, 2) == 0.0);

  CHECK_THROWS_AS(build_x0({3}, {}, 3, 0.5, -0.5), std::out_of_range);
  CHECK_THROWS_AS(build_x0({}, {-1}, 3, 0.5, -0.5), std::out_of_range);
  CHECK_THROWS_AS(build_x0({}, {}, 0, 0.5, -0.5), std::invalid_argument);
}

TEST_CASE("forward corruption is exact at the clean and pure-noise limits") {
  Rng rng(3);
  const Tensor x0 = normal_row(rng, 5);
  const Tensor eps = normal_row(rng, 5);

  const NoiseSchedule clean = build_schedule(3, 1e-18, 1e-18);
  CHECK(clean.alpha_bar[3] == 1.0);
  CHECK(q_sample(x0, 3, eps, clean).bitwise_equal(x0));

  const NoiseSchedule noisy = build_schedule(20, 0.99, 0.99);
  CHECK(max_abs_diff(q_sample(x0, 20, eps, noisy), eps) < 1e-12);

  CHECK_THROWS_AS(q_sample(x0, 0, eps, noisy), std::invalid_argument);
  CHECK_THROWS_AS(q_sample(x0, 21, eps, noisy), std::invalid_argument);
  CHECK_THROWS_AS(q_sample(x0, 1, normal_row(rng, 4), noisy), std::invalid_argument);
}

TEST_CASE("forward corruption matches its first two moments at every step") {
  const NoiseSchedule s = build_schedule(10, 1e-4, 0.02);
  const Tensor x0 = Tensor::row({1.0, -0.8, 0.6, -0.5});
  const int draws = 10000;
  Rng rng(34);
  for (int t = 1; t <= 10; ++t) {
    const double signal = std::sqrt(s.alpha_bar[t]);
    const double want_var = 1.0 - s.alpha_bar[t];
    std::vector<double> sum(4, 0.0), sq(4, 0.0);
    for (int d = 0; d < draws; ++d) {
      const Tensor x_t = q_sample(x0, t, normal_row(rng, 4), s);
      for (std::size_t i = 0; i < 4; ++i) {
        const double centered = x_t.at(0, i) - signal * x0.at(0, i);
        sum[i] += x_t.at(0, i);
        sq[i] += centered * centered;
      }
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const double want_mean = signal * x0.at(0, i);
      CHECK(std::abs(sum[i] / draws - want_mean) <= 0.02 * std::abs(want_mean));
      CHECK(std::abs(sq[i] / draws - want_var) <= 0.03 * want_var);
    }
  }
}

TEST_CASE("posterior boundary cases are exact") {
  Rng rng(9);
  const Tensor x_t = normal_row(rng, 4);
  const Tensor x0 = normal_row(rng, 4);

  const NoiseSchedule s = build_schedule(5, 1e-3, 0.4);
  const PosteriorStats first = posterior_stats(x_t, x0, 1, s);
  CHECK(first.mean.bitwise_equal(x0));
  CHECK(first.variance == 0.0);

  NoiseSchedule unit;
  unit.beta = {0.0, 0.5, 1e-18};
  unit.alpha = {1.0, 0.5, 1.0 - 1e-18};
  unit.alpha_bar = {1.0, 0.5, 0.5 * (1.0 - 1e-18)};
  unit.sigma2 = {0.0, 0.0,
                 (1.0 - unit.alpha[2]) * (1.0 - unit.alpha_bar[1]) /
                     (1.0 - unit.alpha_bar[2])};
  REQUIRE(unit.alpha[2] == 1.0);
  const PosteriorStats kept = posterior_stats(x_t, x0, 2, unit);
  CHECK(kept.mean.bitwise_equal(x_t));
  CHECK(kept.variance == 0.0);

  CHECK_THROWS_AS(posterior_stats(x_t, x0, 0, s), std::invalid_argument);
  CHECK_THROWS_AS(posterior_stats(x_t, x0, 6, s), std::invalid_argument);
  CHECK_THROWS_AS(posterior_stats(x_t, normal_row(rng, 3), 2, s), std::invalid_argument);
}

TEST_CASE("posterior mean matches an independent coefficient derivation") {
  const NoiseSchedule s = build_schedule(30, 1e-3, 0.05);
  Rng rng(21);
  const Tensor x_t = normal_row(rng, 6);
  const Tensor x0 = normal_row(rng, 6);
  for (int t : {2, 7, 15, 30}) {
    const double u = std::sqrt(s.alpha[t]);
    const double v = std::sqrt(s.alpha_bar[t - 1]);
    const PosteriorStats ps = posterior_stats(x_t, x0, t, s);
    for (std::size_t i = 0; i < 6; ++i) {
      const double want = (u * (1.0 - v * v) * x_t.at(0, i) +
                           v * (1.0 - u * u) * x0.at(0, i)) /
                          (1.0 - u * u * v * v);
      CHECK(std::abs(ps.mean.at(0, i) - want) < 1e-12);
    }
  }
}

TEST_CASE("posterior mean follows the noiseless signal path") {
  const NoiseSchedule s = build_schedule(25, 1e-3, 0.08);
  const Tensor x0 = Tensor::row({0.5, -0.5, 0.0, 1.0});
  const Tensor quiet = Tensor::zeros(1, 4);
  for (int t = 2; t <= 25; ++t) {
    const Tensor x_t = q_sample(x0, t, quiet, s);
    const PosteriorStats ps = posterior_stats(x_t, x0, t, s);
    const double back = std::sqrt(s.alpha_bar[t - 1]);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(std::abs(ps.mean.at(0, i) - back * x0.at(0, i)) < 1e-12);
    }
  }
}

TEST_CASE("equal posterior endpoints contract by the coefficient sum") {
  const NoiseSchedule s = build_schedule(25, 1e-3, 0.08);
  Rng rng(14);
  const Tensor x = normal_row(rng, 4);
  for (int t = 2; t <= 25; ++t) {
    const double u = std::sqrt(s.alpha[t]);
    const double v = std::sqrt(s.alpha_bar[t - 1]);
    const double factor = (u + v) / (1.0 + u * v);
    CHECK(factor < 1.0);
    const PosteriorStats ps = posterior_stats(x, x, t, s);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(std::abs(ps.mean.at(0, i) - factor * x.at(0, i)) < 1e-12);
    }
  }
}

TEST_CASE("timestep features are bounded and distinguish steps") {
  const Tensor zero = timestep_embedding(0, 16);
  CHECK(zero.rows() == 1);
  CHECK(zero.cols() == 16);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(zero.at(0, i) == 0.0);
    CHECK(zero.at(0, 8 + i) == 1.0);
  }

  const Tensor a = timestep_embedding(1, 16);
  const Tensor b = timestep_embedding(2, 16);
  CHECK(max_abs_diff(a, b) > 1e-3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a.data()[i]) <= 1.0);
  }

  CHECK_THROWS_AS(timestep_embedding(3, 15), std::invalid_argument);
  CHECK_THROWS_AS(timestep_embedding(3, 0), std::invalid_argument);
  CHECK_THROWS_AS(timestep_embedding(-1, 16), std::invalid_argument);
}

TEST_CASE("denoiser builds the documented layer widths") {
  ParameterStore store;
  Rng rng(5);
  Denoiser dn;
  dn.init(store, rng, 6);
  CHECK(store.get("dn.w0").rows() == 22);
  CHECK(store.get("dn.w0").cols() == 24);
  CHECK(store.get("dn.w1").rows() == 24);
  CHECK(store.get("dn.w1").cols() == 6);

  ParameterStore wide_store;
  Denoiser wide;
  wide.init(wide_store, rng, 100);
  CHECK(wide_store.get("dn.w0").cols() == 256);

  CHECK_THROWS_AS(dn.init(store, rng, 0), std::invalid_argument);
}

TEST_CASE("zeroed denoiser outputs zero and validates input shape") {
  ParameterStore store;
  Rng rng(6);
  Denoiser dn;
  dn.init(store, rng, 5);
  zero_parameters(store, "dn.");
  const Tensor out = dn.evaluate(store, Tensor::row({1.0, -1.0, 0.5, 0.0, 2.0}), 7);
  CHECK(out.bitwise_equal(Tensor::zeros(1, 5)));
  CHECK_THROWS_AS(dn.evaluate(store, Tensor::zeros(1, 4), 1), std::invalid_argument);
}

TEST_CASE("denoiser gradients match finite differences") {
  ParameterStore store;
  Rng rng(33);
  Denoiser dn;
  dn.n_items = 6;
  dn.net = Mlp{"dn", {22, 8, 6}, false};
  dn.net.init(store, rng);

  const Tensor x_t = normal_row(rng, 6);
  const Tensor target = normal_row(rng, 6);
  const auto loss_value = [&]() {
    Tape t;
    ParamNodes p(t, store);
    const int diff = t.sub(dn.forward(t, p, t.leaf(x_t), 3), t.leaf(target));
    return t.value(t.mean(t.mul(diff, diff))).item();
  };

  Tape t;
  ParamNodes p(t, store);
  const int diff = t.sub(dn.forward(t, p, t.leaf(x_t), 3), t.leaf(target));
  const GradByName grads = p.collect(t.backward(t.mean(t.mul(diff, diff))));

  for (const std::string& name : store.names()) {
    const Tensor original = store.get(name);
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& candidate) {
          store.set(name, candidate);
          const double v = loss_value();
          store.set(name, original);
          return v;
        },
        original);
    CHECK(max_rel_err(grads.at(name), fd) < 1e-4);
  }
}

TEST_CASE("mask keeps non-positive entries and drops positives at the rate") {
  Rng rng(8);
  Tensor x(1, 1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    x.set(0, i, i < 500 ? 0.5 : (i < 750 ? -0.5 : 0.0));
  }

  Rng quiet(9);
  CHECK(mask_positives(x, 0.0, quiet).bitwise_equal(x));

  const Tensor masked = mask_positives(x, 0.5, rng);
  int dropped = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    if (i < 500) {
      CHECK((masked.at(0, i) == 0.5 || masked.at(0, i) == 0.0));
      if (masked.at(0, i) == 0.0) ++dropped;
    } else {
      CHECK(masked.at(0, i) == x.at(0, i));
    }
  }
  CHECK(dropped >= 200);
  CHECK(dropped <= 300);

  CHECK_THROWS_AS(mask_positives(x, 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(mask_positives(x, -0.1, rng), std::invalid_argument);
}

TEST_CASE("train step on a zeroed denoiser prices the raw squared levels") {
  ParameterStore store;
  Rng rng(12);
  Denoiser dn;
  dn.init(store, rng, 4);
  zero_parameters(store, "dn.");

  const NoiseSchedule s = build_schedule(50, 1e-4, 0.02);
  DiffusionConfig cfg;
  AdamState opt(AdamConfig{});
  const std::vector<Tensor> batch = {build_x0({0}, {1}, 4, 0.5, -0.5)};
  Rng noise(13);
  CHECK(diffusion_train_step(store, opt, dn, s, cfg, batch, noise) == 0.125);

  const std::vector<Tensor> empty;
  CHECK_THROWS_AS(diffusion_train_step(store, opt, dn, s, cfg, empty, noise),
                  std::invalid_argument);
}

TEST_CASE("repeated training steps reduce the reconstruction loss") {
  ParameterStore store;
  Rng rng(7);
  Denoiser dn;
  dn.init(store, rng, 8);

  const NoiseSchedule s = build_schedule(50, 1e-4, 0.02);
  DiffusionConfig cfg;
  std::vector<Tensor> batch;
  for (int q = 0; q < 4; ++q) {
    std::vector<int> pos = {2 * q, 2 * q + 1};
    std::vector<int> neg;
    for (int i = 0; i < 8; ++i) {
      if (i != pos[0] && i != pos[1]) neg.push_back(i);
    }
    batch.push_back(build_x0(pos, neg, 8, 0.5, -0.5));
  }

  AdamState opt(AdamConfig{.lr = 1e-2});
  Rng noise(15);
  const double first = diffusion_train_step(store, opt, dn, s, cfg, batch, noise);
  double last = first;
  for (int step = 1; step < 500; ++step) {
    last = diffusion_train_step(store, opt, dn, s, cfg, batch, noise);
  }
  CHECK(last < first);
  CHECK(last < 0.5 * first);
}

TEST_CASE("reverse generation boundaries, oracle collapse, and determinism") {
  const NoiseSchedule s = build_schedule(10, 1e-3, 0.1);
  const Tensor truth = build_x0({0, 3}, {1, 2}, 6, 0.5, -0.5);

  const DenoiseFn never = [](const Tensor&, int) -> Tensor {
    throw std::logic_error("denoiser must not run when start step is zero");
  };
  Rng rng(19);
  CHECK(reverse_generate(never, s, truth, 0, true, rng).bitwise_equal(truth));

  const DenoiseFn oracle = [&](const Tensor&, int) { return truth; };
  CHECK(reverse_generate(oracle, s, truth, 10, true, rng).bitwise_equal(truth));
  CHECK(reverse_generate(oracle, s, truth, 10, false, rng).bitwise_equal(truth));

  ParameterStore store;
  Rng init(23);
  Denoiser dn;
  dn.init(store, init, 6);
  const DenoiseFn net = [&](const Tensor& x, int t) { return dn.evaluate(store, x, t); };

  Rng a(5), b(5), c(6);
  const Tensor ga = reverse_generate(net, s, truth, 10, true, a);
  const Tensor gb = reverse_generate(net, s, truth, 10, true, b);
  const Tensor gc = reverse_generate(net, s, truth, 10, true, c);
  CHECK(ga.bitwise_equal(gb));
  CHECK(!ga.bitwise_equal(gc));

  Rng d(5), e(5);
  const Tensor gd = reverse_generate(net, s, truth, 10, false, d);
  const Tensor ge = reverse_generate(net, s, truth, 10, false, e);
  CHECK(gd.bitwise_equal(ge));
  CHECK(!gd.bitwise_equal(ga));

  CHECK_THROWS_AS(reverse_generate(net, s, truth, 11, true, a), std::invalid_argument);
  CHECK_THROWS_AS(reverse_generate(net, s, truth, -1, true, a), std::invalid_argument);
}

TEST_CASE("top-k augmentation merges ranked indices with the original set") {
  const Tensor scores = Tensor::row({0.9, 0.1, 0.5});
  CHECK(topk_augment(scores, 2, {}) == std::vector<int>{0, 2});
  CHECK(topk_augment(scores, 2, {1}) == std::vector<int>{0, 1, 2});
  CHECK(topk_augment(Tensor::full(1, 4, 0.25), 2, {}) == std::vector<int>{0, 1});

  Rng rng(31);
  for (int round = 0; round < 50; ++round) {
    const Tensor random = normal_row(rng, 12);
    std::vector<int> original;
    for (int i = 0; i < 12; ++i) {
      if (rng.next_bernoulli(0.25)) original.push_back(i);
    }
    const std::vector<int> merged = topk_augment(random, 3, original);
    CHECK(merged.size() <= original.size() + 3);
    CHECK(std::is_sorted(merged.begin(), merged.end()));
    CHECK(std::adjacent_find(merged.begin(), merged.end()) == merged.end());
    for (int i : original) {
      CHECK(std::binary_search(merged.begin(), merged.end(), i));
    }
    for (int i : merged) {
      CHECK(i >= 0);
      CHECK(i < 12);
    }
  }

  CHECK_THROWS_AS(topk_augment(scores, 0, {}), std::invalid_argument);
  CHECK_THROWS_AS(topk_augment(scores, 4, {}), std::invalid_argument);
  CHECK_THROWS_AS(topk_augment(scores, 1, {3}), std::out_of_range);
}

TEST_CASE("enhanced positive sets round-trip through tsv") {
  TempDir dir;
  const std::vector<EnhancedPositive> rows = {
      {2, 7, false}, {2, 9, true}, {5, 1, false}};
  const std::string path = (dir.path / "enhanced.tsv").string();
  save_enhanced_positives(path, rows);

  const std::vector<EnhancedPositive> back = load_enhanced_positives(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].query == rows[i].query);
    CHECK(back[i].item == rows[i].item);
    CHECK(back[i].generated == rows[i].generated);
  }

  CHECK(load_enhanced_positives(dir.file("empty.tsv", "query_id\titem_id\tsource\n"))
            .empty());

  const std::string bad_source =
      dir.file("bad_source.tsv", "query_id\titem_id\tsource\n1\t2\tguessed\n");
  CHECK(thrown_message([&] { load_enhanced_positives(bad_source); }).find(":2:") !=
        std::string::npos);

  const std::string bad_cols =
      dir.file("bad_cols.tsv", "query_id\titem_id\tsource\n1\t2\n");
  CHECK(thrown_message([&] { load_enhanced_positives(bad_cols); }).find(":2:") !=
        std::string::npos);

  const std::string bad_header = dir.file("bad_header.tsv", "query\titem\tsrc\n");
  CHECK(thrown_message([&] { load_enhanced_positives(bad_header); }).find("header") !=
        std::string::npos);

  CHECK_THROWS_AS(load_enhanced_positives((dir.path / "missing.tsv").string()),
                  std::runtime_error);
}

TEST_CASE("diffusion config rejects out-of-range fields") {
  DiffusionConfig ok;
  CHECK_NOTHROW(ok.validate());

  const auto broken = [](auto mutate) {
    DiffusionConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.steps = 0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.beta_min = 0.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.beta_max = 1.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.beta_min = 0.5; c.beta_max = 0.1; })
                      .validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.r_pos = 1.5; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.r_neg = 0.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.r_neg = -1.5; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.mask_rate = 1.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.top_k = 0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.train_steps = 0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](DiffusionConfig& c) { c.batch_size = 0; }).validate(),
                  std::invalid_argument);
}

TEST_CASE("trained denoiser recovers cluster positives from blanked queries") {
  const int n_items = 16;
  const int n_queries = 8;
  DiffusionConfig cfg;
  const NoiseSchedule s = build_schedule(cfg.steps, cfg.beta_min, cfg.beta_max);

  std::vector<std::vector<int>> clusters;
  std::vector<Tensor> batch;
  for (int q = 0; q < n_queries; ++q) {
    clusters.push_back({2 * q, 2 * q + 1});
    std::vector<int> neg;
    for (int i = 0; i < n_items; ++i) {
      if (i != 2 * q && i != 2 * q + 1) neg.push_back(i);
    }
    batch.push_back(build_x0(clusters.back(), neg, n_items, cfg.r_pos, cfg.r_neg));
  }

  ParameterStore store;
  Rng init(11);
  Denoiser dn;
  dn.init(store, init, n_items);
  AdamState opt(AdamConfig{.lr = 1e-2});
  Rng noise(13);
  const double first = diffusion_train_step(store, opt, dn, s, cfg, batch, noise);
  double last = first;
  for (int step = 1; step < 2000; ++step) {
    last = diffusion_train_step(store, opt, dn, s, cfg, batch, noise);
  }
  CHECK(last < first);

  const DenoiseFn net = [&](const Tensor& x, int t) { return dn.evaluate(store, x, t); };
  Rng gen(17);
  int hits = 0;
  for (int q = 0; q < n_queries; ++q) {
    Tensor probe = batch[q];
    for (int i : clusters[q]) probe.set(0, static_cast<std::size_t>(i), 0.0);
    const Tensor generated = reverse_generate(net, s, probe, cfg.steps / 2, true, gen);
    const std::vector<int> top = topk_augment(generated, cfg.top_k, {});
    for (int i : clusters[q]) {
      if (std::binary_search(top.begin(), top.end(), i)) ++hits;
    }
  }
  CHECK(hits >= 10);
}

TEST_SUITE_END();
