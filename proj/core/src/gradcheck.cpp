#include "qrec/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "qrec/data.hpp"
#include "qrec/diffusion.hpp"
#include "qrec/train.hpp"

namespace qrec {

namespace {

using Builder = std::function<int(Tape&, const std::vector<int>&)>;

void check_primitive(const Builder& build, const std::vector<Tensor>& inputs,
                     double& worst, int& checks) {
  Tape t;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Tensor& in : inputs) ids.push_back(t.leaf(in));
  const GradientMap gm = t.backward(build(t, ids));

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& x) {
          Tape t2;
          std::vector<int> ids2;
          ids2.reserve(inputs.size());
          for (std::size_t j = 0; j < inputs.size(); ++j) {
            ids2.push_back(t2.leaf(j == i ? x : inputs[j]));
          }
          return t2.value(build(t2, ids2)).item();
        },
        inputs[i]);
    const Tensor got =
        gm.get_or_zero(ids[i], inputs[i].rows(), inputs[i].cols());
    worst = std::max(worst, max_rel_err(got, fd));
    ++checks;
  }
}

GradCheckResult check_primitives() {
  Rng rng(17);
  const auto normal = [&rng](std::size_t r, std::size_t c) {
    return rng.normal_tensor(r, c, 0.5);
  };

  GradCheckResult out{"primitives", 0.0, 0};
  double& worst = out.max_rel_err;
  int& n = out.checks;

  check_primitive([](Tape& t, const auto& v) { return t.mean(t.matmul(v[0], v[1])); },
                  {normal(2, 3), normal(3, 2)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.transpose(v[0])); },
                  {normal(2, 3)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.add(v[0], v[1])); },
                  {normal(2, 3), normal(2, 3)}, worst, n);
  check_primitive(
      [](Tape& t, const auto& v) { return t.mean(t.mul(t.add_row(v[0], v[1]), v[2])); },
      {normal(3, 4), normal(1, 4), normal(3, 4)}, worst, n);
  check_primitive(
      [](Tape& t, const auto& v) { return t.mean(t.mul(t.sub(v[0], v[1]), v[0])); },
      {normal(2, 3), normal(2, 3)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.mul(v[0], v[1])); },
                  {normal(2, 3), normal(2, 3)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.scale(v[0], 1.7)); },
                  {normal(2, 3)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.add_const(v[0], 0.3)); },
                  {normal(2, 3)}, worst, n);

  Tensor clamped(2, 3);
  const double clamp_vals[6] = {-0.3, 0.1, 0.6, 0.2, -0.1, 0.7};
  for (std::size_t i = 0; i < 6; ++i) clamped.set(i / 3, i % 3, clamp_vals[i]);
  check_primitive(
      [](Tape& t, const auto& v) { return t.mean(t.mul(t.clamp(v[0], -0.5, 0.8), v[1])); },
      {clamped, normal(2, 3)}, worst, n);

  check_primitive(
      [](Tape& t, const auto& v) {
        const std::array<int, 2> xs{v[0], v[1]};
        return t.mean(t.concat_cols(xs));
      },
      {normal(2, 2), normal(2, 3)}, worst, n);
  check_primitive(
      [](Tape& t, const auto& v) {
        const std::array<int, 2> xs{v[0], v[1]};
        return t.mean(t.mul(t.concat_rows(xs), v[2]));
      },
      {normal(1, 3), normal(2, 3), normal(3, 3)}, worst, n);
  check_primitive(
      [](Tape& t, const auto& v) { return t.mean(t.slice_rows(v[0], 1, 3)); },
      {normal(4, 3)}, worst, n);
  check_primitive(
      [](Tape& t, const auto& v) { return t.mean(t.slice_cols(v[0], 0, 2)); },
      {normal(3, 4)}, worst, n);
  check_primitive(
      [](Tape& t, const auto& v) { return t.mean(t.mul(t.repeat_rows(v[0], 3), v[1])); },
      {normal(1, 4), normal(3, 4)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.sum(v[0]); }, {normal(2, 3)},
                  worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(v[0]); }, {normal(2, 3)},
                  worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.sigmoid(v[0])); },
                  {normal(2, 3)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.tanh(v[0])); },
                  {normal(2, 3)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.exp(v[0])); },
                  {normal(2, 3)}, worst, n);

  Tensor logged(2, 3);
  const double log_vals[6] = {0.5, 1.2, 2.0, 0.8, 1.5, 0.6};
  for (std::size_t i = 0; i < 6; ++i) logged.set(i / 3, i % 3, log_vals[i]);
  check_primitive([](Tape& t, const auto& v) { return t.mean(t.log(v[0])); }, {logged},
                  worst, n);

  check_primitive(
      [](Tape& t, const auto& v) { return t.mean(t.mul(t.softmax_rows(v[0]), v[1])); },
      {normal(2, 4), normal(2, 4)}, worst, n);
  check_primitive(
      [](Tape& t, const auto& v) { return t.mean(t.mul(t.causal_softmax(v[0]), v[1])); },
      {normal(3, 3), normal(3, 3)}, worst, n);

  const std::array<std::int64_t, 3> ids{2, 0, 2};
  check_primitive(
      [&ids](Tape& t, const auto& v) { return t.mean(t.gather_rows(v[0], ids)); },
      {normal(4, 3)}, worst, n);
  check_primitive(
      [](Tape& t, const auto& v) {
        return t.mean(t.mul(t.layer_norm(v[0], v[1], v[2], 1e-5), v[3]));
      },
      {normal(2, 4), normal(1, 4), normal(1, 4), normal(2, 4)}, worst, n);
  check_primitive([](Tape& t, const auto& v) { return t.dot(v[0], v[1]); },
                  {normal(1, 4), normal(1, 4)}, worst, n);
  return out;
}

/// Five users over six items and two queries; user 4 has no searches, so
/// the empty-history sentinel and the skip paths stay covered.
Dataset check_world() {
  Dataset ds;
  ds.n_users = 5;
  ds.n_items = 6;
  ds.n_queries = 2;
  ds.user_features.field_names = {"bucket"};
  ds.user_features.cardinality = {2};
  ds.item_features.field_names = {"category"};
  ds.item_features.cardinality = {2};
  for (int i = 0; i < ds.n_items; ++i) ds.item_features.rows.push_back({i % 2});
  for (int u = 0; u < 4; ++u) {
    ds.user_features.rows.push_back({u % 2});
    ds.search.push_back({u % 2, u, (2 * u) % 6, 0, 1});
    ds.search.push_back({(u + 1) % 2, u, (2 * u + 1) % 6, 0, 0});
    for (int t = 0; t < 6; ++t) {
      ds.rec.push_back({u, (u + t) % 6, t + 1, (u + t) % 2});
    }
  }
  ds.user_features.rows.push_back({1});
  ds.rec.push_back({4, 2, 1, 1});
  ds.rec.push_back({4, 3, 2, 0});
  return ds;
}

RunConfig check_config() {
  RunConfig cfg;
  cfg.dim = 4;
  cfg.l_max = 8;
  cfg.window = 4;
  cfg.n_ctr_neg = 3;
  cfg.diffusion.steps = 6;
  return cfg;
}

enum class Term { kL1, kL2, kL3, kJoint };

GradCheckResult check_model_loss(const char* module, Term term) {
  const Dataset ds = check_world();
  const RunConfig cfg = check_config();
  const BehaviorIndex index(ds, cfg.l_max, cfg.window);
  const QueryItemSets sets = build_query_item_sets(ds);
  const std::vector<int> batch = {0, 1, 8, 24};

  ParameterStore store;
  Rng rng(7);
  CtrModel model;
  model.cfg = cfg;
  model.init(store, rng, ds);

  const auto pick = [term](const BatchTerms& terms) {
    switch (term) {
      case Term::kL1: return terms.l1;
      case Term::kL2: return terms.l2;
      case Term::kL3: return terms.l3;
      default: return terms.total;
    }
  };
  const auto loss_value = [&] {
    Tape t;
    ParamNodes p(t, store);
    Rng draw(99);
    return t.value(pick(batch_loss(t, p, model, ds, index, batch, sets.positives, draw)))
        .item();
  };

  Tape t;
  ParamNodes p(t, store);
  Rng draw(99);
  const int node = pick(batch_loss(t, p, model, ds, index, batch, sets.positives, draw));
  if (node < 0) throw std::logic_error("gradcheck: loss term missing");
  const GradByName grads = p.collect(t.backward(node));

  GradCheckResult out{module, 0.0, 0};
  for (const auto& name : store.names()) {
    if (!store.trainable(name)) continue;
    const Tensor original = store.get(name);
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& x) {
          store.set(name, x);
          return loss_value();
        },
        original);
    store.set(name, original);
    const Tensor got = grads.count(name)
                           ? grads.at(name)
                           : Tensor::zeros(original.rows(), original.cols());
    out.max_rel_err = std::max(out.max_rel_err, max_rel_err(got, fd));
    ++out.checks;
  }
  return out;
}

GradCheckResult check_diffusion_loss() {
  const Dataset ds = check_world();
  const QueryItemSets sets = build_query_item_sets(ds);
  DiffusionConfig dc;
  dc.steps = 6;
  const NoiseSchedule sched = build_schedule(dc.steps, dc.beta_min, dc.beta_max);
  std::vector<Tensor> x0;
  for (int q = 0; q < ds.n_queries; ++q) {
    x0.push_back(build_x0(sets.positives[q], sets.negatives[q], ds.n_items, dc.r_pos,
                          dc.r_neg));
  }

  ParameterStore store;
  Rng rng(13);
  Denoiser dn;
  dn.init(store, rng, ds.n_items);

  // Mirrors the training objective: per sample mask, corrupt to a drawn
  // step, regress the denoiser output onto the unmasked original.
  const auto build = [&](Tape& t, ParamNodes& p) {
    Rng draw(55);
    std::vector<int> per;
    for (const Tensor& x : x0) {
      const int step = 1 + static_cast<int>(draw.next_index(
                               static_cast<std::uint64_t>(sched.last_step())));
      const Tensor masked = mask_positives(x, dc.mask_rate, draw);
      const Tensor eps = draw.normal_tensor(1, x.cols(), 1.0);
      const Tensor x_t = q_sample(masked, step, eps, sched);
      const int diff = t.sub(dn.forward(t, p, t.leaf(x_t), step), t.leaf(x));
      per.push_back(t.mean(t.mul(diff, diff)));
    }
    return t.mean(t.concat_cols(per));
  };

  Tape t;
  ParamNodes p(t, store);
  const GradByName grads = p.collect(t.backward(build(t, p)));

  GradCheckResult out{"diffusion", 0.0, 0};
  for (const auto& name : store.names()) {
    if (!store.trainable(name)) continue;
    const Tensor original = store.get(name);
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& x) {
          store.set(name, x);
          Tape t2;
          ParamNodes p2(t2, store);
          return t2.value(build(t2, p2)).item();
        },
        original);
    store.set(name, original);
    const Tensor got = grads.count(name)
                           ? grads.at(name)
                           : Tensor::zeros(original.rows(), original.cols());
    out.max_rel_err = std::max(out.max_rel_err, max_rel_err(got, fd));
    ++out.checks;
  }
  return out;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(const std::string& filter) {
  static const std::vector<std::string> known = {"primitives", "l1",        "l2",
                                                 "l3",         "diffusion", "joint"};
  if (!filter.empty() &&
      std::find(known.begin(), known.end(), filter) == known.end()) {
    throw std::invalid_argument("gradcheck: unknown module '" + filter + "'");
  }
  const auto wanted = [&filter](const char* name) {
    return filter.empty() || filter == name;
  };

  std::vector<GradCheckResult> out;
  if (wanted("primitives")) out.push_back(check_primitives());
  if (wanted("l1")) out.push_back(check_model_loss("l1", Term::kL1));
  if (wanted("l2")) out.push_back(check_model_loss("l2", Term::kL2));
  if (wanted("l3")) out.push_back(check_model_loss("l3", Term::kL3));
  if (wanted("diffusion")) out.push_back(check_diffusion_loss());
  if (wanted("joint")) out.push_back(check_model_loss("joint", Term::kJoint));
  return out;
}

}  // namespace qrec
