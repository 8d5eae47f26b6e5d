#include "qrec/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "qrec/checkpoint.hpp"
#include "qrec/diffusion.hpp"

namespace qrec {

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

int joint_loss(Tape& t, int l1, int l2, int l3, double lambda2, double lambda3) {
  if (l1 < 0) throw std::invalid_argument("joint_loss: l1 is required");
  if (lambda2 < 0.0 || lambda3 < 0.0) {
    throw std::invalid_argument("joint_loss: weights must be >= 0");
  }
  int total = l1;
  if (l2 >= 0 && lambda2 != 0.0) total = t.add(total, t.scale(l2, lambda2));
  if (l3 >= 0 && lambda3 != 0.0) total = t.add(total, t.scale(l3, lambda3));
  return total;
}

Dataset dataset_from_config(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return generate_synthetic(cfg.synth);
  return load_dataset(cfg.data_dir + "/rec_log.tsv", cfg.data_dir + "/search_log.tsv",
                      cfg.data_dir + "/user_features.tsv",
                      cfg.data_dir + "/item_features.tsv");
}

namespace {

std::vector<Tensor> clean_query_vectors(const Dataset& ds, const QueryItemSets& sets,
                                        const DiffusionConfig& dc) {
  std::vector<Tensor> x0;
  x0.reserve(static_cast<std::size_t>(ds.n_queries));
  for (int q = 0; q < ds.n_queries; ++q) {
    x0.push_back(build_x0(sets.positives[static_cast<std::size_t>(q)],
                          sets.negatives[static_cast<std::size_t>(q)], ds.n_items,
                          dc.r_pos, dc.r_neg));
  }
  return x0;
}

}  // namespace

void pretrain_denoiser(ParameterStore& store, const Denoiser& dn, const RunConfig& cfg,
                       const Dataset& ds, Rng& rng) {
  if (ds.n_queries == 0) return;
  const QueryItemSets sets = build_query_item_sets(ds);
  const NoiseSchedule sched = build_schedule(cfg.diffusion.steps, cfg.diffusion.beta_min,
                                             cfg.diffusion.beta_max);
  const std::vector<Tensor> x0 = clean_query_vectors(ds, sets, cfg.diffusion);

  AdamState opt({cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
  std::vector<Tensor> batch;
  for (int s = 0; s < cfg.diffusion.train_steps; ++s) {
    batch.clear();
    for (int b = 0; b < cfg.diffusion.batch_size; ++b) {
      batch.push_back(x0[rng.next_index(static_cast<std::uint64_t>(ds.n_queries))]);
    }
    try {
      diffusion_train_step(store, opt, dn, sched, cfg.diffusion, batch, rng);
    } catch (const std::exception& e) {
      throw std::runtime_error("pretrain_denoiser: step " + std::to_string(s + 1) +
                               ": " + e.what());
    }
    quantize_parameters_f32(store);
  }
}

AugmentResult augment_positives(const ParameterStore& store, const Denoiser& dn,
                                const RunConfig& cfg, const Dataset& ds, Rng& rng) {
  const QueryItemSets sets = build_query_item_sets(ds);
  const NoiseSchedule sched = build_schedule(cfg.diffusion.steps, cfg.diffusion.beta_min,
                                             cfg.diffusion.beta_max);
  const std::vector<Tensor> x0 = clean_query_vectors(ds, sets, cfg.diffusion);
  const DenoiseFn denoise = [&](const Tensor& x_t, int step) {
    return dn.evaluate(store, x_t, step);
  };
  const int from = std::min(cfg.diffusion.steps / 2, sched.last_step());

  AugmentResult out;
  out.positives.resize(static_cast<std::size_t>(ds.n_queries));
  for (int q = 0; q < ds.n_queries; ++q) {
    const std::size_t qi = static_cast<std::size_t>(q);
    const Tensor gen = reverse_generate(denoise, sched, x0[qi], from, true, rng);
    out.positives[qi] = topk_augment(gen, cfg.diffusion.top_k, sets.positives[qi]);
    for (int item : sets.positives[qi]) out.rows.push_back({q, item, false});
    for (int item : out.positives[qi]) {
      if (!std::binary_search(sets.positives[qi].begin(), sets.positives[qi].end(),
                              item)) {
        out.rows.push_back({q, item, true});
      }
    }
  }
  return out;
}

void CtrModel::init(ParameterStore& store, Rng& rng, const Dataset& ds) {
  DinConfig dc;
  dc.dim = cfg.dim;
  din.init(store, rng, ds, dc);
  if (cfg.use_nip) {
    SasConfig sc;
    sc.dim = cfg.dim;
    sc.l_max = cfg.l_max;
    sas.init(store, rng, sc);
  }
  if (cfg.use_contrastive) sim.init(store, rng, cfg.dim);
}

int CtrModel::predict(Tape& t, ParamNodes& p, const Dataset& ds, int user, int item,
                      const BehaviorIndex::Context& ctx) const {
  return din.predict(t, p, ds, user, item, ctx.hist_items, ctx.hist_queries,
                     cfg.use_query_feature);
}

BatchTerms batch_loss(Tape& t, ParamNodes& p, const CtrModel& model,
                      const Dataset& ds, const BehaviorIndex& index,
                      std::span<const int> batch,
                      const std::vector<std::vector<int>>& query_positives,
                      Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const RunConfig& cfg = model.cfg;
  const bool want_nip = cfg.use_nip && cfg.lambda2 > 0.0;
  const bool want_ctr = cfg.use_contrastive && cfg.lambda3 > 0.0;

  BatchTerms out;
  std::vector<int> preds;
  std::vector<double> labels;
  std::vector<int> l2_terms, l3_terms;
  preds.reserve(batch.size());
  labels.reserve(batch.size());

  for (int r : batch) {
    const RecInteraction& rec = ds.rec.at(static_cast<std::size_t>(r));
    const BehaviorIndex::Context ctx = index.context(r);
    preds.push_back(model.predict(t, p, ds, rec.user, rec.item, ctx));
    labels.push_back(static_cast<double>(rec.click));

    if (want_nip) {
      if (ctx.future_pos.empty() && ctx.future_neg.empty()) {
        ++out.nip_skipped;
      } else {
        const int seq = ctx.hist_queries.empty()
                            ? -1
                            : model.din.emb.queries(t, p, ctx.hist_queries);
        const int enc = model.sas.encode(t, p, seq);
        int pos = -1, neg = -1;
        if (!ctx.future_pos.empty()) {
          std::vector<int> ids(static_cast<std::size_t>(cfg.n_pos));
          for (int& id : ids) {
            id = ctx.future_pos[rng.next_index(ctx.future_pos.size())];
          }
          pos = model.din.emb.items(t, p, ids);
        }
        if (!ctx.future_neg.empty()) {
          std::vector<int> ids(static_cast<std::size_t>(cfg.n_neg));
          for (int& id : ids) {
            id = ctx.future_neg[rng.next_index(ctx.future_neg.size())];
          }
          neg = model.din.emb.items(t, p, ids);
        }
        l2_terms.push_back(nip_loss(t, enc, pos, neg));
      }
    }

    if (want_ctr) {
      const int q = ctx.last_query;
      if (q < 0 || query_positives.at(static_cast<std::size_t>(q)).empty()) {
        ++out.ctr_skipped;
      } else {
        const std::vector<int>& known = query_positives[static_cast<std::size_t>(q)];
        std::vector<int> pos_ids;
        if (known.size() <= static_cast<std::size_t>(cfg.n_ctr_pos)) {
          pos_ids = known;
        } else {
          pos_ids = known;
          rng.shuffle(pos_ids);
          pos_ids.resize(static_cast<std::size_t>(cfg.n_ctr_pos));
        }
        const std::vector<int> neg_ids =
            sample_excluding(rng, ds.n_items, known, cfg.n_ctr_neg);
        const int e_q = model.din.emb.query(t, p, q);
        const int pos_node = model.din.emb.items(t, p, pos_ids);
        const int neg_node = model.din.emb.items(t, p, neg_ids);
        l3_terms.push_back(
            contrastive_loss(t, p, model.sim, e_q, pos_node, neg_node, cfg.beta_ctr));
      }
    }
  }

  out.l1 = bce_loss(t, t.concat_rows(preds), labels);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  if (!l2_terms.empty()) out.l2 = t.scale(t.sum(t.concat_rows(l2_terms)), inv_b);
  if (!l3_terms.empty()) out.l3 = t.scale(t.sum(t.concat_rows(l3_terms)), inv_b);
  out.total = joint_loss(t, out.l1, out.l2, out.l3, cfg.lambda2, cfg.lambda3);
  return out;
}

std::string metrics_to_json(const MetricsRecord& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "{\"step\":%lld,\"l1\":%.17g,\"l2\":%.17g,\"l3\":%.17g,"
                "\"l\":%.17g,\"val_auc\":%.17g,\"seconds\":%.6f}",
                static_cast<long long>(r.step), r.l1, r.l2, r.l3, r.l, r.val_auc,
                r.seconds);
  return buf;
}

void save_metrics(const std::string& path, const std::vector<MetricsRecord>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const MetricsRecord& r : rows) out << metrics_to_json(r) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path);
}

EvalReport evaluate_split(const ParameterStore& store, const CtrModel& model,
                          const Dataset& ds, const BehaviorIndex& index,
                          std::span<const int> sample_indices) {
  if (sample_indices.empty()) {
    throw std::invalid_argument("evaluate_split: empty split");
  }
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(sample_indices.size());
  labels.reserve(sample_indices.size());
  for (int r : sample_indices) {
    const RecInteraction& rec = ds.rec.at(static_cast<std::size_t>(r));
    Tape t;
    ParamNodes p(t, store);
    const int pred = model.predict(t, p, ds, rec.user, rec.item, index.context(r));
    scores.push_back(t.value(pred).item());
    labels.push_back(rec.click);
  }
  return {auc(scores, labels), static_cast<int>(sample_indices.size())};
}

TrainResult train(const RunConfig& cfg, const Dataset& ds, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const auto start = std::chrono::steady_clock::now();

  Rng master(cfg.seed);
  Rng init_rng = master.split();
  Rng diff_rng = master.split();
  Rng batch_rng = master.split();

  ParameterStore store;
  CtrModel model;
  model.cfg = cfg;
  model.init(store, init_rng, ds);

  const QueryItemSets sets = build_query_item_sets(ds);
  std::vector<std::vector<int>> positives = sets.positives;

  if (cfg.use_diffusion) {
    Denoiser dn;
    dn.init(store, init_rng, ds.n_items);
    pretrain_denoiser(store, dn, cfg, ds, diff_rng);
    if (ds.n_queries > 0) {
      AugmentResult aug = augment_positives(store, dn, cfg, ds, diff_rng);
      positives = std::move(aug.positives);
      save_enhanced_positives(out_dir + "/enhanced.tsv", aug.rows);
    }
  }

  const BehaviorIndex index(ds, cfg.l_max, cfg.window);
  const SplitAssignment split = leave_one_out_split(ds);
  if (split.train.empty()) throw std::runtime_error("train: empty training split");

  AdamState opt({cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
  TrainResult result;
  result.config_text = serialize_run_config(cfg);
  const std::string ckpt_path = out_dir + "/model.ckpt";
  double best = -1.0;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> perm = batch_rng.permutation(split.train.size());
    double sum_l1 = 0, sum_l2 = 0, sum_l3 = 0, sum_l = 0;
    std::size_t seen = 0;
    for (std::size_t off = 0; off < perm.size();
         off += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(perm.size(), off + static_cast<std::size_t>(cfg.batch_size));
      std::vector<int> batch;
      batch.reserve(end - off);
      for (std::size_t i = off; i < end; ++i) batch.push_back(split.train[perm[i]]);

      Tape t;
      ParamNodes p(t, store);
      BatchTerms terms;
      try {
        terms = batch_loss(t, p, model, ds, index, batch, positives, batch_rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("train: step " + std::to_string(opt.steps() + 1) +
                                 ": " + e.what());
      }
      const double lv = t.value(terms.total).item();
      const double b = static_cast<double>(batch.size());
      sum_l1 += t.value(terms.l1).item() * b;
      if (terms.l2 >= 0) sum_l2 += t.value(terms.l2).item() * b;
      if (terms.l3 >= 0) sum_l3 += t.value(terms.l3).item() * b;
      sum_l += lv * b;
      seen += batch.size();
      result.nip_skipped += terms.nip_skipped;
      result.ctr_skipped += terms.ctr_skipped;

      const GradientMap gm = t.backward(terms.total);
      opt.step(store, p.collect(gm));
      quantize_parameters_f32(store);
    }

    const EvalReport val = evaluate_split(store, model, ds, index, split.val);
    MetricsRecord rec;
    rec.step = opt.steps();
    rec.l1 = sum_l1 / static_cast<double>(seen);
    rec.l2 = sum_l2 / static_cast<double>(seen);
    rec.l3 = sum_l3 / static_cast<double>(seen);
    rec.l = sum_l / static_cast<double>(seen);
    rec.val_auc = val.auc;
    rec.seconds = seconds_since(start);
    result.metrics.push_back(rec);

    if (val.auc > best) {
      best = val.auc;
      result.best_step = opt.steps();
      since_best = 0;
      save_checkpoint(ckpt_path, store, result.config_text, opt.steps());
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  save_metrics(out_dir + "/metrics.jsonl", result.metrics);
  restore_parameters(store, load_checkpoint(ckpt_path));
  result.params = store;
  result.model = model;
  result.best_val_auc = best;
  return result;
}

EvalReport evaluate_checkpoint(const std::string& ckpt_path, const std::string& split) {
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const RunConfig cfg = parse_run_config(ckpt.config_text, ckpt_path + ":config");
  const Dataset ds = dataset_from_config(cfg);

  Rng master(cfg.seed);
  Rng init_rng = master.split();
  ParameterStore store;
  CtrModel model;
  model.cfg = cfg;
  model.init(store, init_rng, ds);
  if (cfg.use_diffusion) {
    Denoiser dn;
    dn.init(store, init_rng, ds.n_items);
  }
  restore_parameters(store, ckpt);

  const BehaviorIndex index(ds, cfg.l_max, cfg.window);
  const SplitAssignment assignment = leave_one_out_split(ds);
  const std::vector<int>* list = nullptr;
  if (split == "train") {
    list = &assignment.train;
  } else if (split == "val") {
    list = &assignment.val;
  } else if (split == "test") {
    list = &assignment.test;
  } else {
    throw std::invalid_argument("evaluate: unknown split '" + split + "'");
  }
  return evaluate_split(store, model, ds, index, *list);
}

}  // namespace qrec
