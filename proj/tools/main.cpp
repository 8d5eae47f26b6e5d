#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qrec/analysis.hpp"
#include "qrec/checkpoint.hpp"
#include "qrec/gradcheck.hpp"
#include "qrec/train.hpp"

using nlohmann::json;
using namespace qrec;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

/// One score per line; blank lines and # comments are skipped.
std::vector<double> load_score_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<double> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto from = line.find_first_not_of(" \t");
    if (from == std::string::npos || line[from] == '#') continue;
    const auto to = line.find_last_not_of(" \t");
    const std::string token = line.substr(from, to - from + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected a number, got '" + token + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw std::runtime_error(path + ": no scores");
  return out;
}

/// Interaction logs plus the item table are enough for the cross-domain
/// statistics; without a user table one constant field is synthesized so the
/// dataset invariants still hold.
Dataset analysis_dataset(const std::string& rec_path, const std::string& search_path,
                         const std::string& items_path, const std::string& users_path) {
  if (!users_path.empty()) {
    return load_dataset(rec_path, search_path, users_path, items_path);
  }
  Dataset ds;
  ds.rec = load_rec_log(rec_path);
  ds.search = load_search_log(search_path);
  ds.item_features = load_features(items_path, "item");
  ds.n_items = static_cast<int>(ds.item_features.rows.size());

  int max_user = -1;
  int max_query = -1;
  for (const auto& r : ds.rec) {
    max_user = std::max(max_user, r.user);
    if (r.item >= ds.n_items) {
      throw std::runtime_error("rec log references unknown item_id " +
                               std::to_string(r.item));
    }
  }
  for (const auto& s : ds.search) {
    max_user = std::max(max_user, s.user);
    max_query = std::max(max_query, s.query);
    if (s.item >= ds.n_items) {
      throw std::runtime_error("search log references unknown item_id " +
                               std::to_string(s.item));
    }
  }
  ds.n_users = max_user + 1;
  ds.n_queries = max_query + 1;
  ds.user_features.field_names = {"segment"};
  ds.user_features.cardinality = {1};
  ds.user_features.rows.assign(static_cast<std::size_t>(ds.n_users), {0});
  return ds;
}

json bootstrap_to_json(const BootstrapReport& r) {
  return json{{"resamples", r.resamples},
              {"mean_a", r.mean_a},
              {"mean_b", r.mean_b},
              {"diff", r.diff},
              {"ci_a", {r.ci_a_lo, r.ci_a_hi}},
              {"ci_b", {r.ci_b_lo, r.ci_b_hi}},
              {"ci_diff", {r.ci_diff_lo, r.ci_diff_hi}},
              {"p_value", r.p_value}};
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"search-enhanced CTR pipeline: synthetic data, cross-domain "
               "analysis, diffusion augmentation, training, evaluation"};
  app.require_subcommand(1);
  int exit_code = 0;

  std::string config_path;
  std::string out_path;
  std::string ckpt_path;
  std::vector<std::string> overrides;

  auto* synth = app.add_subcommand(
      "synth-gen", "generate a synthetic two-domain dataset and write its TSV files");
  synth->add_option("--config", config_path, "run config file (defaults when omitted)");
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--set", overrides, "override a config key, e.g. synth_users=200");
  synth->callback([&] {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& a : overrides) apply_config_override(cfg, a);
    const Dataset ds = generate_synthetic(cfg.synth);
    save_dataset(ds, out_path);
    emit(json{{"users", ds.n_users},
              {"items", ds.n_items},
              {"queries", ds.n_queries},
              {"categories", ds.n_categories()},
              {"rec_events", ds.rec.size()},
              {"search_events", ds.search.size()},
              {"out", out_path}});
  });

  std::string rec_path, search_path, items_path, users_path;
  std::string auc_a_path, auc_b_path;
  int samples = 10000;
  int resamples = 1000;
  int bins = 20;
  std::uint64_t seed = 1;

  auto* analyze = app.add_subcommand(
      "analyze", "cross-domain interest divergence and search-to-rec correlation");
  analyze->add_option("--rec", rec_path, "rec log TSV")->required();
  analyze->add_option("--search", search_path, "search log TSV")->required();
  analyze->add_option("--items", items_path, "item feature TSV (category column)")
      ->required();
  analyze->add_option("--users", users_path, "user feature TSV (optional)");
  analyze->add_option("--out", out_path, "output directory")->required();
  analyze->add_option("--auc-a", auc_a_path, "score list A for the bootstrap contrast");
  analyze->add_option("--auc-b", auc_b_path, "score list B for the bootstrap contrast");
  analyze->add_option("--samples", samples, "correlation sample cap")
      ->capture_default_str();
  analyze->add_option("--resamples", resamples, "bootstrap resamples")
      ->capture_default_str();
  analyze->add_option("--bins", bins, "histogram bins over [0,1]")
      ->capture_default_str();
  analyze->add_option("--seed", seed, "sampling seed")->capture_default_str();
  analyze->callback([&] {
    if (auc_a_path.empty() != auc_b_path.empty()) {
      throw std::runtime_error("analyze: --auc-a and --auc-b go together");
    }
    const Dataset ds = analysis_dataset(rec_path, search_path, items_path, users_path);
    std::filesystem::create_directories(out_path);

    const std::vector<double> js = per_user_interest_divergence(ds);
    const std::vector<int> hist = unit_histogram(js, bins);
    std::string csv = "bin_low,bin_high,count\n";
    char buf[96];
    for (int b = 0; b < bins; ++b) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%d\n", b / double(bins),
                    (b + 1) / double(bins), hist[static_cast<std::size_t>(b)]);
      csv += buf;
    }
    write_text(out_path + "/js_histogram.csv", csv);

    Rng rng(seed);
    const CorrelationReport corr = correlation_scores(ds, samples, rng);
    const double js_mean =
        js.empty() ? 0.0
                   : std::accumulate(js.begin(), js.end(), 0.0) / double(js.size());
    json report{{"js", {{"users", js.size()}, {"mean", js_mean}}},
                {"correlation",
                 {{"r1", corr.r1},
                  {"r2", corr.r2},
                  {"samples", corr.indicator.size()}}}};
    write_text(out_path + "/analysis.json", report.dump(2) + "\n");

    if (!auc_a_path.empty()) {
      const BootstrapReport boot = bootstrap_compare(
          load_score_file(auc_a_path), load_score_file(auc_b_path), resamples, rng);
      const json bj = bootstrap_to_json(boot);
      write_text(out_path + "/bootstrap.json", bj.dump(2) + "\n");
      report["bootstrap"] = bj;
    }
    report["out"] = out_path;
    emit(report);
  });

  auto* diff = app.add_subcommand(
      "train-diffusion", "pretrain the denoiser on query interaction vectors");
  diff->add_option("--config", config_path, "run config file")->required();
  diff->add_option("--out", out_path, "checkpoint file to write")->required();
  diff->add_option("--set", overrides, "override a config key, e.g. diff_steps=20");
  diff->callback([&] {
    RunConfig cfg = load_run_config(config_path);
    for (const auto& a : overrides) apply_config_override(cfg, a);
    cfg.validate();
    const Dataset ds = dataset_from_config(cfg);

    ParameterStore store;
    Rng master(cfg.seed);
    Rng init_rng = master.split();
    Rng diff_rng = master.split();
    Denoiser dn;
    dn.init(store, init_rng, ds.n_items);
    pretrain_denoiser(store, dn, cfg, ds, diff_rng);
    save_checkpoint(out_path, store, serialize_run_config(cfg),
                    cfg.diffusion.train_steps);
    emit(json{{"queries", ds.n_queries},
              {"items", ds.n_items},
              {"train_steps", cfg.diffusion.train_steps},
              {"parameters", store.count()},
              {"out", out_path}});
  });

  auto* augment = app.add_subcommand(
      "augment", "enhance sparse positive sets with denoiser top-k generations");
  augment->add_option("--ckpt", ckpt_path, "checkpoint with a trained denoiser")
      ->required();
  augment->add_option("--out", out_path, "TSV file to write")->required();
  augment->callback([&] {
    const LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    const RunConfig cfg = parse_run_config(lc.config_text, ckpt_path + ":config");
    const Dataset ds = dataset_from_config(cfg);

    bool full_model = false;
    for (const auto& nt : lc.parameters) {
      if (nt.name.rfind("dn.", 0) != 0) full_model = true;
    }
    ParameterStore store;
    Rng master(cfg.seed);
    Rng init_rng = master.split();
    Rng diff_rng = master.split();
    if (full_model) {
      CtrModel model;
      model.cfg = cfg;
      model.init(store, init_rng, ds);
    }
    Denoiser dn;
    dn.init(store, init_rng, ds.n_items);
    restore_parameters(store, lc);

    const AugmentResult aug = augment_positives(store, dn, cfg, ds, diff_rng);
    save_enhanced_positives(out_path, aug.rows);
    std::size_t observed = 0;
    for (const auto& row : aug.rows) observed += row.generated ? 0 : 1;
    emit(json{{"queries", ds.n_queries},
              {"observed", observed},
              {"generated", aug.rows.size() - observed},
              {"out", out_path}});
  });

  double lambda2 = 0.0, lambda3 = 0.0;
  bool no_diffusion = false, no_nip = false, no_contrastive = false;
  bool no_query_feature = false;

  auto* train_cmd = app.add_subcommand(
      "train", "run the full pipeline: denoiser, augmentation, joint training");
  train_cmd->add_option("--config", config_path, "run config file")->required();
  train_cmd->add_option("--out", out_path, "output directory")->required();
  train_cmd->add_option("--set", overrides, "override a config key, e.g. epochs=20");
  train_cmd->add_option("--lambda2", lambda2, "weight of the next-item loss");
  train_cmd->add_option("--lambda3", lambda3, "weight of the contrastive loss");
  train_cmd->add_flag("--no-diffusion", no_diffusion, "skip positive-set augmentation");
  train_cmd->add_flag("--no-nip", no_nip, "drop the sequence encoder head");
  train_cmd->add_flag("--no-contrastive", no_contrastive, "drop the similarity head");
  train_cmd->add_flag("--no-query-feature", no_query_feature,
                      "hide query history from the backbone");
  train_cmd->callback([&] {
    RunConfig cfg = load_run_config(config_path);
    for (const auto& a : overrides) apply_config_override(cfg, a);
    if (train_cmd->count("--lambda2") > 0) cfg.lambda2 = lambda2;
    if (train_cmd->count("--lambda3") > 0) cfg.lambda3 = lambda3;
    if (no_diffusion) cfg.use_diffusion = false;
    if (no_nip) cfg.use_nip = false;
    if (no_contrastive) cfg.use_contrastive = false;
    if (no_query_feature) cfg.use_query_feature = false;

    const Dataset ds = dataset_from_config(cfg);
    const TrainResult result = train(cfg, ds, out_path);
    json summary{{"out_dir", out_path},
                 {"epochs_run", result.metrics.size()},
                 {"best_step", result.best_step},
                 {"best_val_auc", result.best_val_auc},
                 {"nip_skipped", result.nip_skipped},
                 {"ctr_skipped", result.ctr_skipped}};
    try {
      const EvalReport test = evaluate_checkpoint(out_path + "/model.ckpt", "test");
      summary["test_auc"] = test.auc;
      summary["test_samples"] = test.samples;
    } catch (const std::exception& e) {
      summary["test_error"] = e.what();
    }
    emit(summary);
  });

  std::string split = "test";
  auto* evaluate = app.add_subcommand(
      "evaluate", "score a split with the model stored in a checkpoint");
  evaluate->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  evaluate->add_option("--split", split, "train, val, or test")->capture_default_str();
  evaluate->callback([&] {
    const EvalReport report = evaluate_checkpoint(ckpt_path, split);
    emit(json{{"ckpt", ckpt_path},
              {"split", split},
              {"auc", report.auc},
              {"samples", report.samples}});
  });

  std::string module;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "verify analytic gradients against central differences");
  gradcheck->add_option("--module", module,
                        "one of: primitives, l1, l2, l3, diffusion, joint");
  gradcheck->callback([&] {
    bool all_ok = true;
    for (const auto& r : run_gradient_checks(module)) {
      const bool ok = r.max_rel_err < kGradCheckTolerance;
      all_ok = all_ok && ok;
      std::printf("%-11s checks=%-3d max_rel_err=%.3e %s\n", r.module.c_str(),
                  r.checks, r.max_rel_err, ok ? "ok" : "FAIL");
    }
    if (!all_ok) exit_code = 1;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "qrec: error: %s\n", e.what());
    return 1;
  }
  return exit_code;
}
