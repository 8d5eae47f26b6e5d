#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrec/config.hpp"
#include "qrec/contrastive.hpp"
#include "qrec/data.hpp"
#include "qrec/diffusion.hpp"
#include "qrec/din.hpp"
#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/sas.hpp"
#include "qrec/tape.hpp"

namespace qrec {

/// Weighted objective l1 + lambda2*l2 + lambda3*l3 as a tape node. l2 or l3
/// may be -1 (term absent) and then drops out together with its weight; a
/// weight of zero likewise drops the term, so the result aliases l1 exactly
/// when both extras are off. Components must be finite {1,1} nodes.
int joint_loss(Tape& t, int l1, int l2, int l3, double lambda2, double lambda3);

/// Dataset named by the config: data_dir set -> interchange files from that
/// directory, otherwise the synthetic generator.
Dataset dataset_from_config(const RunConfig& cfg);

/// Trains the denoiser to reconstruct clean query interaction vectors from
/// masked, noise-corrupted copies. Parameters must already exist in the
/// store (Denoiser::init); Adam runs at the config's learning rate and every
/// step snaps parameters to the 32-bit float grid. No-op on a dataset
/// without queries.
void pretrain_denoiser(ParameterStore& store, const Denoiser& dn, const RunConfig& cfg,
                       const Dataset& ds, Rng& rng);

/// Per-query positive sets enhanced by the trained denoiser: a deterministic
/// reverse-generation pass scores every item and the top-k merge into the
/// observed clicks. Rows carry provenance for the TSV export.
struct AugmentResult {
  std::vector<std::vector<int>> positives;  // per query, sorted ascending
  std::vector<EnhancedPositive> rows;
};
AugmentResult augment_positives(const ParameterStore& store, const Denoiser& dn,
                                const RunConfig& cfg, const Dataset& ds, Rng& rng);

/// Backbone plus the optional auxiliary heads. Parameter creation follows
/// the ablation flags, so a disabled head leaves no trace in the store.
struct CtrModel {
  RunConfig cfg;
  DinModel din;
  SasEncoder sas;
  BilinearSimilarity sim;

  void init(ParameterStore& store, Rng& rng, const Dataset& ds);

  /// Click probability node {1,1} for one interaction in its context.
  int predict(Tape& t, ParamNodes& p, const Dataset& ds, int user, int item,
              const BehaviorIndex::Context& ctx) const;
};

/// Loss nodes over one mini-batch. A term is -1 when its head is disabled,
/// its weight is zero, or no sample in the batch was eligible. Per-sample
/// auxiliary terms are averaged over the whole batch, so skipped samples
/// contribute zero without shrinking the denominator.
struct BatchTerms {
  int l1 = -1;
  int l2 = -1;
  int l3 = -1;
  int total = -1;
  int nip_skipped = 0;  // samples with no future interactions at all
  int ctr_skipped = 0;  // samples with no prior query or no known positives
};

/// Builds the joint objective for the listed rec interactions.
/// query_positives[q] is the (possibly augmented) clicked-item set used by
/// the contrastive term; its negatives are sampled from the complement.
BatchTerms batch_loss(Tape& t, ParamNodes& p, const CtrModel& model,
                      const Dataset& ds, const BehaviorIndex& index,
                      std::span<const int> batch,
                      const std::vector<std::vector<int>>& query_positives,
                      Rng& rng);

struct MetricsRecord {
  std::int64_t step = 0;
  double l1 = 0;
  double l2 = 0;
  double l3 = 0;
  double l = 0;
  double val_auc = 0;
  double seconds = 0;
};

/// One JSON object per record, keys exactly step, l1, l2, l3, l, val_auc,
/// seconds. Everything except the wall-time field is deterministic for a
/// fixed (seed, config, data).
std::string metrics_to_json(const MetricsRecord& r);
void save_metrics(const std::string& path, const std::vector<MetricsRecord>& rows);

struct EvalReport {
  double auc = 0;
  int samples = 0;
};

/// Scores every listed rec interaction with its behavior context and
/// reports ranking quality. Throws if the list is empty or single-class.
EvalReport evaluate_split(const ParameterStore& store, const CtrModel& model,
                          const Dataset& ds, const BehaviorIndex& index,
                          std::span<const int> sample_indices);

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  ParameterStore params;  // best-epoch parameters, same as the saved file
  CtrModel model;
  std::string config_text;
  std::int64_t best_step = 0;
  double best_val_auc = 0;
  std::int64_t nip_skipped = 0;
  std::int64_t ctr_skipped = 0;
};

/// Three-phase pipeline: denoiser pretraining on query click vectors,
/// positive-set augmentation for every query, then joint mini-batch training
/// with per-epoch validation and early stopping on patience. Writes
/// model.ckpt and metrics.jsonl into out_dir, plus enhanced.tsv when the
/// diffusion stage is on. Parameters are snapped to the 32-bit float grid
/// after every optimizer step, so the checkpoint is a bitwise image of the
/// live store.
TrainResult train(const RunConfig& cfg, const Dataset& ds, const std::string& out_dir);

/// Rebuilds dataset and model from the checkpoint's config snapshot and
/// scores the requested split: "train", "val", or "test".
EvalReport evaluate_checkpoint(const std::string& ckpt_path, const std::string& split);

}  // namespace qrec
