#pragma once

#include <cstdint>
#include <string>

#include "qrec/data.hpp"
#include "qrec/diffusion.hpp"

namespace qrec {

/// Every knob of a training run. data_dir empty means the synthetic
/// generator supplies the dataset.
struct RunConfig {
  std::string data_dir;
  SynthConfig synth;

  int dim = 32;
  int l_max = 50;
  int window = 10;

  int n_pos = 2;
  int n_neg = 2;

  int n_ctr_pos = 4;
  int n_ctr_neg = 64;
  double beta_ctr = 0.1;

  double lambda2 = 0.1;
  double lambda3 = 0.1;

  DiffusionConfig diffusion;

  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int batch_size = 256;
  int epochs = 10;
  int patience = 3;
  std::uint64_t seed = 1;

  bool use_query_feature = true;
  bool use_nip = true;
  bool use_contrastive = true;
  bool use_diffusion = true;

  void validate() const;
};

/// Flat key=value text with '#' comments. Unknown or duplicate keys and
/// malformed values are errors naming the offending line.
RunConfig parse_run_config(const std::string& text, const std::string& where);
RunConfig load_run_config(const std::string& path);

/// One "key=value" assignment on top of an existing config, the mechanism
/// command-line overrides use. Same key table as the file parser.
void apply_config_override(RunConfig& cfg, const std::string& assignment);

/// Canonical text listing every key; parse_run_config inverts it exactly.
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace qrec
