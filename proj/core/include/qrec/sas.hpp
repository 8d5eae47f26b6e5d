#pragma once

#include <string>

#include "qrec/nn.hpp"
#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/tape.hpp"

namespace qrec {

struct SasConfig {
  int dim = 8;
  int l_max = 50;
  int blocks = 1;
  int heads = 1;
  int ffn_mult = 4;
};

/// Self-attentive sequence encoder: learned positions, pre-norm causal
/// attention blocks with pointwise feed-forward, read out at the last
/// position. Empty sequences map to a learned sentinel row.
struct SasEncoder {
  SasConfig cfg;

  void init(ParameterStore& store, Rng& rng, const SasConfig& config = {});

  /// All positions of a {n,d} embedded sequence, causally: row i only sees
  /// rows 0..i. Throws if n exceeds l_max.
  int encode_all(Tape& t, ParamNodes& p, int seq) const;

  /// Last-position representation {1,d}; seq == -1 yields the sentinel.
  int encode(Tape& t, ParamNodes& p, int seq) const;
};

/// Next-interest prediction loss: binary cross entropy of sigmoid-squashed
/// dot products between the encoded query state and future clicked (pos,
/// {n,d}) versus future skipped (neg, {n,d}) item embeddings. Either side
/// may be -1 (absent) and then contributes zero; callers flag such samples.
int nip_loss(Tape& t, int encoded_query, int pos, int neg);

}  // namespace qrec
