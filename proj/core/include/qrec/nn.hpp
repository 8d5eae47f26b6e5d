#pragma once

#include <map>
#include <string>
#include <vector>

#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/tape.hpp"

namespace qrec {

/// Binds store parameters to leaf nodes of one tape, on first use. collect()
/// then pulls gradients for every bound trainable parameter; parameters a
/// loss never touched come back as zeros, not gaps.
class ParamNodes {
 public:
  ParamNodes(Tape& tape, const ParameterStore& store)
      : tape_(&tape), store_(&store) {}

  int operator()(const std::string& name);
  GradByName collect(const GradientMap& gm) const;

 private:
  Tape* tape_;
  const ParameterStore* store_;
  std::map<std::string, int> bound_;
};

/// Fully connected stack: tanh on hidden layers, optional sigmoid on the
/// output. Parameters live under "<prefix>.w<l>" / "<prefix>.b<l>".
struct Mlp {
  std::string prefix;
  std::vector<std::size_t> dims;
  bool sigmoid_out = false;

  void init(ParameterStore& store, Rng& rng) const;
  /// x is {m, dims.front()}; returns {m, dims.back()}.
  int forward(Tape& t, ParamNodes& p, int x) const;
};

}  // namespace qrec
