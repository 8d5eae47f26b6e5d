#pragma once

#include <string>
#include <vector>

namespace qrec {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckResult {
  std::string module;
  double max_rel_err = 0.0;
  int checks = 0;  // gradient tensors compared against the oracle
};

/// Central-difference verification of every analytic gradient, on small
/// fixed models at 64-bit precision. Modules: "primitives" sweeps each tape
/// op in isolation; "l1", "l2", "l3", "diffusion", and "joint" rebuild the
/// corresponding end-to-end training loss and check every parameter tensor.
/// An empty filter runs all modules in that order; an unknown name throws.
std::vector<GradCheckResult> run_gradient_checks(const std::string& filter = "");

}  // namespace qrec
