#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "qrec/tensor.hpp"

namespace qrec {

/// Gradients keyed by parameter name; std::map so iteration order is fixed.
using GradByName = std::map<std::string, Tensor>;

/// Named parameter tensors with stable iteration order. Shapes are fixed at
/// creation; set() rejects mismatches so optimizer state stays consistent.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Tensor init, bool trainable = true);
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor v);
  bool has(const std::string& name) const;
  bool trainable(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t count() const { return order_.size(); }

 private:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter first/second moment accumulators with bias correction.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg) : cfg_(cfg) {}

  /// One update over the given gradients. Every key must name a trainable
  /// parameter of matching shape. The step counter advances once per call.
  void step(ParameterStore& store, const GradByName& grads);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace qrec
