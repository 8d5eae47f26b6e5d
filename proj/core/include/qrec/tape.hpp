#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrec/tensor.hpp"

namespace qrec {

enum class Op : std::uint8_t {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kAddRow,
  kSub,
  kMul,
  kScale,
  kAddConst,
  kClamp,
  kConcatCols,
  kConcatRows,
  kSliceRows,
  kSliceCols,
  kRepeatRows,
  kSum,
  kMean,
  kSigmoid,
  kTanh,
  kExp,
  kLog,
  kSoftmaxRows,
  kCausalSoftmax,
  kGatherRows,
  kLayerNorm,
  kDot,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kLeaf;
  std::vector<int> in;
  Tensor value;
  // Scalar attributes: scale factor, clamp bounds, layer-norm epsilon.
  double a0 = 0.0;
  double a1 = 0.0;
  // Index attributes: gather row ids, slice bounds, repeat count.
  std::vector<std::int64_t> idx;
};

/// Gradients keyed by tape node id. Nodes the loss never touched have no
/// entry; get_or_zero covers parameters of disabled model parts.
class GradientMap {
 public:
  bool contains(int id) const;
  const Tensor& at(int id) const;
  Tensor get_or_zero(int id, std::size_t rows, std::size_t cols) const;

 private:
  explicit GradientMap(std::size_t n) : grads_(n) {}
  void accumulate(int id, const Tensor& g);

  std::vector<std::optional<Tensor>> grads_;
  friend class Tape;
};

/// Record of one forward computation. Node ids are topologically ordered by
/// construction (an op only consumes earlier ids), so backward is a single
/// reverse sweep. Every op validates shapes and rejects non-finite outputs.
class Tape {
 public:
  int leaf(Tensor v);

  int matmul(int a, int b);
  int transpose(int a);
  int add(int a, int b);
  /// {m,n} + {1,n}, the bias-per-row case.
  int add_row(int a, int r);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double k);
  int add_const(int a, double c);
  int clamp(int a, double lo, double hi);
  int concat_cols(std::span<const int> xs);
  int concat_rows(std::span<const int> xs);
  int slice_rows(int a, std::size_t r0, std::size_t r1);
  int slice_cols(int a, std::size_t c0, std::size_t c1);
  int repeat_rows(int a, std::size_t m);
  int sum(int a);
  int mean(int a);
  int sigmoid(int a);
  int tanh(int a);
  int exp(int a);
  /// Natural log; rejects non-positive input, clamps tiny positives to 1e-12.
  int log(int a);
  int softmax_rows(int a);
  /// Square matrix; row i is a softmax over columns 0..i, zero beyond.
  int causal_softmax(int a);
  int gather_rows(int table, std::span<const std::int64_t> ids);
  int layer_norm(int x, int gain, int bias, double eps);
  int dot(int a, int b);

  const Tensor& value(int id) const;
  std::size_t node_count() const { return nodes_.size(); }
  const Node& node(int id) const;

  GradientMap backward(int loss) const;

 private:
  int push(Node n);
  const Tensor& input(int id) const;
  void check_id(int id) const;

  std::vector<Node> nodes_;
};

/// Central-difference gradient of a scalar function, the oracle the analytic
/// backward pass is checked against. Independent of Tape::backward.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double eps = 1e-5);

/// Largest elementwise |a-b| / max(1, |a|, |b|); the unit floor keeps
/// finite-difference noise on near-zero entries from dominating.
double max_rel_err(const Tensor& a, const Tensor& b);

}  // namespace qrec
