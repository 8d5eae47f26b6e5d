#include "qrec/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qrec {

namespace {

constexpr double kLogFloor = 1e-12;

[[noreturn]] void bad(Op op, const std::string& what) {
  throw std::invalid_argument(std::string(op_name(op)) + ": " + what);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAdd: return "add";
    case Op::kAddRow: return "add_row";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddConst: return "add_const";
    case Op::kClamp: return "clamp";
    case Op::kConcatCols: return "concat_cols";
    case Op::kConcatRows: return "concat_rows";
    case Op::kSliceRows: return "slice_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kRepeatRows: return "repeat_rows";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kCausalSoftmax: return "causal_softmax";
    case Op::kGatherRows: return "gather_rows";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kDot: return "dot";
  }
  return "?";
}

bool GradientMap::contains(int id) const {
  return id >= 0 && static_cast<std::size_t>(id) < grads_.size() &&
         grads_[id].has_value();
}

const Tensor& GradientMap::at(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= grads_.size()) {
    throw std::out_of_range("gradient requested for a node not on the tape");
  }
  if (!grads_[id]) {
    throw std::out_of_range("no gradient recorded for node " + std::to_string(id));
  }
  return *grads_[id];
}

Tensor GradientMap::get_or_zero(int id, std::size_t rows, std::size_t cols) const {
  if (id < 0 || static_cast<std::size_t>(id) >= grads_.size()) {
    throw std::out_of_range("gradient requested for a node not on the tape");
  }
  if (!grads_[id]) return Tensor::zeros(rows, cols);
  return *grads_[id];
}

void GradientMap::accumulate(int id, const Tensor& g) {
  if (!grads_[id]) {
    grads_[id] = g;
    return;
  }
  auto& dst = grads_[id]->mutable_data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::check_id(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::out_of_range("node " + std::to_string(id) + " not on tape");
  }
}

const Tensor& Tape::input(int id) const {
  check_id(id);
  return nodes_[id].value;
}

const Tensor& Tape::value(int id) const { return input(id); }

const Node& Tape::node(int id) const {
  check_id(id);
  return nodes_[id];
}

int Tape::push(Node n) {
  if (!n.value.all_finite()) {
    throw std::runtime_error(std::string(op_name(n.op)) +
                             " produced a non-finite value");
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor v) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(v);
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  const Tensor& A = input(a);
  const Tensor& B = input(b);
  if (A.cols() != B.rows()) bad(Op::kMatMul, "inner dimensions differ");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(m, n);
  auto& c = C.mutable_data();
  auto pa = A.data(), pb = B.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = pa[i * k + t];
      if (av == 0.0) continue;
      const double* brow = pb.data() + t * n;
      double* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return push({Op::kMatMul, {a, b}, std::move(C)});
}

int Tape::transpose(int a) {
  const Tensor& A = input(a);
  Tensor T(A.cols(), A.rows());
  auto& t = T.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j)
      t[j * A.rows() + i] = pa[i * A.cols() + j];
  return push({Op::kTranspose, {a}, std::move(T)});
}

int Tape::add(int a, int b) {
  const Tensor& A = input(a);
  const Tensor& B = input(b);
  if (!A.same_shape(B)) bad(Op::kAdd, "shape mismatch");
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data(), pb = B.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = pa[i] + pb[i];
  return push({Op::kAdd, {a, b}, std::move(C)});
}

int Tape::add_row(int a, int r) {
  const Tensor& A = input(a);
  const Tensor& R = input(r);
  if (R.rows() != 1 || R.cols() != A.cols()) bad(Op::kAddRow, "row shape mismatch");
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data(), pr = R.data();
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j)
      c[i * A.cols() + j] = pa[i * A.cols() + j] + pr[j];
  return push({Op::kAddRow, {a, r}, std::move(C)});
}

int Tape::sub(int a, int b) {
  const Tensor& A = input(a);
  const Tensor& B = input(b);
  if (!A.same_shape(B)) bad(Op::kSub, "shape mismatch");
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data(), pb = B.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = pa[i] - pb[i];
  return push({Op::kSub, {a, b}, std::move(C)});
}

int Tape::mul(int a, int b) {
  const Tensor& A = input(a);
  const Tensor& B = input(b);
  if (!A.same_shape(B)) bad(Op::kMul, "shape mismatch");
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data(), pb = B.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = pa[i] * pb[i];
  return push({Op::kMul, {a, b}, std::move(C)});
}

int Tape::scale(int a, double k) {
  const Tensor& A = input(a);
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = pa[i] * k;
  Node n{Op::kScale, {a}, std::move(C)};
  n.a0 = k;
  return push(std::move(n));
}

int Tape::add_const(int a, double v) {
  const Tensor& A = input(a);
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = pa[i] + v;
  Node n{Op::kAddConst, {a}, std::move(C)};
  n.a0 = v;
  return push(std::move(n));
}

int Tape::clamp(int a, double lo, double hi) {
  if (!(lo <= hi)) bad(Op::kClamp, "lo > hi");
  const Tensor& A = input(a);
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::clamp(pa[i], lo, hi);
  Node n{Op::kClamp, {a}, std::move(C)};
  n.a0 = lo;
  n.a1 = hi;
  return push(std::move(n));
}

int Tape::concat_cols(std::span<const int> xs) {
  if (xs.empty()) bad(Op::kConcatCols, "no inputs");
  const std::size_t m = input(xs[0]).rows();
  std::size_t total = 0;
  for (int x : xs) {
    if (input(x).rows() != m) bad(Op::kConcatCols, "row count mismatch");
    total += input(x).cols();
  }
  Tensor C(m, total);
  auto& c = C.mutable_data();
  std::size_t off = 0;
  for (int x : xs) {
    const Tensor& X = input(x);
    auto px = X.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < X.cols(); ++j)
        c[i * total + off + j] = px[i * X.cols() + j];
    off += X.cols();
  }
  Node n{Op::kConcatCols, {xs.begin(), xs.end()}, std::move(C)};
  return push(std::move(n));
}

int Tape::concat_rows(std::span<const int> xs) {
  if (xs.empty()) bad(Op::kConcatRows, "no inputs");
  const std::size_t w = input(xs[0]).cols();
  std::size_t total = 0;
  for (int x : xs) {
    if (input(x).cols() != w) bad(Op::kConcatRows, "column count mismatch");
    total += input(x).rows();
  }
  Tensor C(total, w);
  auto& c = C.mutable_data();
  std::size_t off = 0;
  for (int x : xs) {
    const Tensor& X = input(x);
    auto px = X.data();
    std::copy(px.begin(), px.end(), c.begin() + off * w);
    off += X.rows();
  }
  Node n{Op::kConcatRows, {xs.begin(), xs.end()}, std::move(C)};
  return push(std::move(n));
}

int Tape::slice_rows(int a, std::size_t r0, std::size_t r1) {
  const Tensor& A = input(a);
  if (r0 >= r1 || r1 > A.rows()) bad(Op::kSliceRows, "bounds out of range");
  Tensor C(r1 - r0, A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  std::copy(pa.begin() + r0 * A.cols(), pa.begin() + r1 * A.cols(), c.begin());
  Node n{Op::kSliceRows, {a}, std::move(C)};
  n.idx = {static_cast<std::int64_t>(r0), static_cast<std::int64_t>(r1)};
  return push(std::move(n));
}

int Tape::slice_cols(int a, std::size_t c0, std::size_t c1) {
  const Tensor& A = input(a);
  if (c0 >= c1 || c1 > A.cols()) bad(Op::kSliceCols, "bounds out of range");
  Tensor C(A.rows(), c1 - c0);
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j)
      c[i * (c1 - c0) + (j - c0)] = pa[i * A.cols() + j];
  Node n{Op::kSliceCols, {a}, std::move(C)};
  n.idx = {static_cast<std::int64_t>(c0), static_cast<std::int64_t>(c1)};
  return push(std::move(n));
}

int Tape::repeat_rows(int a, std::size_t m) {
  const Tensor& A = input(a);
  if (A.rows() != 1) bad(Op::kRepeatRows, "input must be a single row");
  if (m == 0) bad(Op::kRepeatRows, "zero repeat count");
  Tensor C(m, A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy(pa.begin(), pa.end(), c.begin() + i * A.cols());
  Node n{Op::kRepeatRows, {a}, std::move(C)};
  n.idx = {static_cast<std::int64_t>(m)};
  return push(std::move(n));
}

int Tape::sum(int a) {
  const Tensor& A = input(a);
  double s = 0.0;
  for (double v : A.data()) s += v;
  return push({Op::kSum, {a}, Tensor::scalar(s)});
}

int Tape::mean(int a) {
  const Tensor& A = input(a);
  if (A.size() == 0) bad(Op::kMean, "empty input");
  double s = 0.0;
  for (double v : A.data()) s += v;
  return push({Op::kMean, {a}, Tensor::scalar(s / static_cast<double>(A.size()))});
}

int Tape::sigmoid(int a) {
  const Tensor& A = input(a);
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double x = pa[i];
    // Split on sign to avoid exp overflow on large magnitudes.
    c[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  return push({Op::kSigmoid, {a}, std::move(C)});
}

int Tape::tanh(int a) {
  const Tensor& A = input(a);
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::tanh(pa[i]);
  return push({Op::kTanh, {a}, std::move(C)});
}

int Tape::exp(int a) {
  const Tensor& A = input(a);
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::exp(pa[i]);
  return push({Op::kExp, {a}, std::move(C)});
}

int Tape::log(int a) {
  const Tensor& A = input(a);
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (pa[i] <= 0.0) bad(Op::kLog, "non-positive input");
    c[i] = std::log(std::max(pa[i], kLogFloor));
  }
  return push({Op::kLog, {a}, std::move(C)});
}

int Tape::softmax_rows(int a) {
  const Tensor& A = input(a);
  Tensor C(A.rows(), A.cols());
  auto& c = C.mutable_data();
  auto pa = A.data();
  const std::size_t n = A.cols();
  if (n == 0) bad(Op::kSoftmaxRows, "empty rows");
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* x = pa.data() + i * n;
    double* y = c.data() + i * n;
    double m = x[0];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - m);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return push({Op::kSoftmaxRows, {a}, std::move(C)});
}

int Tape::causal_softmax(int a) {
  const Tensor& A = input(a);
  if (A.rows() != A.cols()) bad(Op::kCausalSoftmax, "matrix must be square");
  const std::size_t n = A.rows();
  Tensor C(n, n);
  auto& c = C.mutable_data();
  auto pa = A.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = pa.data() + i * n;
    double* y = c.data() + i * n;
    double m = x[0];
    for (std::size_t j = 1; j <= i; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      y[j] = std::exp(x[j] - m);
      z += y[j];
    }
    for (std::size_t j = 0; j <= i; ++j) y[j] /= z;
  }
  return push({Op::kCausalSoftmax, {a}, std::move(C)});
}

int Tape::gather_rows(int table, std::span<const std::int64_t> ids) {
  const Tensor& T = input(table);
  if (ids.empty()) bad(Op::kGatherRows, "no indices");
  Tensor C(ids.size(), T.cols());
  auto& c = C.mutable_data();
  auto pt = T.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const std::int64_t id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= T.rows()) {
      bad(Op::kGatherRows, "row index " + std::to_string(id) + " out of range");
    }
    std::copy(pt.begin() + id * T.cols(), pt.begin() + (id + 1) * T.cols(),
              c.begin() + r * T.cols());
  }
  Node n{Op::kGatherRows, {table}, std::move(C)};
  n.idx.assign(ids.begin(), ids.end());
  return push(std::move(n));
}

int Tape::layer_norm(int x, int gain, int bias, double eps) {
  const Tensor& X = input(x);
  const Tensor& G = input(gain);
  const Tensor& B = input(bias);
  const std::size_t n = X.cols();
  if (n == 0) bad(Op::kLayerNorm, "empty rows");
  if (G.rows() != 1 || G.cols() != n || B.rows() != 1 || B.cols() != n) {
    bad(Op::kLayerNorm, "gain/bias must be 1 x cols");
  }
  if (eps <= 0.0) bad(Op::kLayerNorm, "eps must be positive");
  Tensor C(X.rows(), n);
  auto& c = C.mutable_data();
  auto px = X.data(), pg = G.data(), pb = B.data();
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const double* xr = px.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] = (xr[j] - mu) * inv * pg[j] + pb[j];
    }
  }
  Node nd{Op::kLayerNorm, {x, gain, bias}, std::move(C)};
  nd.a0 = eps;
  return push(std::move(nd));
}

int Tape::dot(int a, int b) {
  const Tensor& A = input(a);
  const Tensor& B = input(b);
  if (!A.same_shape(B)) bad(Op::kDot, "shape mismatch");
  double s = 0.0;
  auto pa = A.data(), pb = B.data();
  for (std::size_t i = 0; i < pa.size(); ++i) s += pa[i] * pb[i];
  return push({Op::kDot, {a, b}, Tensor::scalar(s)});
}

GradientMap Tape::backward(int loss) const {
  check_id(loss);
  if (nodes_[loss].value.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss node");
  }
  GradientMap gm(nodes_.size());
  gm.accumulate(loss, Tensor::scalar(1.0));

  for (int id = loss; id >= 0; --id) {
    if (!gm.contains(id)) continue;
    const Node& nd = nodes_[id];
    if (nd.op == Op::kLeaf) continue;
    const Tensor& g = gm.at(id);
    auto pg = g.data();

    switch (nd.op) {
      case Op::kMatMul: {
        const Tensor& A = nodes_[nd.in[0]].value;
        const Tensor& B = nodes_[nd.in[1]].value;
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        Tensor dA(m, k), dB(k, n);
        auto& da = dA.mutable_data();
        auto& db = dB.mutable_data();
        auto pa = A.data(), pb = B.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = pg[i * n + j];
            if (gv == 0.0) continue;
            for (std::size_t t = 0; t < k; ++t) {
              da[i * k + t] += gv * pb[t * n + j];
              db[t * n + j] += gv * pa[i * k + t];
            }
          }
        gm.accumulate(nd.in[0], dA);
        gm.accumulate(nd.in[1], dB);
        break;
      }
      case Op::kTranspose: {
        const Tensor& A = nodes_[nd.in[0]].value;
        Tensor dA(A.rows(), A.cols());
        auto& da = dA.mutable_data();
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = 0; j < A.cols(); ++j)
            da[i * A.cols() + j] = pg[j * A.rows() + i];
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kAdd: {
        gm.accumulate(nd.in[0], g);
        gm.accumulate(nd.in[1], g);
        break;
      }
      case Op::kAddRow: {
        gm.accumulate(nd.in[0], g);
        const std::size_t n = nd.value.cols();
        Tensor dR(1, n);
        auto& dr = dR.mutable_data();
        for (std::size_t i = 0; i < nd.value.rows(); ++i)
          for (std::size_t j = 0; j < n; ++j) dr[j] += pg[i * n + j];
        gm.accumulate(nd.in[1], dR);
        break;
      }
      case Op::kSub: {
        gm.accumulate(nd.in[0], g);
        Tensor dB(g.rows(), g.cols());
        auto& db = dB.mutable_data();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] = -pg[i];
        gm.accumulate(nd.in[1], dB);
        break;
      }
      case Op::kMul: {
        const Tensor& A = nodes_[nd.in[0]].value;
        const Tensor& B = nodes_[nd.in[1]].value;
        Tensor dA(A.rows(), A.cols()), dB(B.rows(), B.cols());
        auto& da = dA.mutable_data();
        auto& db = dB.mutable_data();
        auto pa = A.data(), pb = B.data();
        for (std::size_t i = 0; i < da.size(); ++i) {
          da[i] = pg[i] * pb[i];
          db[i] = pg[i] * pa[i];
        }
        gm.accumulate(nd.in[0], dA);
        gm.accumulate(nd.in[1], dB);
        break;
      }
      case Op::kScale: {
        Tensor dA(g.rows(), g.cols());
        auto& da = dA.mutable_data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] = pg[i] * nd.a0;
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kAddConst: {
        gm.accumulate(nd.in[0], g);
        break;
      }
      case Op::kClamp: {
        const Tensor& A = nodes_[nd.in[0]].value;
        Tensor dA(A.rows(), A.cols());
        auto& da = dA.mutable_data();
        auto pa = A.data();
        for (std::size_t i = 0; i < da.size(); ++i) {
          da[i] = (pa[i] >= nd.a0 && pa[i] <= nd.a1) ? pg[i] : 0.0;
        }
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kConcatCols: {
        const std::size_t total = nd.value.cols();
        std::size_t off = 0;
        for (int x : nd.in) {
          const Tensor& X = nodes_[x].value;
          Tensor dX(X.rows(), X.cols());
          auto& dx = dX.mutable_data();
          for (std::size_t i = 0; i < X.rows(); ++i)
            for (std::size_t j = 0; j < X.cols(); ++j)
              dx[i * X.cols() + j] = pg[i * total + off + j];
          gm.accumulate(x, dX);
          off += X.cols();
        }
        break;
      }
      case Op::kConcatRows: {
        const std::size_t w = nd.value.cols();
        std::size_t off = 0;
        for (int x : nd.in) {
          const Tensor& X = nodes_[x].value;
          Tensor dX(X.rows(), X.cols());
          auto& dx = dX.mutable_data();
          std::copy(pg.begin() + off * w, pg.begin() + (off + X.rows()) * w,
                    dx.begin());
          gm.accumulate(x, dX);
          off += X.rows();
        }
        break;
      }
      case Op::kSliceRows: {
        const Tensor& A = nodes_[nd.in[0]].value;
        Tensor dA(A.rows(), A.cols());
        auto& da = dA.mutable_data();
        const std::size_t r0 = static_cast<std::size_t>(nd.idx[0]);
        std::copy(pg.begin(), pg.end(), da.begin() + r0 * A.cols());
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kSliceCols: {
        const Tensor& A = nodes_[nd.in[0]].value;
        Tensor dA(A.rows(), A.cols());
        auto& da = dA.mutable_data();
        const std::size_t c0 = static_cast<std::size_t>(nd.idx[0]);
        const std::size_t w = nd.value.cols();
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j)
            da[i * A.cols() + c0 + j] = pg[i * w + j];
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kRepeatRows: {
        const std::size_t n = nd.value.cols();
        Tensor dA(1, n);
        auto& da = dA.mutable_data();
        for (std::size_t i = 0; i < nd.value.rows(); ++i)
          for (std::size_t j = 0; j < n; ++j) da[j] += pg[i * n + j];
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kSum: {
        const Tensor& A = nodes_[nd.in[0]].value;
        gm.accumulate(nd.in[0], Tensor::full(A.rows(), A.cols(), pg[0]));
        break;
      }
      case Op::kMean: {
        const Tensor& A = nodes_[nd.in[0]].value;
        gm.accumulate(nd.in[0],
                      Tensor::full(A.rows(), A.cols(),
                                   pg[0] / static_cast<double>(A.size())));
        break;
      }
      case Op::kSigmoid: {
        Tensor dA(g.rows(), g.cols());
        auto& da = dA.mutable_data();
        auto py = nd.value.data();
        for (std::size_t i = 0; i < da.size(); ++i)
          da[i] = pg[i] * py[i] * (1.0 - py[i]);
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kTanh: {
        Tensor dA(g.rows(), g.cols());
        auto& da = dA.mutable_data();
        auto py = nd.value.data();
        for (std::size_t i = 0; i < da.size(); ++i)
          da[i] = pg[i] * (1.0 - py[i] * py[i]);
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kExp: {
        Tensor dA(g.rows(), g.cols());
        auto& da = dA.mutable_data();
        auto py = nd.value.data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] = pg[i] * py[i];
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kLog: {
        const Tensor& A = nodes_[nd.in[0]].value;
        Tensor dA(A.rows(), A.cols());
        auto& da = dA.mutable_data();
        auto pa = A.data();
        for (std::size_t i = 0; i < da.size(); ++i) {
          // Below the floor the forward output is constant, so the true
          // derivative of what was computed is zero.
          da[i] = pa[i] >= kLogFloor ? pg[i] / pa[i] : 0.0;
        }
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kSoftmaxRows: {
        const std::size_t n = nd.value.cols();
        Tensor dA(nd.value.rows(), n);
        auto& da = dA.mutable_data();
        auto py = nd.value.data();
        for (std::size_t i = 0; i < nd.value.rows(); ++i) {
          const double* y = py.data() + i * n;
          const double* gr = pg.data() + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += gr[j] * y[j];
          for (std::size_t j = 0; j < n; ++j)
            da[i * n + j] = y[j] * (gr[j] - s);
        }
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kCausalSoftmax: {
        const std::size_t n = nd.value.cols();
        Tensor dA(n, n);
        auto& da = dA.mutable_data();
        auto py = nd.value.data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* y = py.data() + i * n;
          const double* gr = pg.data() + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j <= i; ++j) s += gr[j] * y[j];
          for (std::size_t j = 0; j <= i; ++j)
            da[i * n + j] = y[j] * (gr[j] - s);
        }
        gm.accumulate(nd.in[0], dA);
        break;
      }
      case Op::kGatherRows: {
        const Tensor& T = nodes_[nd.in[0]].value;
        Tensor dT(T.rows(), T.cols());
        auto& dt = dT.mutable_data();
        const std::size_t w = T.cols();
        for (std::size_t r = 0; r < nd.idx.size(); ++r) {
          const std::size_t id = static_cast<std::size_t>(nd.idx[r]);
          for (std::size_t j = 0; j < w; ++j) dt[id * w + j] += pg[r * w + j];
        }
        gm.accumulate(nd.in[0], dT);
        break;
      }
      case Op::kLayerNorm: {
        const Tensor& X = nodes_[nd.in[0]].value;
        const Tensor& Gn = nodes_[nd.in[1]].value;
        const std::size_t n = X.cols();
        Tensor dX(X.rows(), n), dG(1, n), dB(1, n);
        auto& dx = dX.mutable_data();
        auto& dgain = dG.mutable_data();
        auto& dbias = dB.mutable_data();
        auto px = X.data(), pgain = Gn.data();
        for (std::size_t i = 0; i < X.rows(); ++i) {
          const double* xr = px.data() + i * n;
          const double* gr = pg.data() + i * n;
          double mu = 0.0;
          for (std::size_t j = 0; j < n; ++j) mu += xr[j];
          mu /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
          var /= static_cast<double>(n);
          const double inv = 1.0 / std::sqrt(var + nd.a0);
          double mh = 0.0, mhx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double xh = (xr[j] - mu) * inv;
            const double h = gr[j] * pgain[j];
            mh += h;
            mhx += h * xh;
            dgain[j] += gr[j] * xh;
            dbias[j] += gr[j];
          }
          mh /= static_cast<double>(n);
          mhx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double xh = (xr[j] - mu) * inv;
            dx[i * n + j] = (gr[j] * pgain[j] - mh - xh * mhx) * inv;
          }
        }
        gm.accumulate(nd.in[0], dX);
        gm.accumulate(nd.in[1], dG);
        gm.accumulate(nd.in[2], dB);
        break;
      }
      case Op::kDot: {
        const Tensor& A = nodes_[nd.in[0]].value;
        const Tensor& B = nodes_[nd.in[1]].value;
        const double gv = pg[0];
        Tensor dA(A.rows(), A.cols()), dB(B.rows(), B.cols());
        auto& da = dA.mutable_data();
        auto& db = dB.mutable_data();
        auto pa = A.data(), pb = B.data();
        for (std::size_t i = 0; i < da.size(); ++i) {
          da[i] = gv * pb[i];
          db[i] = gv * pa[i];
        }
        gm.accumulate(nd.in[0], dA);
        gm.accumulate(nd.in[1], dB);
        break;
      }
      case Op::kLeaf:
        break;
    }
  }
  return gm;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite difference eps must be positive");
  Tensor g(x.rows(), x.cols());
  auto& gd = g.mutable_data();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      Tensor hi = x;
      hi.set(i, j, x.at(i, j) + eps);
      Tensor lo = x;
      lo.set(i, j, x.at(i, j) - eps);
      gd[i * x.cols() + j] = (f(hi) - f(lo)) / (2.0 * eps);
    }
  }
  return g;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_rel_err: shape mismatch");
  }
  double worst = 0.0;
  auto pa = a.data(), pb = b.data();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double denom = std::max({1.0, std::abs(pa[i]), std::abs(pb[i])});
    worst = std::max(worst, std::abs(pa[i] - pb[i]) / denom);
  }
  return worst;
}

}  // namespace qrec
