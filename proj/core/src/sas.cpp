#include "qrec/sas.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace qrec {

namespace {

constexpr double kLnEps = 1e-5;

std::string block_name(int b, const char* suffix) {
  return "sas.b" + std::to_string(b) + "." + suffix;
}

}  // namespace

void SasEncoder::init(ParameterStore& store, Rng& rng, const SasConfig& config) {
  cfg = config;
  if (cfg.dim <= 0 || cfg.l_max <= 0 || cfg.blocks <= 0 || cfg.heads <= 0 ||
      cfg.ffn_mult <= 0) {
    throw std::invalid_argument("encoder sizes must be positive");
  }
  if (cfg.dim % cfg.heads != 0) {
    throw std::invalid_argument("head count must divide the dimension");
  }
  const std::size_t d = cfg.dim;
  const std::size_t f = d * cfg.ffn_mult;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  store.create("sas.pos", rng.normal_tensor(cfg.l_max, d, 0.1));
  store.create("sas.sentinel", rng.normal_tensor(1, d, 0.1));
  for (int b = 0; b < cfg.blocks; ++b) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      store.create(block_name(b, w), rng.normal_tensor(d, d, proj_std));
    }
    store.create(block_name(b, "ln1.g"), Tensor::full(1, d, 1.0));
    store.create(block_name(b, "ln1.b"), Tensor::zeros(1, d));
    store.create(block_name(b, "ln2.g"), Tensor::full(1, d, 1.0));
    store.create(block_name(b, "ln2.b"), Tensor::zeros(1, d));
    store.create(block_name(b, "ffn.w0"), rng.normal_tensor(d, f, proj_std));
    store.create(block_name(b, "ffn.b0"), Tensor::zeros(1, f));
    store.create(block_name(b, "ffn.w1"),
                 rng.normal_tensor(f, d, 1.0 / std::sqrt(static_cast<double>(f))));
    store.create(block_name(b, "ffn.b1"), Tensor::zeros(1, d));
  }
}

int SasEncoder::encode_all(Tape& t, ParamNodes& p, int seq) const {
  const std::size_t n = t.value(seq).rows();
  if (n == 0 || t.value(seq).cols() != static_cast<std::size_t>(cfg.dim)) {
    throw std::invalid_argument("encoder input must be {n,d} with n >= 1");
  }
  if (n > static_cast<std::size_t>(cfg.l_max)) {
    throw std::invalid_argument("sequence longer than l_max; truncate first");
  }
  const std::size_t dh = cfg.dim / cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  int h = t.add(seq, t.slice_rows(p("sas.pos"), 0, n));
  for (int b = 0; b < cfg.blocks; ++b) {
    const int a_in = t.layer_norm(h, p(block_name(b, "ln1.g")),
                                  p(block_name(b, "ln1.b")), kLnEps);
    const int q = t.matmul(a_in, p(block_name(b, "wq")));
    const int k = t.matmul(a_in, p(block_name(b, "wk")));
    const int v = t.matmul(a_in, p(block_name(b, "wv")));
    std::vector<int> heads;
    for (int head = 0; head < cfg.heads; ++head) {
      const std::size_t c0 = head * dh, c1 = c0 + dh;
      const int qh = t.slice_cols(q, c0, c1);
      const int kh = t.slice_cols(k, c0, c1);
      const int vh = t.slice_cols(v, c0, c1);
      const int logits = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt_dh);
      heads.push_back(t.matmul(t.causal_softmax(logits), vh));
    }
    const int attn = heads.size() == 1 ? heads[0] : t.concat_cols(heads);
    h = t.add(h, t.matmul(attn, p(block_name(b, "wo"))));

    const int f_in = t.layer_norm(h, p(block_name(b, "ln2.g")),
                                  p(block_name(b, "ln2.b")), kLnEps);
    const int f1 = t.tanh(t.add_row(t.matmul(f_in, p(block_name(b, "ffn.w0"))),
                                    p(block_name(b, "ffn.b0"))));
    const int f2 = t.add_row(t.matmul(f1, p(block_name(b, "ffn.w1"))),
                             p(block_name(b, "ffn.b1")));
    h = t.add(h, f2);
  }
  return h;
}

int SasEncoder::encode(Tape& t, ParamNodes& p, int seq) const {
  if (seq < 0) return p("sas.sentinel");
  const int all = encode_all(t, p, seq);
  const std::size_t n = t.value(all).rows();
  return t.slice_rows(all, n - 1, n);
}

int nip_loss(Tape& t, int encoded_query, int pos, int neg) {
  if (pos < 0 && neg < 0) return t.leaf(Tensor::zeros(1, 1));
  const int eq_col = t.transpose(encoded_query);
  int loss = -1;
  if (pos >= 0) {
    const int p_term =
        t.scale(t.mean(t.log(t.sigmoid(t.matmul(pos, eq_col)))), -1.0);
    loss = p_term;
  }
  if (neg >= 0) {
    const int squashed = t.sigmoid(t.matmul(neg, eq_col));
    const int flipped = t.add_const(t.scale(squashed, -1.0), 1.0);
    const int n_term = t.scale(t.mean(t.log(flipped)), -1.0);
    loss = loss < 0 ? n_term : t.add(loss, n_term);
  }
  return loss;
}

}  // namespace qrec
