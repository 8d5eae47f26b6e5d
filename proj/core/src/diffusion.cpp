#include "qrec/diffusion.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "qrec/tape.hpp"

namespace qrec {

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t line,
                             const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.empty()) throw std::runtime_error(path + ": empty file");
  return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

int parse_id(const std::string& path, std::size_t line, const std::string& field,
             const std::string& text) {
  int v = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    parse_fail(path, line, "field '" + field + "' is not an integer: '" + text + "'");
  }
  if (v < 0) parse_fail(path, line, "field '" + field + "' must be non-negative");
  return v;
}

void check_step(int t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.last_step()) {
    throw std::invalid_argument("step " + std::to_string(t) + " outside schedule 1.." +
                                std::to_string(sched.last_step()));
  }
}

}  // namespace

void DiffusionConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("diffusion config: steps must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("diffusion config: need 0 < beta_min <= beta_max < 1");
  }
  if (!(r_pos >= 0.0 && r_pos <= 1.0)) {
    throw std::invalid_argument("diffusion config: r_pos must be in [0, 1]");
  }
  if (!(r_neg >= -1.0 && r_neg < 0.0)) {
    throw std::invalid_argument("diffusion config: r_neg must be in [-1, 0)");
  }
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) {
    throw std::invalid_argument("diffusion config: mask_rate must be in [0, 1)");
  }
  if (top_k < 1) throw std::invalid_argument("diffusion config: top_k must be >= 1");
  if (train_steps < 1 || batch_size < 1) {
    throw std::invalid_argument("diffusion config: train_steps and batch_size must be >= 1");
  }
}

NoiseSchedule build_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("schedule needs 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha.assign(s.beta.size(), 1.0);
  s.alpha_bar.assign(s.beta.size(), 1.0);
  s.sigma2.assign(s.beta.size(), 0.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    s.beta[t] = beta_min + (beta_max - beta_min) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sigma2[t] = (1.0 - s.alpha[t]) * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]);
  }
  return s;
}

Tensor build_x0(const std::vector<int>& positives, const std::vector<int>& negatives,
                int n_items, double r_pos, double r_neg) {
  if (n_items < 1) throw std::invalid_argument("build_x0 needs a positive item count");
  Tensor x = Tensor::zeros(1, static_cast<std::size_t>(n_items));
  for (int i : negatives) {
    if (i < 0 || i >= n_items) throw std::out_of_range("negative item id out of range");
    x.set(0, static_cast<std::size_t>(i), r_neg);
  }
  for (int i : positives) {
    if (i < 0 || i >= n_items) throw std::out_of_range("positive item id out of range");
    x.set(0, static_cast<std::size_t>(i), r_pos);
  }
  return x;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  check_step(t, sched);
  if (!x0.same_shape(eps)) throw std::invalid_argument("q_sample noise shape mismatch");
  const double signal = std::sqrt(sched.alpha_bar[t]);
  const double noise = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor out = x0;
  auto& d = out.mutable_data();
  std::span<const double> e = eps.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = signal * d[i] + noise * e[i];
  return out;
}

PosteriorStats posterior_stats(const Tensor& x_t, const Tensor& x0, int t,
                               const NoiseSchedule& sched) {
  check_step(t, sched);
  if (!x_t.same_shape(x0)) throw std::invalid_argument("posterior endpoint shape mismatch");
  if (t == 1) return {x0, 0.0};
  const double denom = 1.0 - sched.alpha_bar[t];
  const double c_t = std::sqrt(sched.alpha[t]) * (1.0 - sched.alpha_bar[t - 1]) / denom;
  const double c_0 = std::sqrt(sched.alpha_bar[t - 1]) * (1.0 - sched.alpha[t]) / denom;
  Tensor mean = x_t;
  auto& m = mean.mutable_data();
  std::span<const double> clean = x0.data();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = c_t * m[i] + c_0 * clean[i];
  return {std::move(mean), sched.sigma2[t]};
}

Tensor timestep_embedding(int step, int dim) {
  if (step < 0) throw std::invalid_argument("timestep must be non-negative");
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even");
  const int half = dim / 2;
  Tensor e(1, static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    e.set(0, static_cast<std::size_t>(i), std::sin(step * freq));
    e.set(0, static_cast<std::size_t>(half + i), std::cos(step * freq));
  }
  return e;
}

Tensor mask_positives(const Tensor& x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("mask rate must be in [0, 1)");
  }
  Tensor out = x;
  for (double& v : out.mutable_data()) {
    if (v > 0.0 && rng.next_bernoulli(rate)) v = 0.0;
  }
  return out;
}

void Denoiser::init(ParameterStore& store, Rng& rng, int items) {
  if (items < 1) throw std::invalid_argument("denoiser needs a positive item count");
  if (time_dim < 2 || time_dim % 2 != 0) {
    throw std::invalid_argument("denoiser time_dim must be even");
  }
  n_items = items;
  const std::size_t hidden = std::min<std::size_t>(4 * static_cast<std::size_t>(items), 256);
  net = Mlp{prefix, {static_cast<std::size_t>(items + time_dim), hidden,
                     static_cast<std::size_t>(items)},
            false};
  net.init(store, rng);
}

int Denoiser::forward(Tape& t, ParamNodes& p, int x_t, int step) const {
  const Tensor& v = t.value(x_t);
  if (v.rows() != 1 || v.cols() != static_cast<std::size_t>(n_items)) {
    throw std::invalid_argument("denoiser input must be {1, n_items}");
  }
  const int emb = t.leaf(timestep_embedding(step, time_dim));
  const std::array<int, 2> parts = {x_t, emb};
  return net.forward(t, p, t.concat_cols(parts));
}

Tensor Denoiser::evaluate(const ParameterStore& store, const Tensor& x_t, int step) const {
  Tape tape;
  ParamNodes p(tape, store);
  return tape.value(forward(tape, p, tape.leaf(x_t), step));
}

double diffusion_train_step(ParameterStore& store, AdamState& opt, const Denoiser& dn,
                            const NoiseSchedule& sched, const DiffusionConfig& cfg,
                            const std::vector<Tensor>& batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("diffusion batch is empty");
  const int last = sched.last_step();
  Tape tape;
  ParamNodes p(tape, store);
  std::vector<int> sample_losses;
  sample_losses.reserve(batch.size());
  for (const Tensor& x_q : batch) {
    const int t = 1 + static_cast<int>(rng.next_index(static_cast<std::uint64_t>(last)));
    const Tensor masked = mask_positives(x_q, cfg.mask_rate, rng);
    const Tensor eps = rng.normal_tensor(1, x_q.cols(), 1.0);
    const int x_t = tape.leaf(q_sample(masked, t, eps, sched));
    const int pred = dn.forward(tape, p, x_t, t);
    const int diff = tape.sub(pred, tape.leaf(x_q));
    sample_losses.push_back(tape.mean(tape.mul(diff, diff)));
  }
  const int loss = tape.mean(tape.concat_cols(sample_losses));
  const double value = tape.value(loss).item();
  opt.step(store, p.collect(tape.backward(loss)));
  return value;
}

Tensor reverse_generate(const DenoiseFn& denoise, const NoiseSchedule& sched,
                        const Tensor& x_q, int start_step, bool deterministic, Rng& rng) {
  if (start_step < 0 || start_step > sched.last_step()) {
    throw std::invalid_argument("start step outside schedule");
  }
  if (start_step == 0) return x_q;
  Tensor x = q_sample(x_q, start_step, rng.normal_tensor(1, x_q.cols(), 1.0), sched);
  for (int t = start_step; t >= 1; --t) {
    const Tensor x0_hat = denoise(x, t);
    if (!x0_hat.same_shape(x)) throw std::runtime_error("denoiser changed vector shape");
    PosteriorStats ps = posterior_stats(x, x0_hat, t, sched);
    x = std::move(ps.mean);
    if (!deterministic && ps.variance > 0.0) {
      const double sigma = std::sqrt(ps.variance);
      const Tensor noise = rng.normal_tensor(1, x.cols(), 1.0);
      auto& d = x.mutable_data();
      std::span<const double> n = noise.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += sigma * n[i];
    }
  }
  return x;
}

std::vector<int> topk_augment(const Tensor& scores, int k, const std::vector<int>& original) {
  if (scores.rows() != 1) throw std::invalid_argument("scores must be a single row");
  const int n = static_cast<int>(scores.cols());
  if (k < 1 || k > n) throw std::invalid_argument("top-k must be in 1..n_items");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::span<const double> s = scores.data();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (s[static_cast<std::size_t>(a)] != s[static_cast<std::size_t>(b)]) {
      return s[static_cast<std::size_t>(a)] > s[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  std::set<int> merged(order.begin(), order.begin() + k);
  for (int i : original) {
    if (i < 0 || i >= n) throw std::out_of_range("original positive id out of range");
    merged.insert(i);
  }
  return {merged.begin(), merged.end()};
}

void save_enhanced_positives(const std::string& path,
                             const std::vector<EnhancedPositive>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "query_id\titem_id\tsource\n";
  for (const EnhancedPositive& r : rows) {
    out << r.query << '\t' << r.item << '\t' << (r.generated ? "generated" : "observed")
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<EnhancedPositive> load_enhanced_positives(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines[0] != "query_id\titem_id\tsource") {
    parse_fail(path, 1, "bad header, expected query_id/item_id/source");
  }
  std::vector<EnhancedPositive> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> f = split_tabs(lines[i]);
    if (f.size() != 3) parse_fail(path, i + 1, "expected 3 tab-separated fields");
    EnhancedPositive r;
    r.query = parse_id(path, i + 1, "query_id", f[0]);
    r.item = parse_id(path, i + 1, "item_id", f[1]);
    if (f[2] == "observed") {
      r.generated = false;
    } else if (f[2] == "generated") {
      r.generated = true;
    } else {
      parse_fail(path, i + 1, "source must be observed or generated: '" + f[2] + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace qrec
