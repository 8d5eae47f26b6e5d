#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qrec/nn.hpp"
#include "qrec/optim.hpp"
#include "qrec/rng.hpp"
#include "qrec/tensor.hpp"

namespace qrec {

struct DiffusionConfig {
  int steps = 50;  // forward-process length T
  double beta_min = 1e-4;
  double beta_max = 0.02;
  double r_pos = 0.5;
  double r_neg = -0.5;
  double mask_rate = 0.3;  // chance of dropping a positive entry before corruption
  int top_k = 4;
  int train_steps = 2000;
  int batch_size = 32;

  void validate() const;
};

/// Forward-process constants for a linear beta ramp. Arrays are indexed by
/// step t in 1..T; index 0 holds the clean-signal boundary (alpha_bar[0] = 1),
/// so sigma2[1] is exactly zero.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 - beta[t]
  std::vector<double> alpha_bar;  // running product of alpha
  std::vector<double> sigma2;     // reverse-step posterior variance

  int last_step() const { return static_cast<int>(beta.size()) - 1; }
};

NoiseSchedule build_schedule(int steps, double beta_min, double beta_max);

/// Dense query-item interaction vector {1, n_items}: r_pos on clicked items,
/// r_neg on exposed-but-unclicked items, zero elsewhere.
Tensor build_x0(const std::vector<int>& positives, const std::vector<int>& negatives,
                int n_items, double r_pos, double r_neg);

/// One jump of the forward corruption:
/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

struct PosteriorStats {
  Tensor mean;
  double variance = 0.0;
};

/// Mean and variance of the reverse-step posterior given the endpoint pair
/// (x_t, x0). t = 1 is the reconstruction boundary: mean x0, variance zero.
PosteriorStats posterior_stats(const Tensor& x_t, const Tensor& x0, int t,
                               const NoiseSchedule& sched);

/// Sinusoidal features of an integer step: dim/2 sine then dim/2 cosine
/// channels over geometrically spaced frequencies. dim must be even.
Tensor timestep_embedding(int step, int dim);

/// Copy of x with each strictly positive entry zeroed independently with the
/// given probability. Non-positive entries are never touched.
Tensor mask_positives(const Tensor& x, double rate, Rng& rng);

/// MLP mapping a corrupted vector plus timestep features back to a clean
/// vector estimate. One tanh hidden layer of min(4 * n_items, 256), linear
/// output of width n_items.
struct Denoiser {
  std::string prefix = "dn";
  int n_items = 0;
  int time_dim = 16;
  Mlp net;

  void init(ParameterStore& store, Rng& rng, int items);
  /// x_t is a {1, n_items} node; returns a {1, n_items} node.
  int forward(Tape& t, ParamNodes& p, int x_t, int step) const;
  /// Gradient-free evaluation on a scratch tape.
  Tensor evaluate(const ParameterStore& store, const Tensor& x_t, int step) const;
};

/// One optimizer step of denoiser training. Per sample: drop positive entries
/// with probability mask_rate, corrupt the masked copy to a uniformly drawn
/// step, and regress the denoiser output onto the unmasked original. Returns
/// the batch mean squared error before the update.
double diffusion_train_step(ParameterStore& store, AdamState& opt, const Denoiser& dn,
                            const NoiseSchedule& sched, const DiffusionConfig& cfg,
                            const std::vector<Tensor>& batch, Rng& rng);

using DenoiseFn = std::function<Tensor(const Tensor& x_t, int step)>;

/// Corrupts x_q to start_step, then walks the reverse chain back to a clean
/// estimate, re-denoising at every step. Deterministic mode keeps only the
/// posterior means. start_step 0 returns x_q untouched.
Tensor reverse_generate(const DenoiseFn& denoise, const NoiseSchedule& sched,
                        const Tensor& x_q, int start_step, bool deterministic, Rng& rng);

/// Indices of the k largest scores (ties favor the lower index), merged with
/// the original positive set. Sorted ascending.
std::vector<int> topk_augment(const Tensor& scores, int k, const std::vector<int>& original);

struct EnhancedPositive {
  int query = 0;
  int item = 0;
  bool generated = false;
};

/// TSV interchange for augmented positive sets: query_id, item_id, source
/// (observed | generated).
void save_enhanced_positives(const std::string& path,
                             const std::vector<EnhancedPositive>& rows);
std::vector<EnhancedPositive> load_enhanced_positives(const std::string& path);

}  // namespace qrec
