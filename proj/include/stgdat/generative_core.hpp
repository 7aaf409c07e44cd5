#pragma once

#include <string>
#include <vector>

#include "stgdat/layers.hpp"
#include "stgdat/tape.hpp"

namespace stgdat {
class Rng;
}

namespace stgdat::model {

// Weights of the three-term training objective
//   gamma * reconstruction + alpha * mean KL + beta_w * MMD^2.
// beta_w is the MMD weight (the slip angle is also called beta elsewhere).
struct LossConfig {
  double gamma = 1.0;
  double alpha = 0.5;
  double beta_w = 1.0;
  // RBF bandwidth = median pairwise distance over latents + prior samples,
  // never below this floor. A positive fixed_bandwidth bypasses the median
  // heuristic (useful when the bandwidth must not move during probing).
  double bandwidth_floor = 1e-6;
  double fixed_bandwidth = 0.0;

  // Requires gamma > 0 and 0 < 1 - alpha < beta_w.
  void validate() const;
};

struct LatentConfig {
  int latent_dim = 32;
  int summary_dim = 64;  // per-agent summary; encoder input is two of these
  int hidden = 128;
  double leaky = 0.2;

  int encoder_input_dim() const { return 2 * summary_dim; }
  void validate() const;
};

// Latent-variable machinery: a posterior encoder over the concatenated
// history/future summaries, reparameterized sampling, a standard-normal
// prior for test time, and the loss terms tying them together.
struct GenerativeCore {
  LatentConfig cfg;
  nn::Mlp encoder;  // [v_h || v_f] -> hidden -> hidden -> latent_dim

  static GenerativeCore create(ParamStore& store, const LatentConfig& cfg,
                               Rng& rng, const std::string& prefix = "latent");

  // Posterior mean mu (1 x latent_dim); identity covariance by construction.
  Tape::Ref posterior_mean(Tape& t, Tape::Ref v_history, Tape::Ref v_future) const;

  // z = mu + eps. The eps overload pins the noise for tests; the rng
  // overload draws eps ~ N(0, I). Gradients flow to mu only.
  Tape::Ref sample_posterior(Tape& t, Tape::Ref mu, const Tensor& eps) const;
  Tape::Ref sample_posterior(Tape& t, Tape::Ref mu, Rng& rng) const;

  // Test-time draw z ~ N(0, I), shape (1 x latent_dim).
  Tensor sample_prior(Rng& rng) const;
  // n independent prior draws stacked (n x latent_dim).
  Tensor sample_prior_rows(int n, Rng& rng) const;
};

// KL( N(mu, I) || N(0, I) ) = |mu|^2 / 2 for one latent (scalar node).
Tape::Ref kl_term(Tape& t, Tape::Ref mu);

// Median pairwise Euclidean distance over the union of the two row sets,
// floored away from zero. Rows must have equal width.
double median_heuristic_bandwidth(const Tensor& latents, const Tensor& prior_samples,
                                  double floor_value);

// Biased MMD^2 between latent rows (on tape) and prior rows (constant),
// with the bandwidth policy of `cfg`. The bandwidth itself is treated as a
// constant in the backward pass.
Tape::Ref mmd_term(Tape& t, Tape::Ref latent_rows, const Tensor& prior_samples,
                   const LossConfig& cfg);

struct LossBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double mmd = 0.0;
  double total = 0.0;
  std::string to_json() const;
};

// Full objective. `pred_positions` and `truth_positions` are (n x 2) stacked
// agent-step positions; reconstruction is the mean squared Euclidean error
// over those rows. KL is averaged over the posterior means. Throws on shape
// mismatch or an invalid config.
Tape::Ref total_loss(Tape& t, Tape::Ref pred_positions, const Tensor& truth_positions,
                     const std::vector<Tape::Ref>& posterior_means,
                     Tape::Ref latent_rows, const Tensor& prior_samples,
                     const LossConfig& cfg, LossBreakdown* breakdown = nullptr);

}  // namespace stgdat::model
