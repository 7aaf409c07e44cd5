#include "stgdat/generative_core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "stgdat/rng.hpp"

namespace stgdat::model {

void LossConfig::validate() const {
  if (!(gamma > 0.0)) {
    throw std::invalid_argument("LossConfig: reconstruction weight gamma must be positive");
  }
  if (!(1.0 - alpha > 0.0) || !(1.0 - alpha < beta_w)) {
    throw std::invalid_argument(
        "LossConfig: weights must satisfy 0 < 1 - alpha < beta_w (alpha=" +
        std::to_string(alpha) + ", beta_w=" + std::to_string(beta_w) + ")");
  }
  if (!(bandwidth_floor > 0.0)) {
    throw std::invalid_argument("LossConfig: bandwidth floor must be positive");
  }
  if (fixed_bandwidth < 0.0) {
    throw std::invalid_argument("LossConfig: fixed bandwidth cannot be negative");
  }
}

void LatentConfig::validate() const {
  if (latent_dim <= 0 || summary_dim <= 0 || hidden <= 0) {
    throw std::invalid_argument("LatentConfig: dimensions must be positive");
  }
}

GenerativeCore GenerativeCore::create(ParamStore& store, const LatentConfig& cfg,
                                      Rng& rng, const std::string& prefix) {
  cfg.validate();
  GenerativeCore g;
  g.cfg = cfg;
  g.encoder = nn::Mlp::create(
      store, prefix + ".enc",
      {cfg.encoder_input_dim(), cfg.hidden, cfg.hidden, cfg.latent_dim},
      Activation::leaky_relu, Activation::none, rng, cfg.leaky);
  return g;
}

Tape::Ref GenerativeCore::posterior_mean(Tape& t, Tape::Ref v_history,
                                         Tape::Ref v_future) const {
  const Tensor& h = t.value(v_history);
  const Tensor& f = t.value(v_future);
  if (h.rows() != 1 || f.rows() != 1 ||
      h.cols() + f.cols() != cfg.encoder_input_dim()) {
    throw std::invalid_argument("posterior_mean: expected two 1 x summary_dim rows");
  }
  return encoder.apply(t, t.concat_cols({v_history, v_future}));
}

Tape::Ref GenerativeCore::sample_posterior(Tape& t, Tape::Ref mu,
                                           const Tensor& eps) const {
  const Tensor& m = t.value(mu);
  if (eps.rows() != m.rows() || eps.cols() != m.cols()) {
    throw std::invalid_argument("sample_posterior: noise shape mismatch");
  }
  return t.add(mu, t.constant(eps));
}

Tape::Ref GenerativeCore::sample_posterior(Tape& t, Tape::Ref mu, Rng& rng) const {
  Tensor eps = Tensor::zeros(t.value(mu).shape);
  for (double& x : eps.data) x = rng.normal();
  return sample_posterior(t, mu, eps);
}

Tensor GenerativeCore::sample_prior(Rng& rng) const {
  return sample_prior_rows(1, rng);
}

Tensor GenerativeCore::sample_prior_rows(int n, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("sample_prior_rows: need n >= 1");
  Tensor out = Tensor::zeros({n, cfg.latent_dim});
  for (double& x : out.data) x = rng.normal();
  return out;
}

Tape::Ref kl_term(Tape& t, Tape::Ref mu) {
  return t.affine(t.sq_norm(mu), 0.5, 0.0);
}

double median_heuristic_bandwidth(const Tensor& latents, const Tensor& prior_samples,
                                  double floor_value) {
  if (latents.cols() != prior_samples.cols()) {
    throw std::invalid_argument("median_heuristic_bandwidth: column mismatch");
  }
  const int d = latents.cols();
  std::vector<const Tensor*> sets = {&latents, &prior_samples};
  std::vector<std::vector<double>> rows;
  for (const Tensor* s : sets) {
    for (int r = 0; r < s->rows(); ++r) {
      std::vector<double> row(d);
      for (int c = 0; c < d; ++c) row[static_cast<std::size_t>(c)] = (*s)(r, c);
      rows.push_back(std::move(row));
    }
  }
  if (rows.size() < 2) {
    throw std::invalid_argument("median_heuristic_bandwidth: need at least two points");
  }
  std::vector<double> dists;
  dists.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) {
        const double diff = rows[i][static_cast<std::size_t>(c)] -
                            rows[j][static_cast<std::size_t>(c)];
        s += diff * diff;
      }
      dists.push_back(std::sqrt(s));
    }
  }
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid),
                   dists.end());
  double med = dists[mid];
  if (dists.size() % 2 == 0) {
    // Even count: average the two middle order statistics.
    const double hi = med;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid) - 1,
                     dists.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (dists[mid - 1] + hi);
  }
  return std::max(med, floor_value);
}

Tape::Ref mmd_term(Tape& t, Tape::Ref latent_rows, const Tensor& prior_samples,
                   const LossConfig& cfg) {
  cfg.validate();
  const double sigma =
      cfg.fixed_bandwidth > 0.0
          ? cfg.fixed_bandwidth
          : median_heuristic_bandwidth(t.value(latent_rows), prior_samples,
                                       cfg.bandwidth_floor);
  return t.mmd_biased(latent_rows, prior_samples, sigma);
}

std::string LossBreakdown::to_json() const {
  nlohmann::json j;
  j["recon"] = recon;
  j["kl"] = kl;
  j["mmd"] = mmd;
  j["total"] = total;
  return j.dump();
}

Tape::Ref total_loss(Tape& t, Tape::Ref pred_positions, const Tensor& truth_positions,
                     const std::vector<Tape::Ref>& posterior_means,
                     Tape::Ref latent_rows, const Tensor& prior_samples,
                     const LossConfig& cfg, LossBreakdown* breakdown) {
  cfg.validate();
  const Tensor& pred = t.value(pred_positions);
  if (pred.rows() != truth_positions.rows() || pred.cols() != truth_positions.cols()) {
    throw std::invalid_argument("total_loss: prediction/truth shape mismatch");
  }
  if (pred.rows() < 1) throw std::invalid_argument("total_loss: empty prediction");
  if (posterior_means.empty()) {
    throw std::invalid_argument("total_loss: need at least one posterior mean");
  }

  // Mean squared Euclidean error over stacked agent-step rows.
  Tape::Ref recon = t.affine(t.sq_dist(pred_positions, t.constant(truth_positions)),
                             1.0 / pred.rows(), 0.0);

  std::vector<Tape::Ref> kls;
  kls.reserve(posterior_means.size());
  for (Tape::Ref mu : posterior_means) kls.push_back(kl_term(t, mu));
  Tape::Ref kl = t.affine(t.add_n(kls), 1.0 / static_cast<double>(kls.size()), 0.0);

  Tape::Ref mmd = mmd_term(t, latent_rows, prior_samples, cfg);

  Tape::Ref total = t.add_n({t.affine(recon, cfg.gamma, 0.0),
                             t.affine(kl, cfg.alpha, 0.0),
                             t.affine(mmd, cfg.beta_w, 0.0)});
  if (breakdown != nullptr) {
    breakdown->recon = t.scalar_value(recon);
    breakdown->kl = t.scalar_value(kl);
    breakdown->mmd = t.scalar_value(mmd);
    breakdown->total = t.scalar_value(total);
  }
  return total;
}

}  // namespace stgdat::model
