#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "stgdat/generative_core.hpp"
#include "stgdat/geometry.hpp"
#include "stgdat/grad_check.hpp"
#include "stgdat/rng.hpp"

using namespace stgdat;
using namespace stgdat::model;

namespace {

LatentConfig small_latent() {
  LatentConfig cfg;
  cfg.latent_dim = 3;
  cfg.summary_dim = 4;
  cfg.hidden = 8;
  return cfg;
}

// KL( N(mu,1) || N(0,1) ) on the real line by Simpson quadrature.
double kl_1d_quadrature(double mu) {
  const double lo = mu - 12.0, hi = mu + 12.0;
  const int n = 4000;  // even
  const double h = (hi - lo) / n;
  auto integrand = [&](double x) {
    const double log_p = -0.5 * (x - mu) * (x - mu);
    const double log_q = -0.5 * x * x;
    const double p = std::exp(log_p) / std::sqrt(2.0 * kPi);
    return p * (log_p - log_q);
  };
  double s = integrand(lo) + integrand(hi);
  for (int i = 1; i < n; ++i) {
    s += integrand(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("posterior encoder is deterministic with the documented width") {
  ParamStore store;
  Rng rng(1);
  LatentConfig cfg;  // defaults: latent 32, summary 64, hidden 128
  const GenerativeCore g = GenerativeCore::create(store, cfg, rng);
  Tape t(&store);
  Tensor vh = Tensor::uniform({1, 64}, -1.0, 1.0, rng);
  Tensor vf = Tensor::uniform({1, 64}, -1.0, 1.0, rng);
  const auto mu1 = g.posterior_mean(t, t.constant(vh), t.constant(vf));
  const auto mu2 = g.posterior_mean(t, t.constant(vh), t.constant(vf));
  REQUIRE(t.value(mu1).cols() == 32);
  REQUIRE(t.value(mu1).rows() == 1);
  for (int i = 0; i < 32; ++i) CHECK(t.value(mu1)[i] == t.value(mu2)[i]);
  // Encoder is 3 dense layers: 128->128, 128->128, 128->32.
  CHECK(g.encoder.layers.size() == 3);
  CHECK(store.value(g.encoder.layers[0].w).rows() == 128);
  CHECK(store.value(g.encoder.layers[2].w).cols() == 32);
  CHECK_THROWS_AS(g.posterior_mean(t, mu1, t.constant(vf)), std::invalid_argument);
}

TEST_CASE("encoder gradients match finite differences") {
  ParamStore store;
  Rng rng(2);
  const GenerativeCore g = GenerativeCore::create(store, small_latent(), rng);
  Tensor vh = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
  Tensor vf = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
  const auto r = nn::grad_check(
      [&](Tape& t) {
        return t.sq_norm(g.posterior_mean(t, t.constant(vh), t.constant(vf)));
      },
      store, {1e-6, 4, 3});
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("reparameterized sampling") {
  ParamStore store;
  Rng rng(3);
  const GenerativeCore g = GenerativeCore::create(store, small_latent(), rng);

  SUBCASE("zero noise returns the mean") {
    Tape t(&store);
    Tensor mu_val = Tensor::uniform({1, 3}, -1.0, 1.0, rng);
    const auto mu = t.constant(mu_val);
    const auto z = g.sample_posterior(t, mu, Tensor::zeros({1, 3}));
    for (int i = 0; i < 3; ++i) CHECK(t.value(z)[i] == mu_val[i]);
  }

  SUBCASE("gradient of sum(z) with respect to mu is all ones") {
    store.add("mu.direct", Tensor::uniform({1, 3}, -1.0, 1.0, rng));
    Tape t(&store);
    const auto mu = t.param("mu.direct");
    Tensor eps = Tensor::uniform({1, 3}, -1.0, 1.0, rng);
    const auto z = g.sample_posterior(t, mu, eps);
    t.backward(t.sum_all(z));
    const Tensor& grad = store.grad("mu.direct");
    for (int i = 0; i < 3; ++i) CHECK(grad[i] == 1.0);
  }

  SUBCASE("noise shape mismatch throws") {
    Tape t(&store);
    const auto mu = t.constant(Tensor::zeros({1, 3}));
    CHECK_THROWS_AS(g.sample_posterior(t, mu, Tensor::zeros({1, 4})),
                    std::invalid_argument);
  }

  SUBCASE("expectation of z over the noise is the mean") {
    Tensor mu_val = Tensor::uniform({1, 3}, -1.0, 1.0, rng);
    Rng noise(77);
    std::vector<double> acc(3, 0.0);
    const int n = 20000;
    for (int k = 0; k < n; ++k) {
      Tape t(&store);
      const auto z = g.sample_posterior(t, t.constant(mu_val), noise);
      for (int i = 0; i < 3; ++i) acc[static_cast<std::size_t>(i)] += t.value(z)[i];
    }
    const double se = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(acc[static_cast<std::size_t>(i)] / n - mu_val[i]) < 4.0 * se);
    }
  }
}

TEST_CASE("prior sample moments") {
  ParamStore store;
  Rng rng(4);
  LatentConfig cfg;  // latent 32
  const GenerativeCore g = GenerativeCore::create(store, cfg, rng);
  Rng prior_rng(123);
  const Tensor rows = g.sample_prior_rows(100000, prior_rng);
  REQUIRE(rows.rows() == 100000);
  REQUIRE(rows.cols() == 32);
  for (int c = 0; c < 32; ++c) {
    double mean = 0.0;
    for (int r = 0; r < rows.rows(); ++r) mean += rows(r, c);
    mean /= rows.rows();
    double var = 0.0;
    for (int r = 0; r < rows.rows(); ++r) {
      const double d = rows(r, c) - mean;
      var += d * d;
    }
    var /= (rows.rows() - 1);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
  }
  CHECK_THROWS_AS(g.sample_prior_rows(0, prior_rng), std::invalid_argument);
}

TEST_CASE("kl closed form") {
  ParamStore store;
  Tape t(&store);

  CHECK(t.scalar_value(kl_term(t, t.constant(Tensor::zeros({1, 32})))) == 0.0);
  CHECK(t.scalar_value(kl_term(t, t.constant(Tensor::full({1, 32}, 1.0)))) ==
        doctest::Approx(16.0).epsilon(1e-12));

  // 1-D cases against numerical integration.
  for (double mu : {0.3, -1.2, 2.0}) {
    const double closed = t.scalar_value(kl_term(t, t.constant(Tensor::scalar(mu))));
    CHECK(closed == doctest::Approx(kl_1d_quadrature(mu)).epsilon(1e-6));
  }

  // Non-negative, zero only at zero.
  Rng rng(5);
  const Tensor mu = Tensor::uniform({1, 8}, -2.0, 2.0, rng);
  CHECK(t.scalar_value(kl_term(t, t.constant(mu))) > 0.0);
}

TEST_CASE("mmd estimator") {
  ParamStore store;
  Rng rng(6);
  LossConfig cfg;

  SUBCASE("identical samples give exactly zero") {
    Tape t(&store);
    const Tensor z = Tensor::uniform({5, 3}, -1.0, 1.0, rng);
    const auto m = mmd_term(t, t.constant(z), z, cfg);
    CHECK(t.scalar_value(m) == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("identical coincident points hit the bandwidth floor, still zero") {
    Tape t(&store);
    const Tensor z = Tensor::zeros({4, 2});
    const auto m = mmd_term(t, t.constant(z), z, cfg);
    CHECK(t.scalar_value(m) == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("far-separated samples approach the kernel bound of two") {
    Tape t(&store);
    Tensor z = Tensor::uniform({6, 2}, -0.1, 0.1, rng);
    Tensor p = z;
    for (double& x : p.data) x += 1e4;
    // At unit bandwidth the cross kernel vanishes and the within-set kernels
    // stay near one, so the estimate approaches its upper bound of two.
    LossConfig unit = cfg;
    unit.fixed_bandwidth = 1.0;
    const double v = t.scalar_value(mmd_term(t, t.constant(z), p, unit));
    CHECK(v <= 2.0);
    CHECK(v > 1.9);
    // The median heuristic rescales with the offset; the bound still holds.
    const double w = t.scalar_value(mmd_term(t, t.constant(z), p, cfg));
    CHECK(w >= 0.0);
    CHECK(w <= 2.0);
  }

  SUBCASE("matched standard normals, n = 500, stay under 0.05") {
    Tape t(&store);
    Rng za(31), pa(32);
    Tensor z = Tensor::zeros({500, 32});
    Tensor p = Tensor::zeros({500, 32});
    for (double& x : z.data) x = za.normal();
    for (double& x : p.data) x = pa.normal();
    const auto m = mmd_term(t, t.constant(z), p, cfg);
    const double v = t.scalar_value(m);
    CHECK(v >= 0.0);
    CHECK(v < 0.05);
  }

  SUBCASE("gradient flows into the latents") {
    store.add("z.rows", Tensor::uniform({4, 3}, -1.0, 1.0, rng));
    Rng prior(9);
    Tensor p = Tensor::uniform({4, 3}, -1.0, 1.0, prior);
    LossConfig fixed = cfg;
    fixed.fixed_bandwidth = 1.0;  // hold sigma still while probing
    const auto r = nn::grad_check(
        [&](Tape& t) { return mmd_term(t, t.param("z.rows"), p, fixed); },
        store, {1e-6, 6, 41});
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("median heuristic bandwidth") {
  // Points 0 and 3 on the line: the single pairwise distance is 3.
  Tensor a = Tensor::zeros({1, 1});
  Tensor b = Tensor::full({1, 1}, 3.0);
  CHECK(median_heuristic_bandwidth(a, b, 1e-6) == doctest::Approx(3.0));
  // All identical points floor out.
  Tensor z = Tensor::zeros({3, 2});
  CHECK(median_heuristic_bandwidth(z, z, 1e-6) == doctest::Approx(1e-6));
  // Distances {1, 2, 3} over three collinear points 0, 1, 3 -> median 2.
  Tensor tri = Tensor::zeros({3, 1});
  tri[1] = 1.0;
  tri[2] = 3.0;
  CHECK(median_heuristic_bandwidth(tri, Tensor::zeros({0, 1}), 1e-6) ==
        doctest::Approx(2.0));
}

TEST_CASE("loss config constraint") {
  LossConfig ok;  // gamma 1, alpha 0.5, beta_w 1
  CHECK_NOTHROW(ok.validate());

  LossConfig bad = ok;
  bad.alpha = 1.0;  // 1 - alpha = 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.alpha = 1.5;  // 1 - alpha < 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.alpha = 0.2;
  bad.beta_w = 0.5;  // 1 - alpha = 0.8 >= beta_w
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  // 1 - 0.999 = 0.001 < 0.5: permitted by the stated inequality.
  LossConfig edge = ok;
  edge.alpha = 0.999;
  edge.beta_w = 0.5;
  CHECK_NOTHROW(edge.validate());
}

TEST_CASE("total loss") {
  ParamStore store;
  Rng rng(7);
  LossConfig cfg;

  SUBCASE("perfect everything gives zero") {
    Tape t(&store);
    const Tensor truth = Tensor::uniform({6, 2}, -5.0, 5.0, rng);
    const Tensor z = Tensor::uniform({3, 4}, -1.0, 1.0, rng);
    LossBreakdown bd;
    const auto loss = total_loss(t, t.constant(truth), truth,
                                 {t.constant(Tensor::zeros({1, 4}))},
                                 t.constant(z), z, cfg, &bd);
    CHECK(t.scalar_value(loss) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(bd.recon == 0.0);
    CHECK(bd.kl == 0.0);
    CHECK(bd.mmd == doctest::Approx(0.0).epsilon(1e-12));
    const auto j = nlohmann::json::parse(bd.to_json());
    CHECK(j.contains("recon"));
    CHECK(j.contains("kl"));
    CHECK(j.contains("mmd"));
    CHECK(j.contains("total"));
  }

  SUBCASE("mismatched shapes throw") {
    Tape t(&store);
    const Tensor truth = Tensor::zeros({6, 2});
    CHECK_THROWS_AS(total_loss(t, t.constant(Tensor::zeros({5, 2})), truth,
                               {t.constant(Tensor::zeros({1, 4}))},
                               t.constant(Tensor::zeros({3, 4})),
                               Tensor::zeros({3, 4}), cfg),
                    std::invalid_argument);
  }

  SUBCASE("huge reconstruction weight degenerates to mean squared error") {
    Tape t(&store);
    LossConfig heavy = cfg;
    heavy.gamma = 1e6;
    const Tensor truth = Tensor::uniform({10, 2}, -5.0, 5.0, rng);
    const Tensor pred = Tensor::uniform({10, 2}, -5.0, 5.0, rng);
    const Tensor mu = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
    const Tensor z = Tensor::uniform({4, 4}, -1.0, 1.0, rng);
    const Tensor p = Tensor::uniform({4, 4}, -1.0, 1.0, rng);
    const auto pred_ref = t.constant(pred);
    const auto loss = total_loss(t, pred_ref, truth, {t.constant(mu)},
                                 t.constant(z), p, heavy);
    double mse = 0.0;
    for (int r = 0; r < 10; ++r) {
      for (int c = 0; c < 2; ++c) {
        const double d = pred(r, c) - truth(r, c);
        mse += d * d;
      }
    }
    mse /= 10.0;
    CHECK(t.scalar_value(loss) / heavy.gamma ==
          doctest::Approx(mse).epsilon(1e-3));
  }

  SUBCASE("weights combine linearly and the breakdown adds up") {
    Tape t(&store);
    const Tensor truth = Tensor::uniform({8, 2}, -2.0, 2.0, rng);
    const Tensor pred = Tensor::uniform({8, 2}, -2.0, 2.0, rng);
    const Tensor mu1 = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
    const Tensor mu2 = Tensor::uniform({1, 4}, -1.0, 1.0, rng);
    const Tensor z = Tensor::uniform({2, 4}, -1.0, 1.0, rng);
    const Tensor p = Tensor::uniform({2, 4}, -1.0, 1.0, rng);
    LossBreakdown bd;
    const auto loss = total_loss(t, t.constant(pred), truth,
                                 {t.constant(mu1), t.constant(mu2)},
                                 t.constant(z), p, cfg, &bd);
    auto sq_sum = [](const Tensor& m) {
      double s = 0.0;
      for (double x : m.data) s += x * x;
      return s;
    };
    const double expect_kl = 0.5 * (0.5 * sq_sum(mu1) + 0.5 * sq_sum(mu2));
    CHECK(bd.kl == doctest::Approx(expect_kl).epsilon(1e-12));
    CHECK(t.scalar_value(loss) ==
          doctest::Approx(cfg.gamma * bd.recon + cfg.alpha * bd.kl +
                          cfg.beta_w * bd.mmd)
              .epsilon(1e-12));
    CHECK(bd.total == doctest::Approx(t.scalar_value(loss)).epsilon(1e-12));
  }

  SUBCASE("end-to-end gradient through all three terms") {
    ParamStore ps;
    Rng prng(8);
    const GenerativeCore g = GenerativeCore::create(ps, small_latent(), prng);
    ps.add("pred.rows", Tensor::uniform({5, 2}, -1.0, 1.0, prng));
    const Tensor truth = Tensor::uniform({5, 2}, -1.0, 1.0, prng);
    const Tensor vh = Tensor::uniform({1, 4}, -1.0, 1.0, prng);
    const Tensor vf = Tensor::uniform({1, 4}, -1.0, 1.0, prng);
    const Tensor eps = Tensor::uniform({1, 3}, -0.5, 0.5, prng);
    const Tensor prior = Tensor::uniform({1, 3}, -1.0, 1.0, prng);
    LossConfig fixed;
    fixed.fixed_bandwidth = 0.7;
    const auto r = nn::grad_check(
        [&](Tape& t) {
          const auto mu = g.posterior_mean(t, t.constant(vh), t.constant(vf));
          const auto z = g.sample_posterior(t, mu, eps);
          return total_loss(t, t.param("pred.rows"), truth, {mu}, z, prior,
                            fixed);
        },
        ps, {1e-6, 4, 51});
    CHECK(r.max_rel_err < 1e-4);
  }
}
