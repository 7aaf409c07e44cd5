#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stgdat/grad_check.hpp"
#include "stgdat/layers.hpp"
#include "stgdat/rng.hpp"

using namespace stgdat;
using namespace stgdat::nn;

TEST_CASE("dense forward matches manual computation") {
  Tensor x = Tensor::row({1.0, 2.0});
  Tensor w({2, 2});
  w(0, 0) = 0.5; w(0, 1) = -1.0; w(1, 0) = 2.0; w(1, 1) = 0.25;
  Tensor b = Tensor::row({0.1, -0.2});
  Tensor y = dense_forward(x, w, b, Activation::none);
  CHECK(y[0] == doctest::Approx(1.0 * 0.5 + 2.0 * 2.0 + 0.1));
  CHECK(y[1] == doctest::Approx(1.0 * -1.0 + 2.0 * 0.25 - 0.2));

  Tensor yt = dense_forward(x, w, b, Activation::tanh);
  CHECK(yt[0] == doctest::Approx(std::tanh(y[0])));
}

TEST_CASE("glorot initialization stays within its bound and biases are zero") {
  ParamStore store;
  Rng rng(3);
  DenseLayer layer = DenseLayer::create(store, "d", 30, 50, Activation::none, rng);
  const double bound = std::sqrt(6.0 / (30 + 50));
  for (double v : store.value(layer.w).data) {
    CHECK(std::abs(v) <= bound);
  }
  for (double v : store.value(layer.b).data) CHECK(v == 0.0);
  // Not degenerate: values spread out.
  double mn = 1e9, mx = -1e9;
  for (double v : store.value(layer.w).data) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  CHECK(mx - mn > bound);
}

TEST_CASE("dense and mlp gradients") {
  ParamStore store;
  Rng rng(7);
  Mlp mlp = Mlp::create(store, "mlp", {4, 16, 16, 3}, Activation::leaky_relu,
                        Activation::none, rng);
  Tensor x = Tensor::uniform({5, 4}, -1.0, 1.0, rng);
  GradCheckConfig cfg;
  cfg.step = 1e-6;
  const auto result = grad_check([&](Tape& t) {
    return t.sq_norm(mlp.apply(t, t.constant(x)));
  }, store, cfg);
  CHECK(result.max_rel_err < 1e-5);
}

TEST_CASE("gru with all-zero parameters halves the hidden state") {
  ParamStore store;
  Rng rng(1);
  GruCell cell = GruCell::create(store, "gru", 3, 4, rng);
  for (const auto& name : store.names()) {
    std::fill(store.value(name).data.begin(), store.value(name).data.end(), 0.0);
  }
  Tensor h = Tensor::row({1.0, -2.0, 0.5, 4.0});
  Tensor x = Tensor::row({0.3, 0.7, -0.1});
  Tensor h2 = cell.step_values(store, h, x);
  for (int i = 0; i < 4; ++i) {
    CHECK(h2[i] == doctest::Approx(0.5 * h[i]).epsilon(1e-12));
  }
}

TEST_CASE("gru output stays in (-1, 1) from zero hidden state") {
  // h' = (1-z) tanh(...) + z * 0, a convex blend of values in (-1, 1).
  ParamStore store;
  Rng rng(2);
  GruCell cell = GruCell::create(store, "gru", 8, 16, rng);
  Tensor h({1, 16});
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::uniform({1, 8}, -5.0, 5.0, rng);
    Tensor h2 = cell.step_values(store, h, x);
    for (double v : h2.data) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("gru gradient through three chained steps") {
  ParamStore store;
  Rng rng(9);
  GruCell cell = GruCell::create(store, "gru", 3, 6, rng);
  Tensor x0 = Tensor::uniform({2, 3}, -1.0, 1.0, rng);
  Tensor x1 = Tensor::uniform({2, 3}, -1.0, 1.0, rng);
  Tensor x2 = Tensor::uniform({2, 3}, -1.0, 1.0, rng);
  GradCheckConfig cfg;
  cfg.step = 1e-6;
  const auto result = grad_check([&](Tape& t) {
    Tape::Ref h = t.constant(Tensor({2, 6}));
    h = cell.step(t, h, t.constant(x0));
    h = cell.step(t, h, t.constant(x1));
    h = cell.step(t, h, t.constant(x2));
    return t.sq_norm(h);
  }, store, cfg);
  CHECK(result.max_rel_err < 1e-5);
}

TEST_CASE("conv layer gradient and geometry") {
  ParamStore store;
  Rng rng(13);
  Conv2dLayer conv = Conv2dLayer::create(store, "c1", 3, 3, 2, 4, 2, 1,
                                         Activation::leaky_relu, rng);
  Tensor x = Tensor::uniform({1, 8, 8, 2}, -1.0, 1.0, rng);
  {
    Tape t(&store);
    Tape::Ref y = conv.apply(t, t.constant(x));
    CHECK(t.value(y).shape == std::vector<int>({1, 4, 4, 4}));
  }
  GradCheckConfig cfg;
  cfg.step = 1e-6;
  const auto result = grad_check([&](Tape& t) {
    return t.sq_norm(conv.apply(t, t.constant(x)));
  }, store, cfg);
  CHECK(result.max_rel_err < 1e-5);
}
