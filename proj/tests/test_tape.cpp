#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "stgdat/grad_check.hpp"
#include "stgdat/rng.hpp"
#include "stgdat/tape.hpp"

using namespace stgdat;
using nn::GradCheckConfig;
using nn::grad_check;

namespace {

// Random-weighted scalarization so that every output element influences the
// loss with a distinct coefficient (catches transposition/indexing mistakes
// that a plain sum would miss).
Tape::Ref weighted_sum(Tape& tape, Tape::Ref x, std::uint64_t seed = 1234) {
  Rng rng(seed);
  Tensor w = Tensor::uniform(tape.value(x).shape, -1.0, 1.0, rng);
  return tape.sum_all(tape.mul(x, tape.constant(w)));
}

ParamStore make_store(const std::vector<std::pair<std::string, std::vector<int>>>& specs,
                      std::uint64_t seed = 5) {
  ParamStore store;
  Rng rng(seed);
  for (const auto& [name, shape] : specs) {
    store.add(name, Tensor::uniform(shape, -1.0, 1.0, rng));
  }
  return store;
}

double check(const nn::LossBuilder& build, ParamStore& store, double h = 1e-6) {
  GradCheckConfig cfg;
  cfg.step = h;
  return grad_check(build, store, cfg).max_rel_err;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);
  t(1, 2) = 7.0;
  CHECK(t.data[5] == 7.0);
  CHECK(t.shape_str() == "(2, 3)");
  CHECK(t.all_finite());
  t(0, 0) = std::nan("");
  CHECK(!t.all_finite());

  Tensor s = Tensor::scalar(3.5);
  CHECK(s.size() == 1);
  CHECK(s.data[0] == 3.5);

  Tensor r = Tensor::row({1.0, 2.0});
  CHECK(r.rows() == 1);
  CHECK(r.cols() == 2);
}

TEST_CASE("matmul value and gradient") {
  Tape tape;
  Tensor a({2, 3}), b({3, 2});
  for (int i = 0; i < 6; ++i) a[i] = i + 1;  // [[1,2,3],[4,5,6]]
  for (int i = 0; i < 6; ++i) b[i] = i;      // [[0,1],[2,3],[4,5]]
  Tape::Ref c = tape.matmul(tape.constant(a), tape.constant(b));
  CHECK(tape.value(c)(0, 0) == doctest::Approx(16.0));
  CHECK(tape.value(c)(0, 1) == doctest::Approx(22.0));
  CHECK(tape.value(c)(1, 0) == doctest::Approx(34.0));
  CHECK(tape.value(c)(1, 1) == doctest::Approx(49.0));

  auto store = make_store({{"a", {3, 4}}, {"b", {4, 2}}});
  const double err = check([](Tape& t) {
    return weighted_sum(t, t.matmul(t.param("a"), t.param("b")));
  }, store);
  CHECK(err < 1e-8);
}

TEST_CASE("elementwise binary ops gradient") {
  auto store = make_store({{"a", {3, 4}}, {"b", {3, 4}}});
  for (auto op : {0, 1, 2}) {
    const double err = check([op](Tape& t) {
      Tape::Ref a = t.param("a"), b = t.param("b");
      Tape::Ref y = op == 0 ? t.add(a, b) : op == 1 ? t.sub(a, b) : t.mul(a, b);
      return weighted_sum(t, y);
    }, store);
    CHECK(err < 1e-8);
  }
}

TEST_CASE("add_row broadcast gradient") {
  auto store = make_store({{"m", {4, 3}}, {"r", {1, 3}}});
  const double err = check([](Tape& t) {
    return weighted_sum(t, t.add_row(t.param("m"), t.param("r")));
  }, store);
  CHECK(err < 1e-8);
}

TEST_CASE("affine, add_n, mul_scalar gradients") {
  auto store = make_store({{"a", {2, 3}}, {"b", {2, 3}}, {"c", {2, 3}}, {"s", {1, 1}}});
  double err = check([](Tape& t) {
    return weighted_sum(t, t.affine(t.param("a"), -2.5, 0.75));
  }, store);
  CHECK(err < 1e-8);
  err = check([](Tape& t) {
    return weighted_sum(t, t.add_n({t.param("a"), t.param("b"), t.param("c")}));
  }, store);
  CHECK(err < 1e-8);
  err = check([](Tape& t) {
    return weighted_sum(t, t.mul_scalar(t.param("s"), t.param("a")));
  }, store);
  CHECK(err < 1e-8);
}

TEST_CASE("activations and unary op gradients") {
  auto store = make_store({{"x", {3, 5}}});
  for (auto act : {Activation::leaky_relu, Activation::tanh, Activation::sigmoid}) {
    const double err = check([act](Tape& t) {
      return weighted_sum(t, t.activation(t.param("x"), act, 0.2));
    }, store);
    CHECK(err < 1e-7);
  }
  for (int op = 0; op < 4; ++op) {
    const double err = check([op](Tape& t) {
      Tape::Ref x = t.param("x");
      Tape::Ref y = op == 0 ? t.sin(x) : op == 1 ? t.cos(x) : op == 2 ? t.exp(x)
                                                                      : t.softplus(x);
      return weighted_sum(t, y);
    }, store);
    CHECK(err < 1e-8);
  }
}

TEST_CASE("leaky relu value") {
  Tape tape;
  Tape::Ref y = tape.activation(tape.constant(Tensor::row({-1.0, 2.0})),
                                Activation::leaky_relu, 0.2);
  CHECK(tape.value(y)[0] == doctest::Approx(-0.2));
  CHECK(tape.value(y)[1] == doctest::Approx(2.0));
}

TEST_CASE("softmax value, shift invariance, gradient") {
  Tape tape;
  Tape::Ref sm = tape.softmax_row(tape.constant(Tensor::row({1.0, 2.0, 3.0})));
  const Tensor& y = tape.value(sm);
  double sum = 0.0;
  for (double v : y.data) sum += v;
  CHECK(sum == doctest::Approx(1.0));
  CHECK(y[2] > y[1]);
  CHECK(y[1] > y[0]);

  // Shift invariance: softmax(x + c) == softmax(x) exactly after max-shift.
  Tape::Ref sm2 = tape.softmax_row(tape.constant(Tensor::row({101.0, 102.0, 103.0})));
  for (int i = 0; i < 3; ++i) {
    CHECK(tape.value(sm2)[i] == doctest::Approx(y[i]).epsilon(1e-12));
  }

  auto store = make_store({{"x", {1, 6}}});
  const double err = check([](Tape& t) {
    return weighted_sum(t, t.softmax_row(t.param("x")));
  }, store);
  CHECK(err < 1e-8);
}

TEST_CASE("shape manipulation gradients") {
  auto store = make_store({{"a", {3, 4}}, {"b", {3, 2}}, {"r1", {1, 5}}, {"r2", {1, 5}}});
  double err = check([](Tape& t) {
    return weighted_sum(t, t.concat_cols({t.param("a"), t.param("b")}));
  }, store);
  CHECK(err < 1e-8);
  err = check([](Tape& t) {
    return weighted_sum(t, t.stack_rows({t.param("r1"), t.param("r2"), t.param("r1")}));
  }, store);
  CHECK(err < 1e-8);
  err = check([](Tape& t) {
    return weighted_sum(t, t.rows(t.param("a"), {2, 0, 2}));
  }, store);
  CHECK(err < 1e-8);
  err = check([](Tape& t) {
    return weighted_sum(t, t.slice_cols(t.param("a"), 1, 2));
  }, store);
  CHECK(err < 1e-8);
}

TEST_CASE("reduction gradients") {
  auto store = make_store({{"a", {3, 4}}, {"b", {3, 4}}});
  for (int op = 0; op < 4; ++op) {
    const double err = check([op](Tape& t) {
      Tape::Ref a = t.param("a");
      switch (op) {
        case 0: return t.sum_all(a);
        case 1: return t.mean_all(a);
        case 2: return t.sq_norm(a);
        default: return t.sq_dist(a, t.param("b"));
      }
    }, store);
    CHECK(err < 1e-8);
  }
}

TEST_CASE("conv2d value against direct computation") {
  // 1x3x3x1 input, 2x2 kernel, stride 1, no padding.
  Tensor in({1, 3, 3, 1});
  for (int i = 0; i < 9; ++i) in[i] = i + 1;
  Tensor k({2, 2, 1, 1});
  k[0] = 1.0; k[1] = 0.0; k[2] = 0.0; k[3] = -1.0;  // difference kernel
  Tensor b({1, 1});
  b[0] = 0.5;

  Tape tape;
  Tape::Ref out = tape.conv2d(tape.constant(in), tape.constant(k), tape.constant(b), 1, 0);
  const Tensor& y = tape.value(out);
  REQUIRE(y.shape == std::vector<int>({1, 2, 2, 1}));
  // out[oh][ow] = in[oh][ow] - in[oh+1][ow+1] + 0.5
  CHECK(y[0] == doctest::Approx(1.0 - 5.0 + 0.5));
  CHECK(y[1] == doctest::Approx(2.0 - 6.0 + 0.5));
  CHECK(y[2] == doctest::Approx(4.0 - 8.0 + 0.5));
  CHECK(y[3] == doctest::Approx(5.0 - 9.0 + 0.5));
}

TEST_CASE("conv2d output geometry with stride and padding") {
  Tape tape;
  Tensor in({2, 32, 32, 3});
  Tensor k({3, 3, 3, 16});
  Tensor b({1, 16});
  Tape::Ref out = tape.conv2d(tape.constant(in), tape.constant(k), tape.constant(b), 2, 1);
  CHECK(tape.value(out).shape == std::vector<int>({2, 16, 16, 16}));
}

TEST_CASE("conv2d gradient") {
  ParamStore store;
  Rng rng(11);
  store.add("in", Tensor::uniform({2, 5, 6, 3}, -1.0, 1.0, rng));
  store.add("k", Tensor::uniform({3, 3, 3, 4}, -0.5, 0.5, rng));
  store.add("b", Tensor::uniform({1, 4}, -0.5, 0.5, rng));
  for (auto [stride, pad] : {std::pair{1, 0}, {2, 1}, {1, 1}}) {
    const double err = check([stride = stride, pad = pad](Tape& t) {
      return weighted_sum(t, t.conv2d(t.param("in"), t.param("k"), t.param("b"),
                                      stride, pad));
    }, store);
    CHECK(err < 1e-7);
  }
}

TEST_CASE("conv2d rejects bad geometry") {
  Tape tape;
  Tape::Ref in = tape.constant(Tensor({1, 4, 4, 2}));
  Tape::Ref k = tape.constant(Tensor({3, 3, 2, 4}));
  Tape::Ref b = tape.constant(Tensor({1, 4}));
  CHECK_THROWS_AS(tape.conv2d(in, k, b, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(tape.conv2d(in, k, b, 1, -1), std::invalid_argument);
  Tape::Ref kbig = tape.constant(Tensor({7, 7, 2, 4}));
  CHECK_THROWS_AS(tape.conv2d(in, kbig, b, 1, 0), std::invalid_argument);
  Tape::Ref kmis = tape.constant(Tensor({3, 3, 5, 4}));
  CHECK_THROWS_AS(tape.conv2d(in, kmis, b, 1, 0), std::invalid_argument);
}

TEST_CASE("mmd of a set with itself is zero") {
  Rng rng(3);
  Tensor z = Tensor::normal({8, 4}, 0.0, 1.0, rng);
  Tape tape;
  Tape::Ref m = tape.mmd_biased(tape.constant(z), z, 1.0);
  CHECK(tape.scalar_value(m) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("mmd closed form for two single points") {
  // MMD^2 = k(x,x) + k(y,y) - 2 k(x,y) = 2 (1 - exp(-d^2 / (2 sigma^2)))
  Tensor x = Tensor::row({1.0, 0.0});
  Tensor y = Tensor::row({0.0, 0.0});
  const double sigma = 0.7;
  Tape tape;
  Tape::Ref m = tape.mmd_biased(tape.constant(x), y, sigma);
  const double expected = 2.0 * (1.0 - std::exp(-1.0 / (2.0 * sigma * sigma)));
  CHECK(tape.scalar_value(m) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("mmd gradient") {
  Rng rng(17);
  ParamStore store;
  store.add("z", Tensor::normal({6, 3}, 0.0, 1.0, rng));
  Tensor prior = Tensor::normal({9, 3}, 0.0, 1.0, rng);
  const double err = check([prior](Tape& t) {
    return t.mmd_biased(t.param("z"), prior, 0.9);
  }, store);
  CHECK(err < 1e-8);
}

TEST_CASE("chained graph gradient") {
  auto store = make_store({{"w1", {4, 8}}, {"b1", {1, 8}}, {"w2", {8, 3}}, {"b2", {1, 3}}});
  Rng rng(21);
  Tensor x = Tensor::uniform({5, 4}, -1.0, 1.0, rng);
  const double err = check([x](Tape& t) {
    Tape::Ref h = t.activation(
        t.add_row(t.matmul(t.constant(x), t.param("w1")), t.param("b1")),
        Activation::tanh);
    Tape::Ref y = t.add_row(t.matmul(h, t.param("w2")), t.param("b2"));
    return t.sq_norm(y);
  }, store);
  CHECK(err < 1e-7);
}

TEST_CASE("multiple backward seeds accumulate additively") {
  ParamStore store;
  store.add("x", Tensor::row({2.0, 3.0}));
  Tape tape(&store);
  Tape::Ref x = tape.param("x");
  Tape::Ref a = tape.sq_norm(x);                    // d/dx = 2x
  Tape::Ref b = tape.sum_all(x);                    // d/dx = 1
  tape.backward({{a, Tensor::scalar(1.0)}, {b, Tensor::scalar(10.0)}});
  CHECK(store.grad("x")[0] == doctest::Approx(2.0 * 2.0 + 10.0));
  CHECK(store.grad("x")[1] == doctest::Approx(2.0 * 3.0 + 10.0));
}

TEST_CASE("repeated param use accumulates through one leaf") {
  ParamStore store;
  store.add("w", Tensor::scalar(3.0));
  Tape tape(&store);
  Tape::Ref w1 = tape.param("w");
  Tape::Ref w2 = tape.param("w");
  CHECK(w1 == w2);  // cached leaf
  Tape::Ref y = tape.mul(w1, w2);  // y = w^2, dy/dw = 2w
  tape.backward(y);
  CHECK(store.grad("w")[0] == doctest::Approx(6.0));
}

TEST_CASE("shape mismatches throw") {
  Tape tape;
  Tape::Ref a = tape.constant(Tensor({2, 3}));
  Tape::Ref b = tape.constant(Tensor({2, 4}));
  CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.rows(a, {5}), std::invalid_argument);
  CHECK_THROWS_AS(tape.slice_cols(a, 2, 5), std::invalid_argument);
  CHECK_THROWS_AS(tape.backward(a), std::invalid_argument);  // non-scalar loss
}

TEST_CASE("grad_check validates its inputs") {
  ParamStore store;
  store.add("x", Tensor::scalar(1.0));
  GradCheckConfig cfg;
  cfg.step = 0.0;
  CHECK_THROWS_AS(grad_check([](Tape& t) { return t.param("x"); }, store, cfg),
                  std::invalid_argument);
  cfg.step = 1e-6;
  CHECK_THROWS_AS(grad_check([](Tape& t) {
    return t.mul(t.param("x"), t.constant(Tensor::scalar(
        std::numeric_limits<double>::infinity())));
  }, store, cfg), std::runtime_error);
}

TEST_CASE("grad_check sampled probes stay within tensor") {
  auto store = make_store({{"a", {10, 10}}});
  GradCheckConfig cfg;
  cfg.step = 1e-6;
  cfg.probes_per_param = 7;
  const auto result = grad_check([](Tape& t) { return t.sq_norm(t.param("a")); },
                                 store, cfg);
  CHECK(result.probes == 7);
  CHECK(result.max_rel_err < 1e-8);
}
