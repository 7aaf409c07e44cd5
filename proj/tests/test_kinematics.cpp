#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "stgdat/kinematics.hpp"
#include "stgdat/rng.hpp"

using namespace stgdat;
using namespace stgdat::kin;

namespace {

VehicleState random_state(Rng& rng) {
  VehicleState s;
  s.x = rng.uniform(-20, 20);
  s.y = rng.uniform(-20, 20);
  s.psi = rng.uniform(-3.0, 3.0);
  s.v = rng.uniform(0.0, 15.0);
  s.beta = rng.uniform(-0.5, 0.5);
  return s;
}

ControlInput random_control(Rng& rng) {
  return {rng.uniform(-4.0, 4.0), rng.uniform(-0.5, 0.5)};
}

}  // namespace

TEST_CASE("single step worked example") {
  BicycleParams p;
  p.l_r = 1.5;
  p.dt = 0.1;
  VehicleState s;
  s.x = 0; s.y = 0; s.psi = 0; s.v = 2.0; s.beta = 0.1;
  const VehicleState next = bicycle_step(s, {0.0, 0.0}, p);
  CHECK(next.x == doctest::Approx(0.1990008).epsilon(1e-6));
  CHECK(next.y == doctest::Approx(0.0199667).epsilon(1e-6));
  CHECK(next.psi == doctest::Approx(0.0133111).epsilon(1e-5));
  CHECK(next.v == doctest::Approx(2.0));
  CHECK(next.beta == doctest::Approx(0.1));
}

TEST_CASE("controls integrate linearly and angles wrap") {
  BicycleParams p;
  p.dt = 0.5;
  VehicleState s;
  s.psi = 3.1;  // will step past +pi
  s.v = 10.0;
  s.beta = 0.3;
  const VehicleState next = bicycle_step(s, {2.0, -0.1}, p);
  CHECK(next.v == doctest::Approx(11.0));
  CHECK(next.beta == doctest::Approx(0.25));
  CHECK(next.psi <= 3.14159265358979);
  CHECK(next.psi >= -3.14159265358979);
  // Raw increment 3.1 + (10/1.5) sin(0.3) 0.5 = 4.085... -> wrapped negative.
  CHECK(next.psi < 0.0);

  VehicleState bad = s;
  bad.v = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bicycle_step(bad, {0, 0}, p), std::invalid_argument);
}

TEST_CASE("saturation maps raw controls into bounds smoothly") {
  BicycleParams p;  // a_max = 5, beta_dot_max = 0.6
  const ControlInput at_bound = saturate(5.0, 0.6, p);
  CHECK(at_bound.a == doctest::Approx(5.0 * std::tanh(1.0)));
  CHECK(at_bound.beta_dot == doctest::Approx(0.6 * std::tanh(1.0)));
  // Large raw values approach but never exceed the bound. (At extreme
  // arguments tanh rounds to exactly 1 in doubles, so probe strictness at a
  // moderate multiple of the bound.)
  const ControlInput big = saturate(40.0, -4.8, p);
  CHECK(big.a < 5.0);
  CHECK(big.a > 4.99);
  CHECK(big.beta_dot > -0.6);
  CHECK(big.beta_dot < -0.599);
  const ControlInput huge = saturate(1e6, -1e6, p);
  CHECK(huge.a <= 5.0);
  CHECK(huge.beta_dot >= -0.6);
  // Near zero the map is close to identity.
  const ControlInput tiny = saturate(1e-4, -1e-4, p);
  CHECK(tiny.a == doctest::Approx(1e-4).epsilon(1e-6));
  CHECK(tiny.beta_dot == doctest::Approx(-1e-4).epsilon(1e-6));
  // Odd symmetry.
  const ControlInput pos = saturate(2.0, 0.3, p);
  const ControlInput neg = saturate(-2.0, -0.3, p);
  CHECK(pos.a == doctest::Approx(-neg.a));
  CHECK(pos.beta_dot == doctest::Approx(-neg.beta_dot));
}

TEST_CASE("analytic jacobians match finite differences") {
  BicycleParams p;
  p.dt = 0.5;
  Rng rng(101);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const VehicleState s = random_state(rng);
    const ControlInput u = random_control(rng);
    Eigen::Matrix<double, 5, 5> df_s;
    Eigen::Matrix<double, 5, 2> df_u;
    jacobians(s, p, df_s, df_u);
    // State jacobian by central differences.
    for (int j = 0; j < 5; ++j) {
      Eigen::Matrix<double, 5, 1> vp = s.vec(), vm = s.vec();
      vp(j) += h;
      vm(j) -= h;
      const auto fp = bicycle_step(VehicleState::from_vec(vp), u, p).vec();
      const auto fm = bicycle_step(VehicleState::from_vec(vm), u, p).vec();
      for (int i = 0; i < 5; ++i) {
        const double num = (fp(i) - fm(i)) / (2 * h);
        worst = std::max(worst, std::abs(num - df_s(i, j)));
      }
    }
    // Control jacobian.
    for (int j = 0; j < 2; ++j) {
      ControlInput up = u, um = u;
      (j == 0 ? up.a : up.beta_dot) += h;
      (j == 0 ? um.a : um.beta_dot) -= h;
      const auto fp = bicycle_step(s, up, p).vec();
      const auto fm = bicycle_step(s, um, p).vec();
      for (int i = 0; i < 5; ++i) {
        const double num = (fp(i) - fm(i)) / (2 * h);
        worst = std::max(worst, std::abs(num - df_u(i, j)));
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("control jacobian structure") {
  BicycleParams p;
  p.dt = 0.5;
  Rng rng(7);
  const VehicleState s = random_state(rng);
  Eigen::Matrix<double, 5, 5> df_s;
  Eigen::Matrix<double, 5, 2> df_u;
  jacobians(s, p, df_s, df_u);
  // Acceleration only feeds speed, slip rate only feeds slip, both scaled by dt.
  CHECK(df_u(3, 0) == doctest::Approx(p.dt));
  CHECK(df_u(4, 1) == doctest::Approx(p.dt));
  CHECK(df_u.cwiseAbs().sum() == doctest::Approx(2 * p.dt));
  // Position rows never depend on position columns other than identity.
  CHECK(df_s(0, 0) == doctest::Approx(1.0));
  CHECK(df_s(1, 1) == doctest::Approx(1.0));
  CHECK(df_s(0, 1) == doctest::Approx(0.0));
  CHECK(df_s(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("gaussian propagation with zero input covariances is deterministic") {
  BicycleParams p;
  p.dt = 0.5;
  Rng rng(5);
  const VehicleState s = random_state(rng);
  GaussianBelief b;
  b.mean = s.vec();
  b.cov.setZero();
  const ControlInput u = random_control(rng);
  const GaussianBelief next =
      propagate_gaussian(b, u, Eigen::Matrix2d::Zero(), p);
  const auto det = bicycle_step(s, u, p).vec();
  CHECK((next.mean - det).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(next.cov.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("control noise enters through speed and slip only") {
  BicycleParams p;
  p.dt = 0.5;
  GaussianBelief b;
  b.mean << 0, 0, 0.2, 4.0, 0.05;
  b.cov.setZero();
  Eigen::Matrix2d suu;
  suu << 0.09, 0.01, 0.01, 0.04;
  const GaussianBelief next = propagate_gaussian(b, {1.0, 0.0}, suu, p);
  const double dt2 = p.dt * p.dt;
  CHECK(next.cov(3, 3) == doctest::Approx(0.09 * dt2));
  CHECK(next.cov(4, 4) == doctest::Approx(0.04 * dt2));
  CHECK(next.cov(3, 4) == doctest::Approx(0.01 * dt2));
  CHECK(next.cov(4, 3) == doctest::Approx(0.01 * dt2));
  // Positions and heading receive nothing on the first step.
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 5; ++j) {
      CHECK(std::abs(next.cov(i, j)) < 1e-15);
    }
  }
}

TEST_CASE("propagation validates covariance input") {
  BicycleParams p;
  GaussianBelief b;
  b.mean.setZero();
  b.mean(3) = 1.0;
  b.cov.setIdentity();
  b.cov(0, 1) = 0.5;  // asymmetric
  CHECK_THROWS_AS(propagate_gaussian(b, {0, 0}, Eigen::Matrix2d::Zero(), p),
                  std::invalid_argument);
  b.cov.setIdentity();
  b.cov(2, 2) = -0.1;  // indefinite
  CHECK_THROWS_AS(propagate_gaussian(b, {0, 0}, Eigen::Matrix2d::Zero(), p),
                  std::invalid_argument);
  Eigen::Matrix2d bad_suu;
  bad_suu << 1.0, 2.0, 2.0, 1.0;  // indefinite
  b.cov.setIdentity();
  CHECK_THROWS_AS(propagate_gaussian(b, {0, 0}, bad_suu, p),
                  std::invalid_argument);
}

TEST_CASE("propagated covariance stays symmetric psd over a rollout") {
  BicycleParams p;
  p.dt = 0.5;
  Rng rng(77);
  GaussianBelief b;
  b.mean << 0, 0, 0.1, 6.0, 0.0;
  b.cov = Eigen::Matrix<double, 5, 5>::Identity() * 0.01;
  Eigen::Matrix2d suu;
  suu << 0.04, 0.0, 0.0, 0.002;
  for (int k = 0; k < 12; ++k) {
    const ControlInput u = random_control(rng);
    b = propagate_gaussian(b, u, suu, p);
    CHECK((b.cov - b.cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 5, 5>> es(b.cov);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
    CHECK(b.cov.allFinite());
  }
}

TEST_CASE("monte carlo with zero control covariance reproduces the deterministic step") {
  BicycleParams p;
  p.dt = 0.5;
  Rng rng(3);
  const VehicleState s = random_state(rng);
  const ControlInput u = random_control(rng);
  std::vector<VehicleState> particles(50, s);
  propagate_monte_carlo(particles, u, Eigen::Matrix2d::Zero(), rng, p);
  REQUIRE(particles.size() == 50);
  const auto det = bicycle_step(s, u, p).vec();
  for (const VehicleState& q : particles) {
    CHECK((q.vec() - det).cwiseAbs().maxCoeff() < 1e-12);
  }
  std::vector<VehicleState> empty;
  CHECK_THROWS_AS(
      propagate_monte_carlo(empty, u, Eigen::Matrix2d::Zero(), rng, p),
      std::invalid_argument);
}

TEST_CASE("monte carlo agrees with linearized propagation") {
  BicycleParams p;
  p.dt = 0.5;
  VehicleState s;
  s.x = 0; s.y = 0; s.psi = 0.3; s.v = 8.0; s.beta = 0.02;
  const ControlInput u{0.5, 0.01};
  Eigen::Matrix2d suu;
  suu << 0.04, 0.005, 0.005, 0.001;

  GaussianBelief b;
  b.mean = s.vec();
  b.cov.setZero();
  const GaussianBelief lin = propagate_gaussian(b, u, suu, p);

  Rng rng(2024);
  const int n = 1000000;
  std::vector<VehicleState> particles(n, s);
  propagate_monte_carlo(particles, u, suu, rng, p);
  REQUIRE(particles.size() == static_cast<std::size_t>(n));

  Eigen::Matrix<double, 5, 1> mean = Eigen::Matrix<double, 5, 1>::Zero();
  for (const VehicleState& q : particles) mean += q.vec();
  mean /= n;
  Eigen::Matrix<double, 5, 5> cov = Eigen::Matrix<double, 5, 5>::Zero();
  for (const VehicleState& q : particles) {
    const Eigen::Matrix<double, 5, 1> d = q.vec() - mean;
    cov += d * d.transpose();
  }
  cov /= (n - 1);

  // Mean within 3 standard errors per coordinate (controls enter linearly, so
  // the linearized mean is exact for this one-step distribution). The 1e-8
  // floor absorbs summation round-off on the coordinates that receive no
  // noise in a single step and are therefore identical across particles.
  for (int i = 0; i < 5; ++i) {
    const double se = std::sqrt(std::max(cov(i, i), 0.0) / n);
    CHECK(std::abs(mean(i) - lin.mean(i)) < 3.0 * se + 1e-8);
  }
  // Covariance within 5% Frobenius distance.
  const double rel = (cov - lin.cov).norm() / lin.cov.norm();
  CHECK(rel < 0.05);
}

TEST_CASE("straight line cruise is invariant") {
  BicycleParams p;
  p.dt = 0.5;
  VehicleState s;
  s.x = 0; s.y = 2.0; s.psi = 0; s.v = 5.0; s.beta = 0;
  for (int k = 1; k <= 10; ++k) {
    s = bicycle_step(s, {0, 0}, p);
    CHECK(s.x == doctest::Approx(2.5 * k));
    CHECK(s.y == doctest::Approx(2.0));
    CHECK(s.psi == doctest::Approx(0.0));
    CHECK(s.v == doctest::Approx(5.0));
  }
}

TEST_CASE("parameter validation") {
  BicycleParams p;
  p.l_r = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = BicycleParams{};
  p.dt = -0.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = BicycleParams{};
  p.a_max = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}
