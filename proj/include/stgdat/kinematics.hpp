#pragma once

#include <Eigen/Dense>
#include <vector>

#include "stgdat/geometry.hpp"

namespace stgdat {
class Rng;
}

namespace stgdat::kin {

struct BicycleParams {
  double l_r = 1.5;          // rear axle to center of mass, m
  double dt = 0.5;           // integration step, s
  double a_max = 5.0;        // acceleration saturation bound, m/s^2
  double beta_dot_max = 0.6; // slip-angle rate saturation bound, rad/s
  void validate() const;
};

// Vehicle state s = (x, y, psi, v, beta): position, heading, speed and slip
// angle of the velocity vector relative to the heading.
struct VehicleState {
  double x = 0.0, y = 0.0;
  double psi = 0.0;
  double v = 0.0;
  double beta = 0.0;

  Vec2 pos() const { return {x, y}; }
  Eigen::Matrix<double, 5, 1> vec() const;
  static VehicleState from_vec(const Eigen::Matrix<double, 5, 1>& m);
  bool finite() const;
};

struct ControlInput {
  double a = 0.0;         // acceleration, m/s^2
  double beta_dot = 0.0;  // slip-angle rate, rad/s
};

// Smooth saturation: bound * tanh(raw / bound), strictly inside the bounds.
ControlInput saturate(double a_raw, double beta_dot_raw, const BicycleParams& p);

// One step of the discrete kinematic bicycle model:
//   x'    = x + v cos(psi + beta) dt
//   y'    = y + v sin(psi + beta) dt
//   psi'  = psi + (v / l_r) sin(beta) dt
//   v'    = v + a dt
//   beta' = beta + beta_dot dt
// Angles are wrapped to [-pi, pi]. Throws on non-finite input.
VehicleState bicycle_step(const VehicleState& s, const ControlInput& u,
                          const BicycleParams& p);

using Mat5 = Eigen::Matrix<double, 5, 5>;
using Mat52 = Eigen::Matrix<double, 5, 2>;

// Analytic Jacobians of bicycle_step with respect to state and control,
// evaluated at (s, any control). The control enters linearly, so Df_u is
// constant: only the v and beta rows are nonzero, each dt.
void jacobians(const VehicleState& s, const BicycleParams& p, Mat5& df_s, Mat52& df_u);

struct GaussianBelief {
  Eigen::Matrix<double, 5, 1> mean = Eigen::Matrix<double, 5, 1>::Zero();
  Mat5 cov = Mat5::Zero();
};

// Linearized (EKF-style) uncertainty propagation through one bicycle step:
// mean via the nonlinear step, covariance via Df_s cov Df_s^T + Df_u cov_u
// Df_u^T, symmetrized and eigenvalue-floored at zero. Throws on non-PSD
// inputs. The control distribution is over saturated controls.
GaussianBelief propagate_gaussian(const GaussianBelief& belief, const ControlInput& mu_u,
                                  const Eigen::Matrix2d& cov_u, const BicycleParams& p);

// Particle-based propagation: each particle draws its own control from
// N(mu_u, cov_u) and steps through the full nonlinear model. Particle count is
// preserved. Requires at least one particle.
void propagate_monte_carlo(std::vector<VehicleState>& particles, const ControlInput& mu_u,
                           const Eigen::Matrix2d& cov_u, Rng& rng,
                           const BicycleParams& p);

}  // namespace stgdat::kin
