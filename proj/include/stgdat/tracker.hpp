#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stgdat/context_maps.hpp"
#include "stgdat/data_io.hpp"
#include "stgdat/kinematics.hpp"
#include "stgdat/trainer.hpp"

namespace stgdat::track {

// Which process model drives the prior (prediction) update:
//   model - the learned predictor, linearized through the bicycle step
//   cvm   - constant velocity, state (x, y, vx, vy)
//   cam   - constant acceleration, state (x, y, vx, vy, ax, ay)
enum class ProcessMode { model, cvm, cam };

ProcessMode process_mode_from_string(const std::string& s);
std::string to_string(ProcessMode mode);

// State dimension per mode: model 5 (x, y, psi, v, beta), cvm 4, cam 6.
int state_dim(ProcessMode mode);

// One tracked target: Gaussian belief plus bookkeeping.
struct TrackState {
  int id = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int steps_since_measurement = 0;

  Vec2 position() const { return {mean(0), mean(1)}; }
  // Estimated velocity vector in the mode's parameterization.
  Vec2 velocity(ProcessMode mode) const;
};

// Position-only linear measurement with PSD noise covariance.
struct MeasurementModel {
  Eigen::Matrix2d r = Eigen::Matrix2d::Identity() * 1e-4;
  void validate() const;  // throws unless r is symmetric PSD
};

// Additive process noise for the linear baselines (diagonal).
struct BaselineNoise {
  double q_pos = 1e-6;
  double q_vel = 1e-4;
  double q_acc = 1e-4;
  Eigen::MatrixXd q(ProcessMode mode) const;
};

// Constant-velocity / constant-acceleration transition matrices.
Eigen::MatrixXd cvm_transition(double dt);  // 4 x 4
Eigen::MatrixXd cam_transition(double dt);  // 6 x 6

// Linear prior update: mean <- F mean, cov <- F cov F^T + Q.
void prior_update_linear(TrackState& t, ProcessMode mode, double dt,
                         const BaselineNoise& noise);

// One-step control distribution per tracked vehicle from the learned model,
// conditioned jointly on every target's filtered history window.
struct ModelStep {
  kin::ControlInput mu_u;
  Eigen::Matrix2d cov_u = Eigen::Matrix2d::Zero();
};
std::vector<ModelStep> model_controls(model::Model& m,
                                      const data::HistoryWindow& window,
                                      const ctx::MapRegistry* registry);

// Model-mode prior update: delegates to the linearized bicycle propagation
// on the 5-state belief.
void prior_update_model(TrackState& t, const ModelStep& step,
                        const kin::BicycleParams& p);

// Position measurement update (Joseph form; the covariance trace never
// increases). Throws std::invalid_argument on a non-finite measurement and
// std::runtime_error on a singular innovation covariance.
void measurement_update(TrackState& t, const Vec2& z, const Eigen::Matrix2d& r);

struct TrackingConfig {
  ProcessMode mode = ProcessMode::cvm;
  MeasurementModel measurement;
  BaselineNoise process_noise;
  double meas_noise_std = 0.0;  // std of the simulated position observations
  std::uint64_t seed = 0;
  // Inclusive [first, last] step ranges with no measurements at all.
  std::vector<std::pair<int, int>> occlusions;
  // model mode only:
  model::Model* predictor = nullptr;
  const ctx::MapRegistry* registry = nullptr;
  // Initial covariance diagonal.
  double init_pos_var = 1e-4;
  double init_vel_var = 1e-2;
  double init_acc_var = 1e-2;
  double init_psi_var = 1e-4;
  double init_beta_var = 1e-4;
  void validate() const;
};

struct TrackingReport {
  std::string mode;
  double position_rmse = 0.0;
  double velocity_rmse = 0.0;
  std::vector<double> step_position_rmse;  // one entry per tracked step
  std::vector<double> step_velocity_rmse;
  int n_steps = 0;
  int n_targets = 0;
  std::string to_json() const;
};

// Runs the recursive filter over one scene: the first history_steps points
// of every agent initialize the tracks (ground truth), then each later step
// performs a prior update and, outside occlusion windows, a measurement
// update with simulated observations truth + N(0, meas_noise_std^2 I).
// Scores RMSE of position and velocity against ground truth. In model mode
// the scene's history length and dt must match the predictor.
TrackingReport run_tracking(const data::SceneSample& scene,
                            const TrackingConfig& cfg);

}  // namespace stgdat::track
