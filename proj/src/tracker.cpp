#include "stgdat/tracker.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "stgdat/rng.hpp"

namespace stgdat::track {

using nlohmann::json;

ProcessMode process_mode_from_string(const std::string& s) {
  if (s == "model") return ProcessMode::model;
  if (s == "cvm") return ProcessMode::cvm;
  if (s == "cam") return ProcessMode::cam;
  throw std::invalid_argument("unknown process mode: " + s);
}

std::string to_string(ProcessMode mode) {
  switch (mode) {
    case ProcessMode::model: return "model";
    case ProcessMode::cvm: return "cvm";
    case ProcessMode::cam: return "cam";
  }
  throw std::invalid_argument("unknown process mode");
}

int state_dim(ProcessMode mode) {
  switch (mode) {
    case ProcessMode::model: return 5;
    case ProcessMode::cvm: return 4;
    case ProcessMode::cam: return 6;
  }
  throw std::invalid_argument("unknown process mode");
}

Vec2 TrackState::velocity(ProcessMode mode) const {
  if (mode == ProcessMode::model) {
    const double course = mean(2) + mean(4);  // heading + slip
    return {mean(3) * std::cos(course), mean(3) * std::sin(course)};
  }
  return {mean(2), mean(3)};
}

void MeasurementModel::validate() const {
  if (!r.allFinite()) throw std::invalid_argument("measurement noise must be finite");
  const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
  if (std::abs(r(0, 1) - r(1, 0)) > 1e-12 * scale) {
    throw std::invalid_argument("measurement noise must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(r);
  if (es.eigenvalues().minCoeff() < -1e-12 * scale) {
    throw std::invalid_argument("measurement noise must be PSD");
  }
}

Eigen::MatrixXd BaselineNoise::q(ProcessMode mode) const {
  const int n = state_dim(mode);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  out(0, 0) = out(1, 1) = q_pos;
  out(2, 2) = out(3, 3) = q_vel;
  if (n == 6) out(4, 4) = out(5, 5) = q_acc;
  return out;
}

Eigen::MatrixXd cvm_transition(double dt) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Identity(4, 4);
  f(0, 2) = dt;
  f(1, 3) = dt;
  return f;
}

Eigen::MatrixXd cam_transition(double dt) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Identity(6, 6);
  f(0, 2) = dt;
  f(1, 3) = dt;
  f(0, 4) = 0.5 * dt * dt;
  f(1, 5) = 0.5 * dt * dt;
  f(2, 4) = dt;
  f(3, 5) = dt;
  return f;
}

void prior_update_linear(TrackState& t, ProcessMode mode, double dt,
                         const BaselineNoise& noise) {
  if (mode == ProcessMode::model) {
    throw std::invalid_argument("prior_update_linear: use prior_update_model");
  }
  if (t.mean.size() != state_dim(mode)) {
    throw std::invalid_argument("prior_update_linear: state dimension mismatch");
  }
  const Eigen::MatrixXd f =
      mode == ProcessMode::cvm ? cvm_transition(dt) : cam_transition(dt);
  t.mean = f * t.mean;
  t.cov = f * t.cov * f.transpose() + noise.q(mode);
  t.cov = 0.5 * (t.cov + t.cov.transpose().eval());
  ++t.steps_since_measurement;
}

std::vector<ModelStep> model_controls(model::Model& m,
                                      const data::HistoryWindow& window,
                                      const ctx::MapRegistry* registry) {
  if (!m.kinematic_vehicles()) {
    throw std::invalid_argument(
        "model_controls: tracking needs the kinematic model variant");
  }
  const ctx::ContextMap* map = nullptr;
  if (m.uses_context()) {
    if (registry == nullptr) {
      throw std::invalid_argument("model_controls: context maps required");
    }
    map = &registry->lookup(window.scene_id);
  }
  const Vec2 anchor = model::scene_anchor(window);
  const graph::SceneGraph g = graph::build_history_graph(window, m.cfg.graph);
  Tape t(&m.store);
  const auto vh = model::encode_graph(t, m, g, map, anchor);
  const Tensor z0 = Tensor::zeros({1, m.cfg.latent.latent_dim});

  std::vector<ModelStep> out;
  out.reserve(window.agents.size());
  for (std::size_t a = 0; a < window.agents.size(); ++a) {
    const data::AgentTrajectory& traj = window.agents[a];
    std::vector<data::TrajPoint> hist(traj.points);
    for (data::TrajPoint& p : hist) {
      p.x -= anchor.x;
      p.y -= anchor.y;
    }
    const model::Rollout roll = m.decoder.decode_rollout(
        t, vh[a], t.constant(z0), hist, traj.type, 1, true);
    ModelStep step;
    step.mu_u = roll.steps[0].mu_u;
    step.cov_u(0, 0) = roll.steps[0].sigma_a * roll.steps[0].sigma_a;
    step.cov_u(1, 1) = roll.steps[0].sigma_beta_dot * roll.steps[0].sigma_beta_dot;
    out.push_back(step);
  }
  return out;
}

void prior_update_model(TrackState& t, const ModelStep& step,
                        const kin::BicycleParams& p) {
  if (t.mean.size() != 5) {
    throw std::invalid_argument("prior_update_model: state dimension mismatch");
  }
  kin::GaussianBelief b;
  b.mean = t.mean;
  b.cov = t.cov;
  b = kin::propagate_gaussian(b, step.mu_u, step.cov_u, p);
  t.mean = b.mean;
  t.cov = b.cov;
  ++t.steps_since_measurement;
}

void measurement_update(TrackState& t, const Vec2& z, const Eigen::Matrix2d& r) {
  if (!std::isfinite(z.x) || !std::isfinite(z.y)) {
    throw std::invalid_argument("measurement_update: non-finite measurement");
  }
  const auto n = t.mean.size();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2, n);
  h(0, 0) = 1.0;
  h(1, 1) = 1.0;
  const Eigen::Matrix2d s = h * t.cov * h.transpose() + r;
  const double det = s.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-300) {
    throw std::runtime_error("measurement_update: singular innovation covariance");
  }
  const Eigen::MatrixXd k = t.cov * h.transpose() * s.inverse();
  Eigen::Vector2d resid;
  resid << z.x - t.mean(0), z.y - t.mean(1);
  t.mean += k * resid;
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(n, n) - k * h;
  t.cov = ikh * t.cov * ikh.transpose() + k * r * k.transpose();
  t.cov = 0.5 * (t.cov + t.cov.transpose().eval());
  t.steps_since_measurement = 0;
}

void TrackingConfig::validate() const {
  measurement.validate();
  if (meas_noise_std < 0.0) {
    throw std::invalid_argument("TrackingConfig: negative measurement noise");
  }
  if (process_noise.q_pos < 0.0 || process_noise.q_vel < 0.0 ||
      process_noise.q_acc < 0.0) {
    throw std::invalid_argument("TrackingConfig: negative process noise");
  }
  if (init_pos_var < 0.0 || init_vel_var < 0.0 || init_acc_var < 0.0 ||
      init_psi_var < 0.0 || init_beta_var < 0.0) {
    throw std::invalid_argument("TrackingConfig: negative initial variance");
  }
  for (const auto& [first, last] : occlusions) {
    if (first > last) {
      throw std::invalid_argument("TrackingConfig: occlusion range reversed");
    }
  }
  if (mode == ProcessMode::model && predictor == nullptr) {
    throw std::invalid_argument("TrackingConfig: model mode needs a predictor");
  }
}

std::string TrackingReport::to_json() const {
  json j;
  j["mode"] = mode;
  j["position_rmse"] = position_rmse;
  j["velocity_rmse"] = velocity_rmse;
  j["step_position_rmse"] = step_position_rmse;
  j["step_velocity_rmse"] = step_velocity_rmse;
  j["n_steps"] = n_steps;
  j["n_targets"] = n_targets;
  return j.dump(2);
}

namespace {

bool occluded(const std::vector<std::pair<int, int>>& windows, int step) {
  for (const auto& [first, last] : windows) {
    if (step >= first && step <= last) return true;
  }
  return false;
}

Vec2 truth_velocity(const data::TrajPoint& p) {
  return {p.v * std::cos(p.psi), p.v * std::sin(p.psi)};
}

TrackState init_track(const data::AgentTrajectory& traj, int last_init,
                      double dt, const TrackingConfig& cfg) {
  const data::TrajPoint& p = traj.points[static_cast<std::size_t>(last_init)];
  TrackState t;
  t.id = traj.agent_id;
  const int n = state_dim(cfg.mode);
  t.mean = Eigen::VectorXd::Zero(n);
  t.cov = Eigen::MatrixXd::Zero(n, n);
  t.mean(0) = p.x;
  t.mean(1) = p.y;
  t.cov(0, 0) = t.cov(1, 1) = cfg.init_pos_var;
  switch (cfg.mode) {
    case ProcessMode::model:
      t.mean(2) = p.psi;
      t.mean(3) = p.v;
      t.mean(4) = 0.0;  // slip is unobserved
      t.cov(2, 2) = cfg.init_psi_var;
      t.cov(3, 3) = cfg.init_vel_var;
      t.cov(4, 4) = cfg.init_beta_var;
      break;
    case ProcessMode::cvm: {
      const Vec2 v = truth_velocity(p);
      t.mean(2) = v.x;
      t.mean(3) = v.y;
      t.cov(2, 2) = t.cov(3, 3) = cfg.init_vel_var;
      break;
    }
    case ProcessMode::cam: {
      const Vec2 v = truth_velocity(p);
      const Vec2 v_prev =
          truth_velocity(traj.points[static_cast<std::size_t>(last_init - 1)]);
      t.mean(2) = v.x;
      t.mean(3) = v.y;
      t.mean(4) = (v.x - v_prev.x) / dt;
      t.mean(5) = (v.y - v_prev.y) / dt;
      t.cov(2, 2) = t.cov(3, 3) = cfg.init_vel_var;
      t.cov(4, 4) = t.cov(5, 5) = cfg.init_acc_var;
      break;
    }
  }
  return t;
}

}  // namespace

TrackingReport run_tracking(const data::SceneSample& scene,
                            const TrackingConfig& cfg) {
  cfg.validate();
  if (scene.agents.empty()) {
    throw std::invalid_argument("run_tracking: empty scene");
  }
  const int t_h = scene.horizon.history_steps;
  const int total = scene.horizon.total_steps();
  const double dt = scene.horizon.dt;
  if (t_h < 2 || total <= t_h) {
    throw std::invalid_argument(
        "run_tracking: need at least two init steps and one tracked step");
  }
  for (const data::AgentTrajectory& a : scene.agents) {
    if (static_cast<int>(a.points.size()) != total) {
      throw std::invalid_argument("run_tracking: agent does not span the scene");
    }
  }
  if (cfg.mode == ProcessMode::model) {
    if (cfg.predictor->cfg.horizon.history_steps != t_h ||
        cfg.predictor->cfg.horizon.dt != dt) {
      throw std::invalid_argument(
          "run_tracking: scene horizon does not match the predictor");
    }
    for (const data::AgentTrajectory& a : scene.agents) {
      if (a.type != data::AgentType::vehicle) {
        throw std::invalid_argument(
            "run_tracking: model mode tracks vehicles only");
      }
    }
  }

  const std::size_t n_targets = scene.agents.size();
  std::vector<TrackState> tracks;
  tracks.reserve(n_targets);
  for (const data::AgentTrajectory& a : scene.agents) {
    tracks.push_back(init_track(a, t_h - 1, dt, cfg));
  }

  // Filtered history windows for the model-mode predictor, seeded with the
  // ground-truth initialization segment.
  std::vector<std::vector<data::TrajPoint>> histories(n_targets);
  if (cfg.mode == ProcessMode::model) {
    for (std::size_t a = 0; a < n_targets; ++a) {
      histories[a].assign(scene.agents[a].points.begin(),
                          scene.agents[a].points.begin() + t_h);
    }
  }

  Rng meas_rng = Rng(cfg.seed).derive("meas");
  TrackingReport rep;
  rep.mode = to_string(cfg.mode);
  rep.n_targets = static_cast<int>(n_targets);

  double pos_sq_sum = 0.0;
  double vel_sq_sum = 0.0;
  for (int k = t_h; k < total; ++k) {
    // Prior update.
    if (cfg.mode == ProcessMode::model) {
      data::HistoryWindow window;
      window.scene_id = scene.scene_id;
      window.horizon = cfg.predictor->cfg.horizon;
      for (std::size_t a = 0; a < n_targets; ++a) {
        data::AgentTrajectory traj;
        traj.agent_id = scene.agents[a].agent_id;
        traj.type = scene.agents[a].type;
        traj.points = histories[a];
        window.agents.push_back(std::move(traj));
      }
      const std::vector<ModelStep> steps =
          model_controls(*cfg.predictor, window, cfg.registry);
      for (std::size_t a = 0; a < n_targets; ++a) {
        prior_update_model(tracks[a], steps[a], cfg.predictor->cfg.decoder.bicycle);
      }
    } else {
      for (TrackState& t : tracks) {
        prior_update_linear(t, cfg.mode, dt, cfg.process_noise);
      }
    }

    // Measurement update outside occlusion windows.
    if (!occluded(cfg.occlusions, k)) {
      for (std::size_t a = 0; a < n_targets; ++a) {
        const data::TrajPoint& p = scene.agents[a].points[static_cast<std::size_t>(k)];
        const Vec2 z{p.x + cfg.meas_noise_std * meas_rng.normal(),
                     p.y + cfg.meas_noise_std * meas_rng.normal()};
        measurement_update(tracks[a], z, cfg.measurement.r);
      }
    }

    // Score against ground truth and extend the filtered histories.
    double step_pos = 0.0;
    double step_vel = 0.0;
    for (std::size_t a = 0; a < n_targets; ++a) {
      const data::TrajPoint& p = scene.agents[a].points[static_cast<std::size_t>(k)];
      const Vec2 est = tracks[a].position();
      const Vec2 vel = tracks[a].velocity(cfg.mode);
      const Vec2 tv = truth_velocity(p);
      const double pe = (est.x - p.x) * (est.x - p.x) + (est.y - p.y) * (est.y - p.y);
      const double ve = (vel.x - tv.x) * (vel.x - tv.x) + (vel.y - tv.y) * (vel.y - tv.y);
      step_pos += pe;
      step_vel += ve;
      if (cfg.mode == ProcessMode::model) {
        data::TrajPoint f;
        f.t = k * dt;
        f.x = tracks[a].mean(0);
        f.y = tracks[a].mean(1);
        f.psi = tracks[a].mean(2);
        f.v = tracks[a].mean(3);
        histories[a].erase(histories[a].begin());
        histories[a].push_back(f);
      }
    }
    pos_sq_sum += step_pos;
    vel_sq_sum += step_vel;
    rep.step_position_rmse.push_back(
        std::sqrt(step_pos / static_cast<double>(n_targets)));
    rep.step_velocity_rmse.push_back(
        std::sqrt(step_vel / static_cast<double>(n_targets)));
    ++rep.n_steps;
  }

  const double denom = static_cast<double>(rep.n_steps) * static_cast<double>(n_targets);
  rep.position_rmse = std::sqrt(pos_sq_sum / denom);
  rep.velocity_rmse = std::sqrt(vel_sq_sum / denom);
  return rep;
}

}  // namespace stgdat::track
