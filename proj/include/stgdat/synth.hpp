#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stgdat/data_io.hpp"
#include "stgdat/geometry.hpp"
#include "stgdat/kinematics.hpp"

namespace stgdat::synth {

enum class Archetype { highway, intersection, roundabout };

Archetype archetype_from_string(const std::string& s);
std::string to_string(Archetype a);

struct ScenarioSpec {
  Archetype archetype = Archetype::intersection;
  int n_agents = 2;
  int duration_steps = 40;
  double dt = 0.5;          // seconds per step
  double noise_std = 0.0;   // observation position noise, meters
  std::uint64_t seed = 0;
  // Geometry and speed tunables (defaults give well-conditioned scenes).
  double radius = 10.0;       // roundabout radius, m
  double cruise_speed = 5.0;  // nominal free-flow speed, m/s
  kin::BicycleParams bicycle; // dt is taken from the spec, not from here

  void validate() const;  // throws on infeasible geometry (e.g. radius <= l_r)
};

// Lane centerlines and conflict points, consumed by the map builder and
// emitted as a JSON sidecar next to generated CSVs.
struct SceneGeometry {
  std::vector<std::vector<Vec2>> lane_polylines;
  std::vector<Vec2> conflict_points;
};

// Everything known about one generated agent beyond its trajectory: the exact
// control sequence that reproduces it, and interaction bookkeeping.
struct AgentRollout {
  kin::VehicleState initial;
  std::vector<kin::ControlInput> controls;   // controls[k] moves state k -> k+1
  std::vector<kin::VehicleState> states;     // duration_steps entries
  bool yielded = false;
  double free_flow_speed = 0.0;
  double conflict_speed = std::numeric_limits<double>::quiet_NaN();
};

struct GeneratedScene {
  std::string scene_id;
  double dt = 0.5;
  kin::BicycleParams bicycle;  // parameters the rollouts were integrated with
  std::vector<data::AgentTrajectory> truth;     // exact states
  std::vector<data::AgentTrajectory> observed;  // noisy positions, derived v/psi
  std::vector<AgentRollout> rollouts;           // parallel to truth
  SceneGeometry geometry;
};

// Deterministic scene synthesis. Agents follow archetype rules:
//   highway      - straight lane cruising plus one merging agent that gives
//                  way to main-lane traffic before changing lanes;
//   intersection - straight or turning paths through a crossing, later
//                  arrival yields to the earlier one;
//   roundabout   - one agent circulating at constant radius (exact circular
//                  motion), others entering after yielding to circulating
//                  traffic.
// All vehicle motion is produced by integrating the bicycle model, so every
// trajectory is feasible by construction; noise is added to observations
// only. Throws std::invalid_argument on infeasible specs.
GeneratedScene generate(const ScenarioSpec& spec);

// Re-integrates each agent's recorded control sequence from its initial state
// and returns the largest position deviation from the stored truth (meters).
// Zero up to round-off for any generated scene.
double reintegration_residual(const GeneratedScene& scene);

// Windows the observed trajectories into training samples (see data_io).
std::vector<data::SceneSample> to_samples(const GeneratedScene& scene,
                                          const data::HorizonConfig& horizon);

// Constant-velocity baseline: extrapolates the displacement of the last
// history step. Needs >= 2 history positions.
Track cvm_baseline(const Track& history, int future_steps);
// Constant-acceleration baseline via second differences. Needs >= 3 points.
Track cam_baseline(const Track& history, int future_steps);

}  // namespace stgdat::synth
