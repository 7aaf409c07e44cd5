#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "stgdat/geometry.hpp"

namespace stgdat::data {

enum class AgentType { vehicle, pedestrian, cyclist };

AgentType agent_type_from_string(const std::string& s);
std::string to_string(AgentType t);

// One time-stamped kinematic sample: position, speed and heading.
struct TrajPoint {
  double t = 0.0;
  double x = 0.0, y = 0.0;
  double v = 0.0;    // speed magnitude, m/s
  double psi = 0.0;  // heading, rad
  Vec2 pos() const { return {x, y}; }
};

struct AgentTrajectory {
  int agent_id = 0;
  AgentType type = AgentType::vehicle;
  std::vector<TrajPoint> points;
};

// ---- CSV ingestion -------------------------------------------------------
//
// Expected columns (header row required, order free):
//   frame_id, agent_id, agent_type, x, y          -- mandatory
//   v, psi                                        -- optional
// agent_type is one of "vehicle", "pedestrian", "cyclist". Unknown extra
// columns are ignored. Time is frame_id * frame_dt. Frames must be strictly
// increasing per agent (duplicates and reordering are input errors).

struct CsvOptions {
  double frame_dt = 0.5;  // seconds represented by one frame_id increment
};

// Throws std::runtime_error naming the file and line on malformed input.
std::vector<AgentTrajectory> load_csv(const std::string& path, const CsvOptions& opt = {});
std::vector<AgentTrajectory> parse_csv(std::istream& in, const CsvOptions& opt,
                                       const std::string& origin);
void write_csv(const std::string& path, const std::vector<AgentTrajectory>& trajectories,
               double frame_dt, bool with_kinematics);

// Fills v (central-difference speed) and psi (forward-displacement direction,
// held at the previous value for displacements under 1e-6 m) from positions;
// used when the source data carries positions only.
void derive_kinematics(AgentTrajectory& traj);

// ---- preprocessing -------------------------------------------------------

// Linear interpolation of every trajectory onto the shared uniform grid
// t0 + k * dt, where t0 is the earliest timestamp in the batch. Headings are
// interpolated along the shortest arc. Endpoints are preserved to within one
// dt (no extrapolation). Throws on dt <= 0.
std::vector<AgentTrajectory> resample(const std::vector<AgentTrajectory>& trajectories,
                                      double dt);

struct HorizonConfig {
  int history_steps = 4;
  int future_steps = 10;
  double dt = 0.5;
  int total_steps() const { return history_steps + future_steps; }
};

// A single training/evaluation window: every agent covers all
// history + future steps on the shared grid.
struct SceneSample {
  std::string scene_id;
  HorizonConfig horizon;
  std::vector<AgentTrajectory> agents;
};

// A sample with the future removed. Prediction entry points accept only this
// type, so future information cannot leak into inference by construction.
struct HistoryWindow {
  std::string scene_id;
  HorizonConfig horizon;
  std::vector<AgentTrajectory> agents;  // horizon.history_steps points each
};

HistoryWindow history_only(const SceneSample& sample);
// Ground-truth future positions per agent, for scoring predictions.
TrackSet future_positions(const SceneSample& sample);

// Slides a window of total_steps over the shared grid (stride one step) and
// keeps, per window, the agents that cover it completely. Windows with no
// covering agent are dropped. Requires resampled input.
std::vector<SceneSample> make_samples(const std::vector<AgentTrajectory>& trajectories,
                                      const HorizonConfig& horizon,
                                      const std::string& scene_id);

// ---- splits ----------------------------------------------------------------

struct SplitResult {
  std::vector<SceneSample> train, val, test;
};

// Splits by scene_id so that windows from one recording never straddle
// subsets. Scene order is shuffled deterministically by seed; counts are
// floor(train_ratio * n) and floor(val_ratio * n), remainder to test.
SplitResult split_by_scene(const std::vector<SceneSample>& samples, double train_ratio,
                           double val_ratio, double test_ratio, std::uint64_t seed);

// ---- displacement metrics --------------------------------------------------

// Average / final displacement error between prediction and truth of
// identical shape. Throws on shape mismatch or empty input.
std::pair<double, double> ade_fde(const TrackSet& prediction, const TrackSet& truth);

struct BestOfK {
  double min_ade = 0.0;
  double min_fde = 0.0;  // FDE of the ADE-minimizing candidate
  int argmin_ade = -1;
};

// Minimum ADE over K candidate predictions, with the FDE of that candidate.
BestOfK best_of_k(const std::vector<TrackSet>& candidates, const TrackSet& truth);

}  // namespace stgdat::data
