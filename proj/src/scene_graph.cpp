#include "stgdat/scene_graph.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace stgdat::graph {

void GraphConfig::validate() const {
  if (!(d > 0.0)) throw std::invalid_argument("edge threshold d must be positive");
}

RelationFeature relation_feature(const AgentPose& i, const AgentPose& j) {
  RelationFeature f;
  f.rel_pos = (j.pos - i.pos).rotated(-i.psi);
  f.rel_vel = (j.vel - i.vel).rotated(-i.psi);
  f.rel_heading = wrap_angle(j.psi - i.psi);
  if (f.rel_heading <= -kPi) f.rel_heading += 2.0 * kPi;  // land in (-pi, pi]
  return f;
}

namespace {

AgentPose pose_at(const data::AgentTrajectory& traj, int step) {
  const data::TrajPoint& pt = traj.points[static_cast<std::size_t>(step)];
  AgentPose p;
  p.pos = {pt.x, pt.y};
  p.vel = {pt.v * std::cos(pt.psi), pt.v * std::sin(pt.psi)};
  p.psi = pt.psi;
  p.type = traj.type;
  return p;
}

SceneGraph build_range(const std::vector<data::AgentTrajectory>& agents,
                       int begin, int end, const GraphConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(agents.size());
  SceneGraph g;
  g.n_agents = n;
  for (int k = begin; k < end; ++k) {
    StepGraph step;
    step.poses.reserve(static_cast<std::size_t>(n));
    for (const auto& a : agents) {
      if (k >= static_cast<int>(a.points.size())) {
        throw std::invalid_argument("agent does not cover the requested steps");
      }
      step.poses.push_back(pose_at(a, k));
    }
    step.edge_index.assign(static_cast<std::size_t>(n) * n, -1);
    step.neighbors.assign(static_cast<std::size_t>(n), {});
    for (int i = 0; i < n; ++i) {
      if (cfg.include_self) step.neighbors[static_cast<std::size_t>(i)].push_back(i);
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        if (distance(step.poses[static_cast<std::size_t>(i)].pos,
                     step.poses[static_cast<std::size_t>(j)].pos) <= cfg.d) {
          Edge e;
          e.from = i;
          e.to = j;
          e.phi = relation_feature(step.poses[static_cast<std::size_t>(i)],
                                   step.poses[static_cast<std::size_t>(j)]);
          step.edge_index[static_cast<std::size_t>(i) * n + j] =
              static_cast<int>(step.edges.size());
          step.edges.push_back(e);
          step.neighbors[static_cast<std::size_t>(i)].push_back(j);
        }
      }
    }
    g.steps.push_back(std::move(step));
  }
  return g;
}

}  // namespace

GraphPair build_graphs(const data::SceneSample& sample, const GraphConfig& cfg) {
  const int th = sample.horizon.history_steps;
  const int total = sample.horizon.total_steps();
  GraphPair pair;
  pair.history = build_range(sample.agents, 0, th, cfg);
  pair.future = build_range(sample.agents, th, total, cfg);
  return pair;
}

SceneGraph build_history_graph(const data::HistoryWindow& window,
                               const GraphConfig& cfg) {
  return build_range(window.agents, 0, window.horizon.history_steps, cfg);
}

std::string adjacency_json(const SceneGraph& g) {
  nlohmann::json out;
  out["n_agents"] = g.n_agents;
  out["steps"] = nlohmann::json::array();
  for (const StepGraph& step : g.steps) {
    nlohmann::json s;
    s["edges"] = nlohmann::json::array();
    for (const Edge& e : step.edges) s["edges"].push_back({e.from, e.to});
    s["neighbors"] = step.neighbors;
    out["steps"].push_back(std::move(s));
  }
  return out.dump(2);
}

}  // namespace stgdat::graph
