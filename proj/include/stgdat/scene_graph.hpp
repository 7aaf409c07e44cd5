#pragma once

#include <array>
#include <string>
#include <vector>

#include "stgdat/data_io.hpp"
#include "stgdat/geometry.hpp"

namespace stgdat::graph {

struct GraphConfig {
  double d = 30.0;          // edge distance threshold, meters
  bool include_self = true; // i is a member of its own neighborhood
  void validate() const;    // throws unless d > 0
};

// One agent at one time step, as seen by the graph builder.
struct AgentPose {
  Vec2 pos{0.0, 0.0};
  Vec2 vel{0.0, 0.0};
  double psi = 0.0;
  data::AgentType type = data::AgentType::vehicle;
};

// Pairwise relation expressed in agent i's frame (i at the origin, heading
// along +x): where j is, how fast it moves relative to i, and how its heading
// differs. Invariant under any rigid motion applied to the whole scene.
struct RelationFeature {
  Vec2 rel_pos{0.0, 0.0};
  Vec2 rel_vel{0.0, 0.0};
  double rel_heading = 0.0;  // wrapped to (-pi, pi]

  static constexpr int kDim = 5;
  std::array<double, kDim> to_array() const {
    return {rel_pos.x, rel_pos.y, rel_vel.x, rel_vel.y, rel_heading};
  }
};

RelationFeature relation_feature(const AgentPose& i, const AgentPose& j);

struct Edge {
  int from = 0;  // the observing agent i
  int to = 0;    // the observed agent j
  RelationFeature phi;
};

// Node set is fixed; connectivity is re-evaluated independently per step.
struct StepGraph {
  std::vector<AgentPose> poses;
  std::vector<Edge> edges;                  // directed, from != to, dist <= d
  std::vector<std::vector<int>> neighbors;  // per node, self first if included
  std::vector<int> edge_index;              // n*n row-major, -1 where absent

  int edge_at(int from, int to) const {
    return edge_index[static_cast<std::size_t>(from) * poses.size() +
                      static_cast<std::size_t>(to)];
  }
};

struct SceneGraph {
  int n_agents = 0;
  std::vector<StepGraph> steps;
};

// History and future graphs split at the sample's history length.
struct GraphPair {
  SceneGraph history;
  SceneGraph future;
};

GraphPair build_graphs(const data::SceneSample& sample, const GraphConfig& cfg);

// Prediction-side entry point: only a history window can be turned into a
// history graph, so future data cannot reach inference.
SceneGraph build_history_graph(const data::HistoryWindow& window,
                               const GraphConfig& cfg);

// Debug dump of per-step adjacency.
std::string adjacency_json(const SceneGraph& g);

}  // namespace stgdat::graph
