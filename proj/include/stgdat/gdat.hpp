#pragma once

#include <string>
#include <vector>

#include "stgdat/layers.hpp"
#include "stgdat/scene_graph.hpp"
#include "stgdat/tape.hpp"

namespace stgdat {
class Rng;
}

namespace stgdat::model {

struct GdatConfig {
  int n_heads = 4;
  int rounds = 2;     // message-passing rounds; edge update between rounds
  int node_dim = 64;  // fixed round to round
  int edge_dim = 16;  // fixed round to round
  double leaky = 0.2;
  bool uniform_attention = false;  // ablation: constant coefficients

  int temporal_head_dim() const { return node_dim / n_heads; }
  void validate() const;
};

// One attention distribution, captured for offline inspection.
struct AttentionRecord {
  std::string stage;  // "topological" or "temporal"
  int agent = 0;
  int step = 0;   // time step (topological) or -1 (temporal)
  int head = 0;
  int round = 0;  // topological only
  std::vector<int> targets;         // neighbor ids or attended steps
  std::vector<double> coefficients; // sums to 1
};

struct AttentionDump {
  std::vector<AttentionRecord> records;
  std::string to_json() const;
};

// Dual attention over a spatio-temporal graph. Per step, multi-head
// topological attention weights each neighbor by similarity of node
// attributes and smallness of the edge attribute:
//   alpha_ij = softmax_{j in N(i)} ( -(lambda_h |v_i - v_j|^2 + mu_h |e_ij|^2) )
// with e_ii = 0 and the prior coefficient fixed at 1. Heads share the node
// transform and differ in (lambda_h, mu_h); concatenated head outputs are
// projected back to node_dim. Between rounds the edge attributes are
// recomputed from the endpoint attributes. Finally, per-agent temporal
// attention pools each agent's per-step attributes into one summary vector;
// parameters are shared across time steps and rounds.
struct Gdat {
  GdatConfig cfg;
  std::string lambda_raw;  // (1 x n_heads), softplus gives the positive value
  std::string mu_raw;      // (1 x n_heads)
  std::string node_w;      // (node_dim x node_dim), shared across heads
  nn::DenseLayer head_proj;          // (n_heads * node_dim) -> node_dim
  nn::Mlp edge_mlp;                  // [v_i || v_j || e_ij] -> edge_dim
  std::vector<std::string> temp_score;  // per head, (node_dim x 1)
  std::vector<std::string> temp_proj;   // per head, (node_dim x head_dim)

  static Gdat create(ParamStore& store, const GdatConfig& cfg, Rng& rng,
                     const std::string& prefix = "gdat");

  // One topological round at one step: returns updated per-agent attributes.
  // `edges[e]` must parallel step.edges; pass round/dump for bookkeeping.
  std::vector<Tape::Ref> topological_attention(
      Tape& t, const graph::StepGraph& step, const std::vector<Tape::Ref>& nodes,
      const std::vector<Tape::Ref>& edges, int round = 0, int step_index = 0,
      AttentionDump* dump = nullptr) const;

  // Edge refresh from current endpoint attributes.
  std::vector<Tape::Ref> edge_update(Tape& t, const graph::StepGraph& step,
                                     const std::vector<Tape::Ref>& nodes,
                                     const std::vector<Tape::Ref>& edges) const;

  // Pools one agent's per-step attribute sequence into a (1 x node_dim)
  // summary; softmax runs over exactly the given steps.
  Tape::Ref temporal_attention(Tape& t, const std::vector<Tape::Ref>& sequence,
                               int agent = 0, AttentionDump* dump = nullptr) const;

  // Full stack over one graph: `rounds` topological passes with edge updates
  // in between, then temporal pooling. node_attrs[k][i] is agent i's
  // attribute at the graph's k-th step; edge_attrs[k][e] parallels
  // g.steps[k].edges. Returns one summary per agent.
  std::vector<Tape::Ref> encode(Tape& t, const graph::SceneGraph& g,
                                const std::vector<std::vector<Tape::Ref>>& node_attrs,
                                const std::vector<std::vector<Tape::Ref>>& edge_attrs,
                                AttentionDump* dump = nullptr) const;
};

}  // namespace stgdat::model
