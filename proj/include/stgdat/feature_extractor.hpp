#pragma once

#include <array>
#include <optional>
#include <string>

#include "stgdat/context_maps.hpp"
#include "stgdat/data_io.hpp"
#include "stgdat/layers.hpp"
#include "stgdat/scene_graph.hpp"
#include "stgdat/tape.hpp"

namespace stgdat {
class Rng;
}

namespace stgdat::model {

struct FeatureConfig {
  int state_dim = 5;        // anchored position (2), velocity (2), heading
  int state_hidden = 128;   // width of the three state-MLP hidden layers
  int se_dim = 32;          // state embedding
  int ce_dim = 32;          // context embedding; [SE || CE] is the node attr
  int re_dim = 16;          // relation embedding / edge attribute
  int rel_hidden = 64;      // relation MLP hidden width (two layers)
  int crop_hw = 32;         // local context crop cells per side
  double leaky = 0.2;

  int node_dim() const { return se_dim + ce_dim; }
  void validate() const;
};

// Raw-input embeddings: a state MLP per agent type (same-type agents share
// parameters), one relation MLP for all pairs, and a small strided conv stack
// over the 3-channel local context crop. All parameters are shared across
// time steps.
struct FeatureExtractor {
  FeatureConfig cfg;
  std::array<nn::Mlp, 3> state_mlps;  // indexed by AgentType enum value
  nn::Mlp rel_mlp;
  nn::Conv2dLayer conv1, conv2, conv3;
  nn::DenseLayer ctx_dense;

  static FeatureExtractor create(ParamStore& store, const FeatureConfig& cfg,
                                 Rng& rng, const std::string& prefix = "feat");

  // state row (1 x state_dim) -> SE (1 x se_dim)
  Tape::Ref embed_state(Tape& t, Tape::Ref state, data::AgentType type) const;
  // relation row (1 x 5) -> RE (1 x re_dim)
  Tape::Ref embed_relation(Tape& t, Tape::Ref phi) const;
  // local crop -> CE (1 x ce_dim); throws on a crop of the wrong size
  Tape::Ref embed_context(Tape& t, const ctx::LocalContext& crop) const;
  // v = [SE || CE]; without a context embedding the CE half is zero so the
  // downstream layout never changes (context-free ablation).
  Tape::Ref node_attribute(Tape& t, Tape::Ref se,
                           std::optional<Tape::Ref> ce) const;
};

// Input rows for the embeddings, as plain tensors.
Tensor state_row(const graph::AgentPose& pose, const Vec2& anchor);
Tensor phi_row(const graph::RelationFeature& phi);
// (1, H, W, 3) crop tensor: channels are density, forward flow, lateral flow.
Tensor crop_tensor(const ctx::LocalContext& crop);

}  // namespace stgdat::model
