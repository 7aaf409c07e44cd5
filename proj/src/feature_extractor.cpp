#include "stgdat/feature_extractor.hpp"

#include <stdexcept>

#include "stgdat/rng.hpp"

namespace stgdat::model {

void FeatureConfig::validate() const {
  if (state_dim <= 0 || state_hidden <= 0 || se_dim <= 0 || ce_dim <= 0 ||
      re_dim <= 0 || rel_hidden <= 0) {
    throw std::invalid_argument("feature dimensions must be positive");
  }
  if (crop_hw < 8) throw std::invalid_argument("crop must be at least 8 cells");
}

FeatureExtractor FeatureExtractor::create(ParamStore& store,
                                          const FeatureConfig& cfg, Rng& rng,
                                          const std::string& prefix) {
  cfg.validate();
  FeatureExtractor f;
  f.cfg = cfg;
  const std::vector<int> state_dims = {cfg.state_dim, cfg.state_hidden,
                                       cfg.state_hidden, cfg.state_hidden,
                                       cfg.se_dim};
  for (int type = 0; type < 3; ++type) {
    const auto name = data::to_string(static_cast<data::AgentType>(type));
    f.state_mlps[static_cast<std::size_t>(type)] =
        nn::Mlp::create(store, prefix + ".state." + name, state_dims,
                        Activation::leaky_relu, Activation::none, rng, cfg.leaky);
  }
  f.rel_mlp = nn::Mlp::create(
      store, prefix + ".rel",
      {graph::RelationFeature::kDim, cfg.rel_hidden, cfg.rel_hidden, cfg.re_dim},
      Activation::leaky_relu, Activation::none, rng, cfg.leaky);

  f.conv1 = nn::Conv2dLayer::create(store, prefix + ".ctx.conv1", 3, 3, 3, 16, 2, 1,
                                    Activation::leaky_relu, rng, cfg.leaky);
  f.conv2 = nn::Conv2dLayer::create(store, prefix + ".ctx.conv2", 3, 3, 16, 32, 2, 1,
                                    Activation::leaky_relu, rng, cfg.leaky);
  f.conv3 = nn::Conv2dLayer::create(store, prefix + ".ctx.conv3", 3, 3, 32, 32, 2, 1,
                                    Activation::leaky_relu, rng, cfg.leaky);
  int hw = cfg.crop_hw;
  for (int i = 0; i < 3; ++i) hw = (hw + 2 - 3) / 2 + 1;
  f.ctx_dense = nn::DenseLayer::create(store, prefix + ".ctx.dense", hw * hw * 32,
                                       cfg.ce_dim, Activation::none, rng);
  return f;
}

Tape::Ref FeatureExtractor::embed_state(Tape& t, Tape::Ref state,
                                        data::AgentType type) const {
  const int i = static_cast<int>(type);
  if (i < 0 || i > 2) throw std::invalid_argument("unknown agent type");
  if (t.value(state).cols() != cfg.state_dim || t.value(state).rows() != 1) {
    throw std::invalid_argument("embed_state: expected a 1 x " +
                                std::to_string(cfg.state_dim) + " row, got " +
                                t.value(state).shape_str());
  }
  return state_mlps[static_cast<std::size_t>(i)].apply(t, state);
}

Tape::Ref FeatureExtractor::embed_relation(Tape& t, Tape::Ref phi) const {
  if (t.value(phi).cols() != graph::RelationFeature::kDim) {
    throw std::invalid_argument("embed_relation: expected " +
                                std::to_string(graph::RelationFeature::kDim) +
                                " columns, got " + t.value(phi).shape_str());
  }
  return rel_mlp.apply(t, phi);
}

Tape::Ref FeatureExtractor::embed_context(Tape& t,
                                          const ctx::LocalContext& crop) const {
  if (crop.h != cfg.crop_hw || crop.w != cfg.crop_hw) {
    throw std::invalid_argument("embed_context: crop must be " +
                                std::to_string(cfg.crop_hw) + " cells square");
  }
  Tape::Ref x = t.constant(crop_tensor(crop));
  x = conv1.apply(t, x);
  x = conv2.apply(t, x);
  x = conv3.apply(t, x);
  x = t.reshape(x, {1, t.value(x).size()});
  return ctx_dense.apply(t, x);
}

Tape::Ref FeatureExtractor::node_attribute(Tape& t, Tape::Ref se,
                                           std::optional<Tape::Ref> ce) const {
  if (!ce.has_value()) {
    return t.concat_cols({se, t.constant(Tensor::zeros({1, cfg.ce_dim}))});
  }
  return t.concat_cols({se, *ce});
}

Tensor state_row(const graph::AgentPose& pose, const Vec2& anchor) {
  Tensor row = Tensor::zeros({1, 5});
  row[0] = pose.pos.x - anchor.x;
  row[1] = pose.pos.y - anchor.y;
  row[2] = pose.vel.x;
  row[3] = pose.vel.y;
  row[4] = pose.psi;
  return row;
}

Tensor phi_row(const graph::RelationFeature& phi) {
  Tensor row = Tensor::zeros({1, graph::RelationFeature::kDim});
  const auto a = phi.to_array();
  for (int i = 0; i < graph::RelationFeature::kDim; ++i) row[i] = a[static_cast<std::size_t>(i)];
  return row;
}

Tensor crop_tensor(const ctx::LocalContext& crop) {
  Tensor t = Tensor::zeros({1, crop.h, crop.w, 3});
  for (int r = 0; r < crop.h; ++r) {
    for (int c = 0; c < crop.w; ++c) {
      const int cell = crop.idx(r, c);
      const int base = (r * crop.w + c) * 3;
      t[base] = crop.density[static_cast<std::size_t>(cell)];
      t[base + 1] = crop.vel_fwd[static_cast<std::size_t>(cell)];
      t[base + 2] = crop.vel_lat[static_cast<std::size_t>(cell)];
    }
  }
  return t;
}

}  // namespace stgdat::model
