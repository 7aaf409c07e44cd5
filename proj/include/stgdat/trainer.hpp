#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stgdat/context_maps.hpp"
#include "stgdat/data_io.hpp"
#include "stgdat/decoder_kinematic.hpp"
#include "stgdat/feature_extractor.hpp"
#include "stgdat/gdat.hpp"
#include "stgdat/generative_core.hpp"
#include "stgdat/optimizer.hpp"
#include "stgdat/scene_graph.hpp"

namespace stgdat::model {

// Model variants:
//   trajectory_only   - context embeddings replaced by zeros
//   uniform_attention - context on, all attention coefficients held constant
//   with_context      - context + learned attention, displacement outputs
//   kinematic         - with_context plus the bicycle constraint layer for
//                       vehicles
enum class Variant { trajectory_only, uniform_attention, with_context, kinematic };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  FeatureConfig features;
  GdatConfig gdat;
  LatentConfig latent;
  DecoderConfig decoder;
  graph::GraphConfig graph;
  LossConfig loss;
  data::HorizonConfig horizon;
  Variant variant = Variant::kinematic;
  std::uint64_t init_seed = 0;

  // Propagates the widths that must agree across modules (node width into
  // the graph network, decoder and latent encoder; horizon dt into the
  // bicycle step; the variant into the attention flag).
  void finalize();
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  // FNV-1a hash of the canonical JSON form, hex-encoded.
  std::string content_hash() const;
};

// The full prediction network plus its parameter store. Parameters for the
// history and future passes are shared (one feature extractor, one graph
// network).
struct Model {
  ModelConfig cfg;
  ParamStore store;
  FeatureExtractor features;
  Gdat gdat;
  GenerativeCore latent;
  Decoder decoder;

  static Model create(ModelConfig cfg);

  bool uses_context() const { return cfg.variant != Variant::trajectory_only; }
  bool kinematic_vehicles() const { return cfg.variant == Variant::kinematic; }
};

// Centroid of the last-history-step positions; every coordinate the network
// sees is expressed relative to this point.
Vec2 scene_anchor(const data::SceneSample& sample);
Vec2 scene_anchor(const data::HistoryWindow& window);

// Per-agent summary vectors for one step-graph sequence. `map` supplies the
// context crops and may be null (required null for trajectory_only).
std::vector<Tape::Ref> encode_graph(Tape& t, const Model& m,
                                    const graph::SceneGraph& g,
                                    const ctx::ContextMap* map, const Vec2& anchor,
                                    AttentionDump* dump = nullptr);

// Full three-term objective for a set of scenes assembled on one tape:
// history and future encodings through the shared extractor and graph
// network, per-agent posterior latents, rollouts, then reconstruction +
// KL + latent-discrepancy terms. eps_rng supplies the reparameterization
// draws and prior_rng the prior comparison rows; pass freshly seeded
// generators to make the value reproducible. Throws std::runtime_error if
// the forward pass turns non-finite.
Tape::Ref batch_loss(Tape& t, const Model& m,
                     const std::vector<const data::SceneSample*>& scenes,
                     const ctx::MapRegistry* registry, Rng& eps_rng,
                     Rng& prior_rng, LossBreakdown* breakdown = nullptr);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  nn::OptimizerConfig optimizer;  // learning rate 0.001 by default
  double clip_norm = 5.0;
  int patience = 10;  // early stop after this many epochs without val progress
  std::uint64_t seed = 0;
  int threads = 1;  // 1 is the reproducibility contract
  bool verbose = false;
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  LossBreakdown train_loss;  // averaged over batches
  double val_ade = 0.0;
  double val_fde = 0.0;
  double grad_norm = 0.0;  // pre-clip, averaged over batches
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  double best_val_ade = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  std::string metrics_jsonl() const;  // one JSON object per epoch line
};

// Mini-batch training of the three-term objective with Adam, global-norm
// clipping, per-epoch validation displacement error, and early stopping.
// The model is left holding the best-validation parameters. Throws
// std::runtime_error (naming the batch) if the loss turns non-finite, and
// std::invalid_argument on empty splits. `registry` may be null only for
// trajectory_only models.
TrainResult train(Model& m, const std::vector<data::SceneSample>& train_samples,
                  const std::vector<data::SceneSample>& val_samples,
                  const ctx::MapRegistry* registry, const TrainConfig& cfg);

struct PredictOptions {
  int k = 1;                 // number of trajectory sets
  bool zero_latent = true;   // true: z = 0 every draw; false: z ~ prior
  std::uint64_t seed = 0;
  enum class Uncertainty { none, gaussian, monte_carlo };
  Uncertainty uncertainty = Uncertainty::none;
  int particles = 100;       // monte_carlo only
  void validate() const;
};

struct StepGaussian {
  kin::GaussianBelief belief;  // over (x, y, psi, v, beta)
};

struct AgentPrediction {
  int agent_id = 0;
  data::AgentType type = data::AgentType::vehicle;
  std::vector<Track> samples;  // k tracks, world frame
  // Kinematic vehicles only, from the first draw:
  std::vector<StepGaussian> gaussians;          // uncertainty == gaussian
  std::vector<Track> particle_tracks;           // uncertainty == monte_carlo
};

struct Prediction {
  std::string scene_id;
  double dt = 0.0;
  std::vector<AgentPrediction> agents;
  std::string to_json() const;
};

// Inference from history only; future data cannot reach this path by
// construction (the argument type has none). Deterministic given
// (model, window, options).
Prediction predict(Model& m, const data::HistoryWindow& window,
                   const ctx::MapRegistry* registry, const PredictOptions& opt);

struct EvalReport {
  double ade = 0.0;
  double fde = 0.0;
  double cvm_ade = 0.0;  // constant-velocity baseline on the same windows
  double cvm_fde = 0.0;
  int n_agents = 0;
  std::string to_json() const;
};

// Deterministic (zero-latent) evaluation against ground-truth futures,
// with the constant-velocity baseline computed on the same windows.
EvalReport evaluate(Model& m, const std::vector<data::SceneSample>& samples,
                    const ctx::MapRegistry* registry);

// Checkpoint: JSON document holding format version, config, seed, content
// hash and every parameter tensor. Loading rebuilds the model from the
// stored config and overwrites its parameters; save -> load -> predict is
// bit-identical.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

// Per-scene context maps built from the training split only, plus a pooled
// fallback for scenes unseen at training time.
ctx::MapRegistry build_registry(const std::vector<data::SceneSample>& train_samples,
                                double cell_size, double margin);

}  // namespace stgdat::model
