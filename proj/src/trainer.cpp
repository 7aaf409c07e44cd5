#include "stgdat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "stgdat/rng.hpp"
#include "stgdat/synth.hpp"

namespace stgdat::model {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
T field(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

const ctx::ContextMap* context_for(const Model& m, const ctx::MapRegistry* registry,
                                   const std::string& scene_id) {
  if (!m.uses_context()) return nullptr;
  if (registry == nullptr) {
    throw std::invalid_argument("this model variant needs context maps");
  }
  return &registry->lookup(scene_id);
}

// Anchor-frame copy of the first n points of a trajectory.
std::vector<data::TrajPoint> anchored_history(const data::AgentTrajectory& traj,
                                              int n, const Vec2& anchor) {
  std::vector<data::TrajPoint> out(traj.points.begin(), traj.points.begin() + n);
  for (data::TrajPoint& p : out) {
    p.x -= anchor.x;
    p.y -= anchor.y;
  }
  return out;
}

// Everything one scene contributes to a batch objective.
struct SceneContrib {
  std::vector<Tape::Ref> position_rows;  // (1 x 2) anchor-frame predictions
  std::vector<double> truth_xy;          // matching anchor-frame truth
  std::vector<Tape::Ref> mus;
  std::vector<Tape::Ref> zs;
};

void training_forward(Tape& t, const Model& m, const data::SceneSample& s,
                      const ctx::ContextMap* map, Rng& eps_rng, SceneContrib& out) {
  const Vec2 anchor = scene_anchor(s);
  const graph::GraphPair pair = graph::build_graphs(s, m.cfg.graph);
  const auto vh = encode_graph(t, m, pair.history, map, anchor);
  const auto vf = encode_graph(t, m, pair.future, map, anchor);
  const int t_h = s.horizon.history_steps;
  const int t_f = s.horizon.future_steps;
  for (std::size_t a = 0; a < s.agents.size(); ++a) {
    const data::AgentTrajectory& traj = s.agents[a];
    const Tape::Ref mu = m.latent.posterior_mean(t, vh[a], vf[a]);
    const Tape::Ref z = m.latent.sample_posterior(t, mu, eps_rng);
    const Rollout roll =
        m.decoder.decode_rollout(t, vh[a], z, anchored_history(traj, t_h, anchor),
                                 traj.type, t_f, m.kinematic_vehicles());
    for (int k = 0; k < t_f; ++k) {
      out.position_rows.push_back(roll.steps[static_cast<std::size_t>(k)].position);
      const data::TrajPoint& p = traj.points[static_cast<std::size_t>(t_h + k)];
      out.truth_xy.push_back(p.x - anchor.x);
      out.truth_xy.push_back(p.y - anchor.y);
    }
    out.mus.push_back(mu);
    out.zs.push_back(z);
  }
}

Track cvm_from_history(const data::AgentTrajectory& traj, int t_h, int t_f) {
  Track hist;
  for (int k = 0; k < t_h; ++k) {
    hist.push_back(traj.points[static_cast<std::size_t>(k)].pos());
  }
  return synth::cvm_baseline(hist, t_f);
}

}  // namespace

Variant variant_from_string(const std::string& s) {
  if (s == "trajectory_only") return Variant::trajectory_only;
  if (s == "uniform_attention") return Variant::uniform_attention;
  if (s == "with_context") return Variant::with_context;
  if (s == "kinematic") return Variant::kinematic;
  throw std::invalid_argument("unknown model variant: " + s);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::trajectory_only: return "trajectory_only";
    case Variant::uniform_attention: return "uniform_attention";
    case Variant::with_context: return "with_context";
    case Variant::kinematic: return "kinematic";
  }
  throw std::invalid_argument("unknown model variant");
}

void ModelConfig::finalize() {
  gdat.node_dim = features.node_dim();
  gdat.edge_dim = features.re_dim;
  gdat.uniform_attention = (variant == Variant::uniform_attention);
  latent.summary_dim = gdat.node_dim;
  decoder.summary_dim = gdat.node_dim;
  decoder.latent_dim = latent.latent_dim;
  decoder.bicycle.dt = horizon.dt;
}

void ModelConfig::validate() const {
  features.validate();
  gdat.validate();
  latent.validate();
  decoder.validate();
  graph.validate();
  loss.validate();
  if (horizon.history_steps < 1 || horizon.future_steps < 1 || !(horizon.dt > 0.0)) {
    throw std::invalid_argument("ModelConfig: invalid horizon");
  }
  if (gdat.node_dim != features.node_dim() || latent.summary_dim != gdat.node_dim ||
      decoder.summary_dim != gdat.node_dim || decoder.latent_dim != latent.latent_dim) {
    throw std::invalid_argument("ModelConfig: module widths disagree (call finalize)");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["features"] = {{"state_dim", features.state_dim},
                   {"state_hidden", features.state_hidden},
                   {"se_dim", features.se_dim},
                   {"ce_dim", features.ce_dim},
                   {"re_dim", features.re_dim},
                   {"rel_hidden", features.rel_hidden},
                   {"crop_hw", features.crop_hw},
                   {"leaky", features.leaky}};
  j["gdat"] = {{"n_heads", gdat.n_heads},
               {"rounds", gdat.rounds},
               {"leaky", gdat.leaky}};
  j["latent"] = {{"latent_dim", latent.latent_dim},
                 {"hidden", latent.hidden},
                 {"leaky", latent.leaky}};
  j["decoder"] = {{"hidden", decoder.hidden},
                  {"bicycle",
                   {{"l_r", decoder.bicycle.l_r},
                    {"a_max", decoder.bicycle.a_max},
                    {"beta_dot_max", decoder.bicycle.beta_dot_max}}}};
  j["graph"] = {{"d", graph.d}, {"include_self", graph.include_self}};
  j["loss"] = {{"gamma", loss.gamma},
               {"alpha", loss.alpha},
               {"beta_w", loss.beta_w},
               {"bandwidth_floor", loss.bandwidth_floor},
               {"fixed_bandwidth", loss.fixed_bandwidth}};
  j["horizon"] = {{"history_steps", horizon.history_steps},
                  {"future_steps", horizon.future_steps},
                  {"dt", horizon.dt}};
  j["variant"] = to_string(variant);
  j["init_seed"] = init_seed;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  check_keys(j, {"features", "gdat", "latent", "decoder", "graph", "loss",
                 "horizon", "variant", "init_seed"},
             "model config");
  ModelConfig c;
  if (j.contains("features")) {
    const json& f = j.at("features");
    check_keys(f, {"state_dim", "state_hidden", "se_dim", "ce_dim", "re_dim",
                   "rel_hidden", "crop_hw", "leaky"},
               "features");
    c.features.state_dim = field(f, "state_dim", c.features.state_dim);
    c.features.state_hidden = field(f, "state_hidden", c.features.state_hidden);
    c.features.se_dim = field(f, "se_dim", c.features.se_dim);
    c.features.ce_dim = field(f, "ce_dim", c.features.ce_dim);
    c.features.re_dim = field(f, "re_dim", c.features.re_dim);
    c.features.rel_hidden = field(f, "rel_hidden", c.features.rel_hidden);
    c.features.crop_hw = field(f, "crop_hw", c.features.crop_hw);
    c.features.leaky = field(f, "leaky", c.features.leaky);
  }
  if (j.contains("gdat")) {
    const json& g = j.at("gdat");
    check_keys(g, {"n_heads", "rounds", "leaky"}, "gdat");
    c.gdat.n_heads = field(g, "n_heads", c.gdat.n_heads);
    c.gdat.rounds = field(g, "rounds", c.gdat.rounds);
    c.gdat.leaky = field(g, "leaky", c.gdat.leaky);
  }
  if (j.contains("latent")) {
    const json& l = j.at("latent");
    check_keys(l, {"latent_dim", "hidden", "leaky"}, "latent");
    c.latent.latent_dim = field(l, "latent_dim", c.latent.latent_dim);
    c.latent.hidden = field(l, "hidden", c.latent.hidden);
    c.latent.leaky = field(l, "leaky", c.latent.leaky);
  }
  if (j.contains("decoder")) {
    const json& d = j.at("decoder");
    check_keys(d, {"hidden", "bicycle"}, "decoder");
    c.decoder.hidden = field(d, "hidden", c.decoder.hidden);
    if (d.contains("bicycle")) {
      const json& b = d.at("bicycle");
      check_keys(b, {"l_r", "a_max", "beta_dot_max"}, "bicycle");
      c.decoder.bicycle.l_r = field(b, "l_r", c.decoder.bicycle.l_r);
      c.decoder.bicycle.a_max = field(b, "a_max", c.decoder.bicycle.a_max);
      c.decoder.bicycle.beta_dot_max =
          field(b, "beta_dot_max", c.decoder.bicycle.beta_dot_max);
    }
  }
  if (j.contains("graph")) {
    const json& g = j.at("graph");
    check_keys(g, {"d", "include_self"}, "graph");
    c.graph.d = field(g, "d", c.graph.d);
    c.graph.include_self = field(g, "include_self", c.graph.include_self);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, {"gamma", "alpha", "beta_w", "bandwidth_floor", "fixed_bandwidth"},
               "loss");
    c.loss.gamma = field(l, "gamma", c.loss.gamma);
    c.loss.alpha = field(l, "alpha", c.loss.alpha);
    c.loss.beta_w = field(l, "beta_w", c.loss.beta_w);
    c.loss.bandwidth_floor = field(l, "bandwidth_floor", c.loss.bandwidth_floor);
    c.loss.fixed_bandwidth = field(l, "fixed_bandwidth", c.loss.fixed_bandwidth);
  }
  if (j.contains("horizon")) {
    const json& h = j.at("horizon");
    check_keys(h, {"history_steps", "future_steps", "dt"}, "horizon");
    c.horizon.history_steps = field(h, "history_steps", c.horizon.history_steps);
    c.horizon.future_steps = field(h, "future_steps", c.horizon.future_steps);
    c.horizon.dt = field(h, "dt", c.horizon.dt);
  }
  c.variant = variant_from_string(field<std::string>(j, "variant", to_string(c.variant)));
  c.init_seed = field<std::uint64_t>(j, "init_seed", c.init_seed);
  c.finalize();
  c.validate();
  return c;
}

std::string ModelConfig::content_hash() const { return hex64(fnv1a(to_json())); }

Model Model::create(ModelConfig cfg) {
  cfg.finalize();
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(cfg.init_seed);
  m.features = FeatureExtractor::create(m.store, cfg.features, rng);
  m.gdat = Gdat::create(m.store, cfg.gdat, rng);
  m.latent = GenerativeCore::create(m.store, cfg.latent, rng);
  m.decoder = Decoder::create(m.store, cfg.decoder, rng);
  return m;
}

namespace {

Vec2 centroid_at_last_history(const std::vector<data::AgentTrajectory>& agents,
                              int history_steps) {
  if (agents.empty()) throw std::invalid_argument("scene_anchor: no agents");
  Vec2 c{0.0, 0.0};
  for (const data::AgentTrajectory& a : agents) {
    const auto i = static_cast<std::size_t>(history_steps - 1);
    if (a.points.size() <= i) {
      throw std::invalid_argument("scene_anchor: agent shorter than the history");
    }
    c.x += a.points[i].x;
    c.y += a.points[i].y;
  }
  c.x /= static_cast<double>(agents.size());
  c.y /= static_cast<double>(agents.size());
  return c;
}

}  // namespace

Vec2 scene_anchor(const data::SceneSample& sample) {
  return centroid_at_last_history(sample.agents, sample.horizon.history_steps);
}

Vec2 scene_anchor(const data::HistoryWindow& window) {
  return centroid_at_last_history(window.agents, window.horizon.history_steps);
}

std::vector<Tape::Ref> encode_graph(Tape& t, const Model& m,
                                    const graph::SceneGraph& g,
                                    const ctx::ContextMap* map, const Vec2& anchor,
                                    AttentionDump* dump) {
  if (m.uses_context() && map == nullptr) {
    throw std::invalid_argument("encode_graph: this model variant needs a context map");
  }
  const std::size_t n_steps = g.steps.size();
  std::vector<std::vector<Tape::Ref>> nodes(n_steps);
  std::vector<std::vector<Tape::Ref>> edges(n_steps);
  const int hw = m.cfg.features.crop_hw;
  for (std::size_t k = 0; k < n_steps; ++k) {
    const graph::StepGraph& step = g.steps[k];
    nodes[k].reserve(step.poses.size());
    for (const graph::AgentPose& pose : step.poses) {
      const Tape::Ref se =
          m.features.embed_state(t, t.constant(state_row(pose, anchor)), pose.type);
      std::optional<Tape::Ref> ce;
      if (m.uses_context()) {
        ce = m.features.embed_context(
            t, ctx::extract_local(*map, pose.pos, pose.psi, hw, hw));
      }
      nodes[k].push_back(m.features.node_attribute(t, se, ce));
    }
    edges[k].reserve(step.edges.size());
    for (const graph::Edge& e : step.edges) {
      edges[k].push_back(m.features.embed_relation(t, t.constant(phi_row(e.phi))));
    }
  }
  return m.gdat.encode(t, g, nodes, edges, dump);
}

Tape::Ref batch_loss(Tape& t, const Model& m,
                     const std::vector<const data::SceneSample*>& scenes,
                     const ctx::MapRegistry* registry, Rng& eps_rng,
                     Rng& prior_rng, LossBreakdown* breakdown) {
  if (scenes.empty()) throw std::invalid_argument("batch_loss: no scenes");
  SceneContrib c;
  for (const data::SceneSample* s : scenes) {
    training_forward(t, m, *s, context_for(m, registry, s->scene_id), eps_rng, c);
  }
  Tensor truth({static_cast<int>(c.truth_xy.size() / 2), 2});
  truth.data.assign(c.truth_xy.begin(), c.truth_xy.end());
  const Tape::Ref pred = t.stack_rows(c.position_rows);
  const Tape::Ref zmat = t.stack_rows(c.zs);
  // Catch divergence before the bandwidth heuristic trips over NaNs.
  if (!t.value(zmat).all_finite() || !t.value(pred).all_finite()) {
    throw std::runtime_error("batch_loss: non-finite forward pass");
  }
  const Tensor prior =
      m.latent.sample_prior_rows(static_cast<int>(c.zs.size()), prior_rng);
  return total_loss(t, pred, truth, c.mus, zmat, prior, m.cfg.loss, breakdown);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (threads < 1) throw std::invalid_argument("TrainConfig: threads must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rate must be positive");
  }
}

std::string TrainResult::metrics_jsonl() const {
  std::ostringstream out;
  for (const EpochMetrics& e : epochs) {
    json j;
    j["epoch"] = e.epoch;
    j["recon"] = e.train_loss.recon;
    j["kl"] = e.train_loss.kl;
    j["mmd"] = e.train_loss.mmd;
    j["total"] = e.train_loss.total;
    j["val_ade"] = e.val_ade;
    j["val_fde"] = e.val_fde;
    j["grad_norm"] = e.grad_norm;
    j["improved"] = e.improved;
    out << j.dump() << "\n";
  }
  return out.str();
}

TrainResult train(Model& m, const std::vector<data::SceneSample>& train_samples,
                  const std::vector<data::SceneSample>& val_samples,
                  const ctx::MapRegistry* registry, const TrainConfig& cfg) {
  cfg.validate();
  if (train_samples.empty() || val_samples.empty()) {
    throw std::invalid_argument("train: empty train or validation split");
  }
  const Rng root(cfg.seed);
  TrainResult res;

  std::vector<Tensor> best;
  auto snapshot = [&] {
    best.clear();
    for (std::size_t i = 0; i < m.store.count(); ++i) {
      best.push_back(m.store.at_index(static_cast<int>(i)).value);
    }
  };
  auto restore = [&] {
    for (std::size_t i = 0; i < best.size(); ++i) {
      m.store.at_index(static_cast<int>(i)).value = best[i];
    }
  };

  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int since_best = 0;

  nn::OptimizerConfig opt = cfg.optimizer;
  opt.clip_norm = cfg.clip_norm;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = root.derive("shuffle." + std::to_string(epoch));
    Rng eps_rng = root.derive("eps." + std::to_string(epoch));
    Rng prior_rng = root.derive("prior." + std::to_string(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(
                    shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }

    EpochMetrics em;
    em.epoch = epoch;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Tape t(&m.store);
      std::vector<const data::SceneSample*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&train_samples[order[i]]);
      }
      LossBreakdown bd;
      Tape::Ref loss;
      try {
        loss = batch_loss(t, m, batch, registry, eps_rng, prior_rng, &bd);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches) + ": " +
                                 e.what());
      }
      if (!std::isfinite(bd.total)) {
        throw std::runtime_error("train: non-finite loss in epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batches));
      }
      t.backward(loss);
      em.grad_norm += nn::global_grad_norm(m.store);
      nn::optimizer_step(m.store, opt);
      em.train_loss.recon += bd.recon;
      em.train_loss.kl += bd.kl;
      em.train_loss.mmd += bd.mmd;
      em.train_loss.total += bd.total;
      ++batches;
    }
    em.train_loss.recon /= batches;
    em.train_loss.kl /= batches;
    em.train_loss.mmd /= batches;
    em.train_loss.total /= batches;
    em.grad_norm /= batches;

    const EvalReport val = evaluate(m, val_samples, registry);
    em.val_ade = val.ade;
    em.val_fde = val.fde;
    if (val.ade < res.best_val_ade) {
      res.best_val_ade = val.ade;
      res.best_epoch = epoch;
      em.improved = true;
      since_best = 0;
      snapshot();
    } else {
      ++since_best;
    }
    res.epochs.push_back(em);
    if (since_best >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  if (!best.empty()) restore();
  return res;
}

void PredictOptions::validate() const {
  if (k < 1) throw std::invalid_argument("PredictOptions: k must be >= 1");
  if (particles < 1) throw std::invalid_argument("PredictOptions: particles must be >= 1");
}

std::string Prediction::to_json() const {
  json j;
  j["scene_id"] = scene_id;
  j["dt"] = dt;
  json agents_j = json::array();
  for (const AgentPrediction& a : agents) {
    json aj;
    aj["agent_id"] = a.agent_id;
    aj["type"] = data::to_string(a.type);
    json samples_j = json::array();
    for (const Track& tr : a.samples) {
      json tj = json::array();
      for (const Vec2& p : tr) tj.push_back({p.x, p.y});
      samples_j.push_back(tj);
    }
    aj["samples"] = samples_j;
    if (!a.gaussians.empty()) {
      aj["mode"] = "gaussian";
      json gj = json::array();
      for (const StepGaussian& g : a.gaussians) {
        json one;
        one["mean"] = std::vector<double>(g.belief.mean.data(), g.belief.mean.data() + 5);
        std::vector<double> cov(25);
        for (int r = 0; r < 5; ++r) {
          for (int col = 0; col < 5; ++col) {
            cov[static_cast<std::size_t>(r * 5 + col)] = g.belief.cov(r, col);
          }
        }
        one["cov"] = cov;
        gj.push_back(one);
      }
      aj["gaussians"] = gj;
    } else if (!a.particle_tracks.empty()) {
      aj["mode"] = "mc";
      json pj = json::array();
      for (const Track& tr : a.particle_tracks) {
        json tj = json::array();
        for (const Vec2& p : tr) tj.push_back({p.x, p.y});
        pj.push_back(tj);
      }
      aj["particles"] = pj;
    } else {
      aj["mode"] = "none";
    }
    agents_j.push_back(aj);
  }
  j["agents"] = agents_j;
  return j.dump(2);
}

Prediction predict(Model& m, const data::HistoryWindow& window,
                   const ctx::MapRegistry* registry, const PredictOptions& opt) {
  opt.validate();
  if (window.agents.empty()) throw std::invalid_argument("predict: empty window");
  if (window.horizon.history_steps != m.cfg.horizon.history_steps ||
      window.horizon.dt != m.cfg.horizon.dt) {
    throw std::invalid_argument("predict: window horizon does not match the model");
  }
  const ctx::ContextMap* map = context_for(m, registry, window.scene_id);
  const Vec2 anchor = scene_anchor(window);
  const graph::SceneGraph g = graph::build_history_graph(window, m.cfg.graph);
  const int t_f = m.cfg.horizon.future_steps;

  Tape t(&m.store);
  const auto vh = encode_graph(t, m, g, map, anchor);

  const Rng root(opt.seed);
  Rng z_rng = root.derive("z");
  Rng mc_rng = root.derive("mc");

  Prediction out;
  out.scene_id = window.scene_id;
  out.dt = window.horizon.dt;

  for (std::size_t a = 0; a < window.agents.size(); ++a) {
    const data::AgentTrajectory& traj = window.agents[a];
    AgentPrediction ap;
    ap.agent_id = traj.agent_id;
    ap.type = traj.type;
    const auto hist =
        anchored_history(traj, window.horizon.history_steps, anchor);

    for (int draw = 0; draw < opt.k; ++draw) {
      const Tensor zt = opt.zero_latent ? Tensor::zeros({1, m.cfg.latent.latent_dim})
                                        : m.latent.sample_prior(z_rng);
      const Rollout roll = m.decoder.decode_rollout(
          t, vh[a], t.constant(zt), hist, traj.type, t_f, m.kinematic_vehicles());
      Track track;
      for (const RolloutStep& s : roll.steps) {
        const Tensor& p = t.value(s.position);
        track.push_back({p[0] + anchor.x, p[1] + anchor.y});
      }
      ap.samples.push_back(std::move(track));

      if (draw == 0 && roll.kinematic &&
          opt.uncertainty != PredictOptions::Uncertainty::none) {
        // Initial state: the last observed step, world frame.
        kin::VehicleState s0 = roll.states.front();
        s0.x += anchor.x;
        s0.y += anchor.y;
        if (opt.uncertainty == PredictOptions::Uncertainty::gaussian) {
          kin::GaussianBelief b;
          b.mean = s0.vec();
          for (const RolloutStep& s : roll.steps) {
            Eigen::Matrix2d cov_u = Eigen::Matrix2d::Zero();
            cov_u(0, 0) = s.sigma_a * s.sigma_a;
            cov_u(1, 1) = s.sigma_beta_dot * s.sigma_beta_dot;
            b = kin::propagate_gaussian(b, s.mu_u, cov_u, m.cfg.decoder.bicycle);
            ap.gaussians.push_back({b});
          }
        } else {
          std::vector<kin::VehicleState> particles(
              static_cast<std::size_t>(opt.particles), s0);
          std::vector<Track> tracks(particles.size());
          for (const RolloutStep& s : roll.steps) {
            Eigen::Matrix2d cov_u = Eigen::Matrix2d::Zero();
            cov_u(0, 0) = s.sigma_a * s.sigma_a;
            cov_u(1, 1) = s.sigma_beta_dot * s.sigma_beta_dot;
            kin::propagate_monte_carlo(particles, s.mu_u, cov_u, mc_rng,
                                       m.cfg.decoder.bicycle);
            for (std::size_t p = 0; p < particles.size(); ++p) {
              tracks[p].push_back(particles[p].pos());
            }
          }
          ap.particle_tracks = std::move(tracks);
        }
      }
    }
    out.agents.push_back(std::move(ap));
  }
  return out;
}

std::string EvalReport::to_json() const {
  json j;
  j["ade"] = ade;
  j["fde"] = fde;
  j["cvm_ade"] = cvm_ade;
  j["cvm_fde"] = cvm_fde;
  j["n_agents"] = n_agents;
  return j.dump();
}

EvalReport evaluate(Model& m, const std::vector<data::SceneSample>& samples,
                    const ctx::MapRegistry* registry) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  PredictOptions opt;  // zero-latent single draw
  EvalReport rep;
  for (const data::SceneSample& s : samples) {
    const data::HistoryWindow w = data::history_only(s);
    const TrackSet truth = data::future_positions(s);
    const Prediction pred = predict(m, w, registry, opt);
    for (std::size_t a = 0; a < s.agents.size(); ++a) {
      const auto [ade, fde] =
          data::ade_fde(TrackSet{pred.agents[a].samples[0]}, TrackSet{truth[a]});
      const Track cvm = cvm_from_history(s.agents[a], s.horizon.history_steps,
                                         s.horizon.future_steps);
      const auto [cade, cfde] = data::ade_fde(TrackSet{cvm}, TrackSet{truth[a]});
      rep.ade += ade;
      rep.fde += fde;
      rep.cvm_ade += cade;
      rep.cvm_fde += cfde;
      ++rep.n_agents;
    }
  }
  rep.ade /= rep.n_agents;
  rep.fde /= rep.n_agents;
  rep.cvm_ade /= rep.n_agents;
  rep.cvm_fde /= rep.n_agents;
  return rep;
}

void save_checkpoint(const Model& m, const std::string& path) {
  json j;
  j["format_version"] = 1;
  j["config"] = json::parse(m.cfg.to_json());
  j["seed"] = m.cfg.init_seed;
  j["config_hash"] = m.cfg.content_hash();
  json params;
  for (const std::string& name : m.store.names()) {
    const Tensor& v = m.store.at(name).value;
    params[name] = {{"shape", v.shape}, {"values", v.data}};
  }
  j["params"] = params;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << j.dump();
  out << "\n";
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_checkpoint: " + path + " is not valid JSON: " +
                             e.what());
  }
  if (field<int>(j, "format_version", -1) != 1) {
    throw std::runtime_error("load_checkpoint: unsupported format version");
  }
  Model m = Model::create(ModelConfig::from_json(j.at("config").dump()));
  const json& params = j.at("params");
  for (const std::string& name : m.store.names()) {
    if (!params.contains(name)) {
      throw std::runtime_error("load_checkpoint: missing parameter " + name);
    }
    const json& p = params.at(name);
    Tensor& v = m.store.at(name).value;
    const auto shape = p.at("shape").get<std::vector<int>>();
    if (shape != v.shape) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    }
    const auto values = p.at("values").get<std::vector<double>>();
    if (values.size() != v.data.size()) {
      throw std::runtime_error("load_checkpoint: size mismatch for " + name);
    }
    v.data.assign(values.begin(), values.end());
  }
  return m;
}

ctx::MapRegistry build_registry(const std::vector<data::SceneSample>& train_samples,
                                double cell_size, double margin) {
  if (train_samples.empty()) {
    throw std::invalid_argument("build_registry: no training samples");
  }
  std::map<std::string, std::vector<data::AgentTrajectory>> by_scene;
  std::vector<data::AgentTrajectory> all;
  for (const data::SceneSample& s : train_samples) {
    auto& bucket = by_scene[s.scene_id];
    bucket.insert(bucket.end(), s.agents.begin(), s.agents.end());
    all.insert(all.end(), s.agents.begin(), s.agents.end());
  }
  ctx::MapRegistry reg;
  for (const auto& [scene_id, trajs] : by_scene) {
    reg.by_scene.emplace(scene_id,
                         ctx::build_global(trajs, ctx::fit_bounds(trajs, margin),
                                           cell_size, "train"));
  }
  reg.pooled = ctx::build_global(all, ctx::fit_bounds(all, margin), cell_size, "train");
  return reg;
}

}  // namespace stgdat::model
